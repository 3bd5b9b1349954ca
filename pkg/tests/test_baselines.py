import numpy as np
import pytest

from stoprl.arppo import MethodConfig
from stoprl.baselines import (
    TrainingWheelsState, cmu_action, maxweight_action, run_fixed_policy, train_ppo_tw,
    training_wheels_select,
)
from stoprl.environments import State, load_preset
from stoprl.errors import ConfigError


def test_maxweight_examples():
    p = (0.3, 0.8)
    assert maxweight_action(State([5, 2], [1, 1]), p, True) == 1
    assert maxweight_action(State([5, 2], [1, 0]), p, True) == 0
    assert maxweight_action(State([0, 0], [1, 1]), p, True) == 0
    assert maxweight_action(State([5, 2], [0, 0]), p, False) == 1


def test_maxweight_never_serves_empty_when_work_exists(rng):
    p = np.array([0.3, 0.8, 0.5])
    for _ in range(500):
        q = rng.integers(0, 4, size=3)
        a = maxweight_action(State(q, [1, 1, 1]), p)
        if q.any():
            assert q[a] > 0


def test_cmu_examples():
    assert cmu_action(State([1, 1]), (1, 1), (0.3, 0.8)) == 1
    assert cmu_action(State([1, 0]), (1, 1), (0.3, 0.8)) == 0
    assert cmu_action(State([1, 1]), (3, 1), (0.9, 0.8)) == 0
    assert cmu_action(State([0, 0]), (3, 1), (0.9, 0.8)) == 0


def _rl(state):
    return 1


def test_training_wheels_thresholds():
    p = (0.3, 0.8)
    a, tw = training_wheels_select(_rl, State([101, 0], [1, 1]), TrainingWheelsState("rl"), p)
    assert tw.mode == "safe" and a == 0
    a, tw = training_wheels_select(_rl, State([49, 0], [1, 1]), TrainingWheelsState("safe"), p)
    assert tw.mode == "rl" and a == 1
    a, tw = training_wheels_select(_rl, State([75, 0], [1, 1]), TrainingWheelsState("safe"), p)
    assert tw.mode == "safe" and a == 0
    a, tw = training_wheels_select(_rl, State([75, 0], [1, 1]), TrainingWheelsState("rl"), p)
    assert tw.mode == "rl" and a == 1


def test_training_wheels_hysteresis(rng):
    tw = TrainingWheelsState()
    longest = 0
    for _ in range(2000):
        longest = max(0, longest + int(rng.integers(-3, 4)))
        prev = tw.mode
        _, tw = training_wheels_select(_rl, State([longest, 0], [1, 1]), tw, (0.5, 0.5))
        if tw.mode != prev:
            assert (longest > 100) if tw.mode == "safe" else (longest < 50)


def test_training_wheels_validation():
    with pytest.raises(ConfigError):
        TrainingWheelsState(upper=10, lower=10)


def test_fixed_policy_runs_are_deterministic():
    cfg = load_preset("sa-medium")
    a = run_fixed_policy(cfg, MethodConfig.for_method("maxweight"), 3000, 4)
    b = run_fixed_policy(cfg, MethodConfig.for_method("maxweight"), 3000, 4)
    assert np.array_equal(a.true_costs, b.true_costs)
    assert a.destabilizing.sum() == 0


def test_nmodel_maxweight_is_cmu():
    cfg = load_preset("nmodel-veryhigh-2")
    a = run_fixed_policy(cfg, MethodConfig.for_method("maxweight"), 2000, 1)
    b = run_fixed_policy(cfg, MethodConfig.for_method("cmu"), 2000, 1)
    assert np.array_equal(a.actions, b.actions)


def test_ppo_tw_excludes_safe_steps():
    cfg = load_preset("sa-medium")
    m = MethodConfig.for_method("ppo_tw", tw_upper=6, tw_lower=3, rollout_len=50)
    r = train_ppo_tw(cfg, m, 3000, 0)
    assert r.steps == 3000
    # each update consumed 50 RL-mode steps, so updates <= RL steps / 50 < total / 50
    assert 0 < len(r.updates) < 3000 // 50
