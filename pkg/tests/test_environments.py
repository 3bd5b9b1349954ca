import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stoprl.environments import (
    NModelConfig, QueueEnv, ServerAllocConfig, State, config_from_dict, config_to_dict,
    load_preset, nmodel_step, nmodel_step_u, reset, server_alloc_reset, server_alloc_step,
    server_alloc_step_u, stabilizability_check,
)
from stoprl.errors import ConfigError, ContractViolation


def test_init_max_zero_gives_empty_queues():
    cfg = ServerAllocConfig((0.2, 0.1), (0.3, 0.8), (1, 1), init_max=0)
    assert server_alloc_reset(cfg, 3).queues.tolist() == [0, 0]


def test_reset_is_deterministic(sa_medium):
    assert server_alloc_reset(sa_medium, 9) == server_alloc_reset(sa_medium, 9)


def test_reset_seed1_fixture(sa_medium):
    s = server_alloc_reset(sa_medium, 1)
    assert s.queues.tolist() == [5, 5]
    assert s.flags.tolist() == [1, 1]


def test_service_then_arrival_ordering(sa_medium):
    s = State([1, 0], [1, 1])
    # u = [service, arrival0, arrival1, flag0, flag1]
    nxt, cost = server_alloc_step_u(s, 0, sa_medium, [0.0, 0.99, 0.0, 0.0, 0.0])
    assert nxt.queues.tolist() == [0, 1]
    assert cost == 1.0


def test_empty_system_without_arrivals(sa_medium):
    nxt, cost = server_alloc_step_u(State([0, 0], [1, 1]), 1, sa_medium, [0.0, 0.99, 0.99, 0.0, 0.0])
    assert nxt.queues.tolist() == [0, 0] and cost == 0.0


def test_disconnected_queue_is_not_served(sa_medium):
    s = State([2, 3], [1, 0])
    for u_arr in ([0.99, 0.99], [0.0, 0.0]):
        nxt, cost = server_alloc_step_u(s, 1, sa_medium, [0.0, *u_arr, 0.0, 0.0])
        assert nxt.queues[1] >= 3
        assert cost == 5 + sum(u < r for u, r in zip(u_arr, sa_medium.arrival_rates))


def test_out_of_range_action(sa_medium):
    with pytest.raises(ContractViolation):
        server_alloc_step(State([0, 0], [1, 1]), 2, sa_medium, 0)
    with pytest.raises(ContractViolation):
        nmodel_step(State([0, 0]), 2, load_preset("nmodel-veryhigh-2"), 0)


def _event_u(cfg, k):
    """Uniform that lands in the middle of event k's slice of the rate vector."""
    r = np.array(cfg.rates)
    lo = r[:k].sum()
    return [(lo + r[k] / 2) / r.sum()]


def test_nmodel_events():
    cfg = load_preset("nmodel-veryhigh-2")
    nxt, c = nmodel_step_u(State([0, 0]), 0, cfg, _event_u(cfg, 0))
    assert nxt.queues.tolist() == [1, 0] and c == 3.0
    nxt, c = nmodel_step_u(State([1, 1]), 1, cfg, _event_u(cfg, 4))
    assert nxt.queues.tolist() == [1, 0] and c == 3.0
    nxt, c = nmodel_step_u(State([0, 5]), 0, cfg, _event_u(cfg, 3))
    assert nxt.queues.tolist() == [0, 5] and c == 5.0


def test_stabilizability():
    assert stabilizability_check(load_preset("sa-medium"))
    assert stabilizability_check(load_preset("sa-veryhigh-faulty"))
    assert not stabilizability_check(ServerAllocConfig((0.5, 0.5), (0.5, 0.5), (1, 1)))
    with pytest.raises(ConfigError):
        stabilizability_check(ServerAllocConfig((0.1,), (0.0,), (1,)))


def test_presets():
    m = load_preset("sa-medium")
    assert m.arrival_rates == (0.2, 0.1) and m.service_probs == (0.3, 0.8) and m.connect_probs == (1, 1)
    assert load_preset("sa-high-faulty").connect_probs == (0.95, 0.5)
    assert load_preset("sa-veryhigh-faulty").connect_probs == (0.7, 0.5)
    ten = load_preset("sa-10queue")
    assert ten.num_queues == 10
    assert ten.arrival_rates == (0.05, 0.01, 0.2, 0.4, 0.05, 0.01, 0.02, 0.01, 0.015, 0.01)
    assert ten.service_probs == (0.9, 0.85, 0.95, 0.75, 0.9, 0.9, 0.85, 0.9, 0.9, 0.85)
    n = load_preset("nmodel-veryhigh-2")
    assert n.rates == (0.9, 0.8, 1.0, 0.9, 0.8) and n.holding_costs == (3.0, 1.0)
    with pytest.raises(KeyError):
        load_preset("nope")


def test_invalid_configs():
    with pytest.raises(ConfigError):
        ServerAllocConfig((1.2,), (0.5,), (1,))
    with pytest.raises(ConfigError):
        ServerAllocConfig((0.1, 0.1), (0.5,), (1,))
    with pytest.raises(ConfigError):
        NModelConfig(0, 1, 1, 1, 1)


def test_state_rejects_negative_queues():
    with pytest.raises(ContractViolation):
        State([-1, 0], [1, 1])


def test_config_roundtrip():
    for name in ("sa-medium", "nmodel-veryhigh-2"):
        cfg = load_preset(name)
        assert config_from_dict(config_to_dict(cfg)) == cfg


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), name=st.sampled_from(["sa-medium", "sa-veryhigh-faulty", "sa-10queue"]))
def test_server_alloc_increments(seed, name):
    cfg = load_preset(name)
    rng = np.random.default_rng(seed)
    s = reset(cfg, rng)
    for _ in range(200):
        nxt, c = server_alloc_step(s, int(rng.integers(cfg.num_queues)), cfg, rng)
        d = int(nxt.queues.sum() - s.queues.sum())
        assert -1 <= d <= cfg.num_queues
        assert (nxt.queues >= 0).all() and c == nxt.queues.sum()
        s = nxt


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_nmodel_single_event(seed):
    cfg = load_preset("nmodel-veryhigh-2")
    rng = np.random.default_rng(seed)
    s = reset(cfg, rng)
    for _ in range(200):
        nxt, _ = nmodel_step(s, int(rng.integers(2)), cfg, rng)
        assert np.abs(nxt.queues - s.queues).sum() <= 1
        assert (nxt.queues >= 0).all()
        s = nxt


def test_step_determinism(sa_medium):
    s = State([3, 4], [1, 1])
    assert server_alloc_step(s, 0, sa_medium, 5) == server_alloc_step(s, 0, sa_medium, 5)


def test_arrival_frequency():
    # with every connection down nothing departs, so each increment is an arrival
    cfg = ServerAllocConfig((0.2, 0.1), (0.3, 0.8), (0.0, 0.0), init_max=0)
    from stoprl import kernels

    env = QueueEnv(cfg)
    rng = np.random.default_rng(0)
    env.reset(rng)
    n = 100_000
    states, _, _, _ = kernels.simulate(cfg, env.state, env.draw_uniforms(rng, n), kernels.POLICY_MAXWEIGHT)
    freq = states[-1, :2] / n
    lam = np.array(cfg.arrival_rates)
    se = np.sqrt(lam * (1 - lam) / n)
    assert np.all(np.abs(freq - lam) < 3 * se)
