"""Reference schedulers: MaxWeight, c-mu rule, uniform random, and PPO with training wheels."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .arppo import (
    Agent,
    AvgCostEstimate,
    MethodConfig,
    RolloutBuffer,
    TrainResult,
    _Recorder,
    estimate_advantages,
    fill_buffer,
    ppo_update,
    trial_streams,
    update_eta,
)
from .environments import NMODEL, SERVER_ALLOC, EnvConfig, QueueEnv, State
from .errors import ConfigError
from .policy_net import mlp_forward, sample_from_uniform
from .shaping import shaped_cost
from .transforms import transform_array


def maxweight_action(state: State, service_probs, use_flags: bool = True) -> int:
    """argmax_i flag_i * p_i * Q_i, lowest index on ties."""
    q = np.asarray(state.queues, dtype=np.float64)
    w = np.asarray(service_probs, dtype=np.float64) * q
    if use_flags and len(state.flags):
        w = w * state.flags
    return int(np.argmax(w))


def cmu_action(state: State, holding_costs, service_rates) -> int:
    """Among non-empty queues serve the one maximising cost * rate; queue 0 if all empty."""
    q = np.asarray(state.queues)
    w = np.asarray(holding_costs, dtype=np.float64) * np.asarray(service_rates, dtype=np.float64)
    w = np.where(q > 0, w, -np.inf)
    if np.all(q == 0):
        return 0
    return int(np.argmax(w))


def safe_action(state: State, config: EnvConfig) -> int:
    """The known-dynamics stabilising policy for ``config``'s network."""
    if config.kind == SERVER_ALLOC:
        return maxweight_action(state, config.service_probs, use_flags=True)
    return cmu_action(state, config.holding_costs, (config.mu2, config.mu3))


@dataclass(frozen=True)
class TrainingWheelsState:
    mode: str = "rl"
    upper: int = 100
    lower: int = 50

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ConfigError("training wheels need lower < upper")
        if self.mode not in ("rl", "safe"):
            raise ConfigError(f"mode must be 'rl' or 'safe', got {self.mode!r}")


def next_mode(tw: TrainingWheelsState, state: State) -> TrainingWheelsState:
    longest = int(np.max(state.queues))
    if tw.mode == "rl" and longest > tw.upper:
        return replace(tw, mode="safe")
    if tw.mode == "safe" and longest < tw.lower:
        return replace(tw, mode="rl")
    return tw


def training_wheels_select(rl_policy, state: State, tw: TrainingWheelsState, service_probs):
    """Pick an action and the updated mode.

    ``rl_policy(state)`` is called only in RL mode. Safe-mode steps use
    MaxWeight and must not be added to the PPO rollout buffer.
    """
    tw = next_mode(tw, state)
    if tw.mode == "safe":
        return maxweight_action(state, service_probs, use_flags=True), tw
    return rl_policy(state), tw


def _fixed_kind(method: str, config: EnvConfig) -> int:
    if method == "random":
        return kernels.POLICY_RANDOM
    if method == "cmu" or (method == "maxweight" and config.kind == NMODEL):
        # MaxWeight stand-in on the N-model is the c-mu rule
        return kernels.POLICY_CMU
    if method == "maxweight":
        return kernels.POLICY_MAXWEIGHT
    raise ConfigError(f"{method!r} is not a fixed policy")


def run_fixed_policy(env_config: EnvConfig, method: MethodConfig, steps: int, seed: int,
                     backend=None, chunk: int = 100_000) -> TrainResult:
    """Roll out a non-learning scheduler on the same seeded streams as the learners."""
    env_rng, _, _ = trial_streams(seed)
    env = QueueEnv(env_config)
    env.reset(env_rng)
    kind = _fixed_kind(method.method, env_config)
    rec = _Recorder(steps, env_config.num_queues)
    spec = method.shaping
    buf = RolloutBuffer(min(chunk, max(steps, 1)))
    remaining = steps
    nq = env_config.num_queues
    while remaining > 0:
        n = min(buf.capacity, remaining)
        u = env.draw_uniforms(env_rng, n)
        states, actions, logps, costs = kernels.simulate(env_config, env.state, u, kind, backend=backend)
        buf.clear()
        fill_buffer(buf, env_config, states, actions, logps, costs, spec, method.transform)
        rec.add_buffer(buf)
        env.state = State(states[-1, :nq].copy(), states[-1, nq:].copy())
        remaining -= n
    return rec.result([])


def train_ppo_tw(env_config: EnvConfig, method: MethodConfig, steps: int, seed: int) -> TrainResult:
    """PPO that hands control to the safe scheduler above ``tw_upper`` until below ``tw_lower``."""
    hyper = method.hyper
    spec = method.shaping
    kind = method.transform
    env_rng, init_rng, upd_rng = trial_streams(seed)
    env = QueueEnv(env_config)
    env.reset(env_rng)
    agent = Agent.create(env_config.obs_dim, env_config.num_actions, init_rng, hyper, kind, method.hidden)
    rec = _Recorder(steps, env_config.num_queues)
    nq = env_config.num_queues
    tw = TrainingWheelsState("rl", method.tw_upper, method.tw_lower)
    buf = RolloutBuffer(hyper.rollout_len)
    est = AvgCostEstimate()
    updates = []
    for _ in range(steps):
        s = env.state
        u = env.draw_uniforms(env_rng, 1)[0]
        tw = next_mode(tw, s)
        if tw.mode == "safe":
            a, lp = safe_action(s, env_config), 0.0
        else:
            obs = transform_array(kind, s.as_vector())
            a, lp = sample_from_uniform(mlp_forward(agent.policy, obs), u[0])
        nxt, c = env.step(a, u[1:])
        l = shaped_cost(s, nxt, c, spec)
        q = s.queues
        destab = bool(q[a] == 0 and q.sum() - q[a] > 0)
        rec.add(c, l, a, destab, nxt.queues)
        if tw.mode == "rl":
            buf.append(s.as_vector(), nxt.as_vector(), transform_array(kind, s.as_vector()),
                       transform_array(kind, nxt.as_vector()), a, lp, l, c, destab)
            buf.num_queues = nq
            if buf.full:
                est = update_eta(buf, est, hyper.eta_mode, hyper.eta_alpha)
                adv, targets = estimate_advantages(buf, agent.critic, est.eta, hyper.gae_lambda)
                stats = ppo_update(agent, buf, adv, targets, hyper, upd_rng)
                stats["eta"] = est.eta
                updates.append(stats)
                buf.clear()
    return rec.result(updates, agent)
