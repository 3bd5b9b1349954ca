"""Average-reward PPO over a single never-reset interaction stream.

Costs are negated into rewards internally so the usual clipped-surrogate
machinery applies; every number that leaves this module is still a cost,
except the advantages, which are in reward convention (good actions have
positive advantage).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from . import kernels
from .environments import EnvConfig, QueueEnv
from .errors import ConfigError, ContractViolation, TrainingError
from .policy_net import (
    AdamState,
    MlpParams,
    adam_step,
    clip_by_global_norm,
    forward_backward,
    init_critic,
    init_policy,
    log_softmax,
    mlp_forward,
)
from .shaping import ShapingSpec, parse_variant, shaped_cost_batch
from .transforms import TransformKind, parse_transform, transform_array


@dataclass(frozen=True)
class PpoHyper:
    clip: float = 0.2
    gae_lambda: float = 0.95
    epochs: int = 4
    minibatches: int = 4
    vf_coef: float = 0.5
    entropy_coef: float = 0.01
    max_grad_norm: float = 0.5
    lr: float = 2.5e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.9
    rollout_len: int = 200
    eta_mode: str = "buffer"
    eta_alpha: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.clip < 1.0:
            raise ConfigError(f"clip must lie in (0, 1), got {self.clip}")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigError(f"gae_lambda must lie in [0, 1], got {self.gae_lambda}")
        if self.rollout_len < 1 or self.epochs < 1 or self.minibatches < 1:
            raise ConfigError("rollout_len, epochs and minibatches must be >= 1")
        if self.eta_mode not in ("buffer", "ema"):
            raise ConfigError(f"eta_mode must be 'buffer' or 'ema', got {self.eta_mode!r}")


@dataclass
class RolloutBuffer:
    """Time-consecutive transitions between two policy updates."""

    capacity: int
    states: np.ndarray = None
    next_states: np.ndarray = None
    obs: np.ndarray = None
    next_obs: np.ndarray = None
    actions: np.ndarray = None
    logprobs: np.ndarray = None
    shaped_costs: np.ndarray = None
    true_costs: np.ndarray = None
    destabilizing: np.ndarray = None
    num_queues: int = 0
    size: int = 0

    @property
    def full(self) -> bool:
        return self.size == self.capacity

    def _allocate(self, state_dim: int):
        n = self.capacity
        self.states = np.zeros((n, state_dim), dtype=np.int64)
        self.next_states = np.zeros((n, state_dim), dtype=np.int64)
        self.obs = np.zeros((n, state_dim))
        self.next_obs = np.zeros((n, state_dim))
        self.actions = np.zeros(n, dtype=np.int64)
        self.logprobs = np.zeros(n)
        self.shaped_costs = np.zeros(n)
        self.true_costs = np.zeros(n)
        self.destabilizing = np.zeros(n, dtype=bool)

    def append(self, state, next_state, obs, next_obs, action, logprob, shaped, true, destab):
        if self.states is None:
            self._allocate(len(state))
        if self.size >= self.capacity:
            raise ContractViolation("rollout buffer is full")
        k = self.size
        self.states[k] = state
        self.next_states[k] = next_state
        self.obs[k] = obs
        self.next_obs[k] = next_obs
        self.actions[k] = action
        self.logprobs[k] = logprob
        self.shaped_costs[k] = shaped
        self.true_costs[k] = true
        self.destabilizing[k] = destab
        self.size += 1

    def clear(self):
        self.size = 0


@dataclass
class AvgCostEstimate:
    eta: float = 0.0
    initialized: bool = False


def destabilizing_mask(queues: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Chosen queue empty while at least one other queue holds jobs."""
    queues = np.atleast_2d(queues)
    chosen = queues[np.arange(len(actions)), actions]
    return (chosen == 0) & (queues.sum(axis=1) - chosen > 0)


@dataclass
class Agent:
    policy: MlpParams
    critic: MlpParams
    policy_opt: AdamState
    critic_opt: AdamState
    transform: TransformKind = TransformKind.SYMLOGE

    @classmethod
    def create(cls, obs_dim, n_actions, rng, hyper: PpoHyper = PpoHyper(), transform=TransformKind.SYMLOGE,
               hidden=(64, 64)):
        policy = init_policy(obs_dim, n_actions, rng, hidden)
        critic = init_critic(obs_dim, rng, hidden)
        kw = dict(lr=hyper.lr, beta1=hyper.adam_beta1, beta2=hyper.adam_beta2)
        return cls(policy, critic, AdamState.for_params(policy, **kw), AdamState.for_params(critic, **kw),
                   parse_transform(transform))


def collect_rollout(env: QueueEnv, policy: MlpParams, spec: ShapingSpec, kind, buffer: RolloutBuffer,
                    rng: np.random.Generator, n_steps: Optional[int] = None, backend=None) -> RolloutBuffer:
    """Fill ``buffer`` with on-policy transitions, continuing from ``env.state``."""
    if buffer.size != 0:
        raise ContractViolation("collect_rollout expects an empty buffer")
    n = buffer.capacity if n_steps is None else n_steps
    if n > buffer.capacity:
        raise ContractViolation("requested more steps than the buffer holds")
    kind = parse_transform(kind)
    u = env.draw_uniforms(rng, n)
    states, actions, logps, costs = kernels.simulate(
        env.config, env.state, u, kernels.POLICY_MLP, policy, int(kind), backend=backend
    )
    fill_buffer(buffer, env.config, states, actions, logps, costs, spec, kind)
    nq = env.config.num_queues
    env.state = type(env.state)(states[-1, :nq].copy(), states[-1, nq:].copy())
    return buffer


def fill_buffer(buffer, config, states, actions, logps, costs, spec, kind):
    n = len(actions)
    nq = config.num_queues
    if buffer.states is None:
        buffer._allocate(states.shape[1])
    cur, nxt = states[:-1], states[1:]
    obs = transform_array(kind, states)
    buffer.states[:n] = cur
    buffer.next_states[:n] = nxt
    buffer.obs[:n] = obs[:-1]
    buffer.next_obs[:n] = obs[1:]
    buffer.actions[:n] = actions
    buffer.logprobs[:n] = logps
    buffer.true_costs[:n] = costs
    buffer.shaped_costs[:n] = shaped_cost_batch(cur[:, :nq], nxt[:, :nq], costs, spec)
    buffer.destabilizing[:n] = destabilizing_mask(cur[:, :nq], actions)
    buffer.num_queues = nq
    buffer.size = n


def update_eta(buffer: RolloutBuffer, est: AvgCostEstimate, mode: str = "buffer", alpha: float = 0.1):
    """Average-cost estimate from the current buffer (or an EMA of buffer means)."""
    if buffer.size == 0:
        raise ContractViolation("update_eta needs a non-empty buffer")
    mean = float(np.mean(buffer.shaped_costs[: buffer.size]))
    if mode == "ema" and est.initialized:
        eta = (1.0 - alpha) * est.eta + alpha * mean
    else:
        eta = mean
    return AvgCostEstimate(eta, True)


def gae(deltas: np.ndarray, lam: float) -> np.ndarray:
    adv = np.zeros_like(deltas)
    acc = 0.0
    for t in range(len(deltas) - 1, -1, -1):
        acc = deltas[t] + lam * acc
        adv[t] = acc
    return adv


def estimate_advantages(buffer: RolloutBuffer, critic: MlpParams, eta: float, gae_lambda: float = 0.95,
                        normalize: bool = True):
    """Differential GAE (no discounting) in reward convention.

    Returns ``(advantages, value_targets)``; advantages are divided by their
    buffer standard deviation (no centring) unless that deviation is zero.
    """
    n = buffer.size
    v = mlp_forward(critic, buffer.obs[:n])[:, 0]
    v_next = mlp_forward(critic, buffer.next_obs[:n])[:, 0]
    deltas = -(buffer.shaped_costs[:n] - eta) + v_next - v
    adv = gae(deltas, gae_lambda)
    targets = adv + v
    if normalize:
        sd = float(np.std(adv))
        if sd > 0 and math.isfinite(sd):
            adv = adv / sd
    return adv, targets


def _policy_loss_grad(logits, actions, old_logp, adv, clip, ent_coef):
    b = len(actions)
    logp_all = log_softmax(logits)
    probs = np.exp(logp_all)
    logp = logp_all[np.arange(b), actions]
    ratio = np.exp(logp - old_logp)
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    surr = np.minimum(ratio * adv, clipped * adv)
    ent = -(probs * logp_all).sum(axis=1)
    loss = -surr.mean() - ent_coef * ent.mean()
    live = (ratio * adv <= clipped * adv) | ((ratio >= 1.0 - clip) & (ratio <= 1.0 + clip))
    dlogp = -np.where(live, adv, 0.0) * ratio / b
    g = -dlogp[:, None] * probs
    g[np.arange(b), actions] += dlogp
    g += (ent_coef / b) * probs * (logp_all + ent[:, None])
    stats = {
        "pg_loss": float(-surr.mean()),
        "entropy": float(ent.mean()),
        "approx_kl": float(np.mean((ratio - 1.0) - (logp - old_logp))),
        "clipfrac": float(np.mean(np.abs(ratio - 1.0) > clip)),
    }
    return loss, g, stats


def ppo_loss(agent: Agent, obs, actions, old_logp, adv, targets, hyper: PpoHyper):
    """Total loss and gradients for one minibatch: ``(loss, policy_grads, critic_grads, stats)``."""
    stats = {}

    def pol_fn(logits):
        loss, g, st = _policy_loss_grad(logits, actions, old_logp, adv, hyper.clip, hyper.entropy_coef)
        stats.update(st)
        return loss, g

    def val_fn(out):
        err = out[:, 0] - targets
        vloss = float(np.mean(err ** 2))
        stats["v_loss"] = vloss
        g = (hyper.vf_coef * 2.0 / len(err)) * err[:, None]
        return hyper.vf_coef * vloss, g

    pl, pg = forward_backward(agent.policy, obs, pol_fn)
    vl, vg = forward_backward(agent.critic, obs, val_fn)
    return pl + vl, pg, vg, stats


def ppo_update(agent: Agent, buffer: RolloutBuffer, advantages, targets, hyper: PpoHyper,
               rng: np.random.Generator) -> dict:
    n = buffer.size
    mb = max(1, n // hyper.minibatches)
    history = []
    for _ in range(hyper.epochs):
        idx = rng.permutation(n)
        for start in range(0, n, mb):
            sel = idx[start:start + mb]
            loss, pg, vg, st = ppo_loss(
                agent, buffer.obs[sel], buffer.actions[sel], buffer.logprobs[sel],
                advantages[sel], targets[sel], hyper,
            )
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite PPO loss ({loss})")
            st["grad_norm"] = clip_by_global_norm(hyper.max_grad_norm, pg, vg)
            adam_step(agent.policy, pg, agent.policy_opt)
            adam_step(agent.critic, vg, agent.critic_opt)
            st["loss"] = loss
            history.append(st)
    out = {k: float(np.mean([h[k] for h in history])) for k in history[0]}
    out["final_loss"] = history[-1]["loss"]
    return out


@dataclass(frozen=True)
class MethodConfig:
    """Learner configuration; keys mirror the experiment config file."""

    method: str = "stop"
    shaping_enabled: bool = True
    lyapunov_p: float = 2.0
    cost_variant: str = "identity"
    state_transform: str = "sl"
    hyper: PpoHyper = field(default_factory=PpoHyper)
    hidden: tuple = (64, 64)
    tw_upper: int = 100
    tw_lower: int = 50

    METHODS = ("ppo", "stop", "maxweight", "cmu", "random", "ppo_tw")

    def __post_init__(self):
        if self.method not in self.METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {self.METHODS}")
        try:
            parse_transform(self.state_transform)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        parse_variant(self.cost_variant)
        if not (self.lyapunov_p > 0 and math.isfinite(self.lyapunov_p)):
            raise ConfigError(f"lyapunov_p must be positive, got {self.lyapunov_p}")
        if not 0 <= self.tw_lower < self.tw_upper:
            raise ConfigError("training wheels need 0 <= tw_lower < tw_upper")

    @classmethod
    def for_method(cls, method: str, **overrides) -> "MethodConfig":
        """Method defaults (ppo/ppo_tw: no shaping, identity transform) plus overrides."""
        base = {}
        if method in ("ppo", "ppo_tw", "maxweight", "cmu", "random"):
            base = dict(shaping_enabled=False, state_transform="id")
        hyper_keys = {f.name for f in fields(PpoHyper)}
        hyper_kw = {k: overrides.pop(k) for k in list(overrides) if k in hyper_keys}
        base.update(overrides)
        return cls(method=method, hyper=PpoHyper(**hyper_kw), **base)

    @property
    def shaping(self) -> ShapingSpec:
        return ShapingSpec(self.lyapunov_p, self.cost_variant, self.shaping_enabled)

    @property
    def transform(self) -> TransformKind:
        return parse_transform(self.state_transform)

    def with_overrides(self, **kw) -> "MethodConfig":
        hyper_keys = {f.name for f in fields(PpoHyper)}
        hyper_kw = {k: kw.pop(k) for k in list(kw) if k in hyper_keys}
        return replace(self, hyper=replace(self.hyper, **hyper_kw), **kw)


@dataclass
class TrainResult:
    """Per-step record of one trial (all costs are true/shaped costs, not rewards)."""

    true_costs: np.ndarray
    shaped_costs: np.ndarray
    actions: np.ndarray
    destabilizing: np.ndarray
    queues: np.ndarray  # next-state queue vectors, one row per step
    updates: list = field(default_factory=list)
    agent: Optional[Agent] = None

    @property
    def steps(self) -> int:
        return len(self.true_costs)


def trial_streams(seed: int):
    """Independent generators for env dynamics, parameter init and minibatch shuffling."""
    env_ss, init_ss, upd_ss = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(env_ss), np.random.default_rng(init_ss), np.random.default_rng(upd_ss))


class _Recorder:
    def __init__(self, steps, nq):
        self.true = np.zeros(steps)
        self.shaped = np.zeros(steps)
        self.actions = np.zeros(steps, dtype=np.int64)
        self.destab = np.zeros(steps, dtype=bool)
        self.queues = np.zeros((steps, nq), dtype=np.int64)
        self.t = 0

    def add_buffer(self, buf: RolloutBuffer):
        n, t = buf.size, self.t
        self.true[t:t + n] = buf.true_costs[:n]
        self.shaped[t:t + n] = buf.shaped_costs[:n]
        self.actions[t:t + n] = buf.actions[:n]
        self.destab[t:t + n] = buf.destabilizing[:n]
        self.queues[t:t + n] = buf.next_states[:n, : buf.num_queues]
        self.t += n

    def add(self, true, shaped, action, destab, queues):
        t = self.t
        self.true[t] = true
        self.shaped[t] = shaped
        self.actions[t] = action
        self.destab[t] = destab
        self.queues[t] = queues
        self.t += 1

    def result(self, updates, agent=None):
        return TrainResult(self.true, self.shaped, self.actions, self.destab, self.queues, updates, agent)


def train(env_config: EnvConfig, method: MethodConfig, steps: int, seed: int, backend=None) -> TrainResult:
    """Online average-reward PPO (``ppo`` / ``stop`` methods) for ``steps`` interactions.

    The environment is reset once and never again; a policy update happens
    each time the rollout buffer fills.
    """
    if steps < 0:
        raise ConfigError("steps must be non-negative")
    hyper = method.hyper
    spec = method.shaping
    kind = method.transform
    env_rng, init_rng, upd_rng = trial_streams(seed)
    env = QueueEnv(env_config)
    env.reset(env_rng)
    agent = Agent.create(env_config.obs_dim, env_config.num_actions, init_rng, hyper, kind, method.hidden)
    rec = _Recorder(steps, env_config.num_queues)
    buf = RolloutBuffer(hyper.rollout_len)
    est = AvgCostEstimate()
    updates = []
    remaining = steps
    while remaining > 0:
        n = min(hyper.rollout_len, remaining)
        buf.clear()
        collect_rollout(env, agent.policy, spec, kind, buf, env_rng, n, backend=backend)
        rec.add_buffer(buf)
        remaining -= n
        if buf.full:
            est = update_eta(buf, est, hyper.eta_mode, hyper.eta_alpha)
            adv, targets = estimate_advantages(buf, agent.critic, est.eta, hyper.gae_lambda)
            stats = ppo_update(agent, buf, adv, targets, hyper, upd_rng)
            stats["eta"] = est.eta
            updates.append(stats)
    return rec.result(updates, agent)
