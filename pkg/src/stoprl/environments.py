"""Discrete-time queueing simulators.

Two environment families are provided:

* single-server allocation: ``N`` queues with Bernoulli arrivals, a single
  server that picks one queue per step and succeeds with probability
  ``p_i`` provided it can connect to the queue (connectivity flag);
* the N-model network, simulated as a uniformized chain where each step is
  exactly one event (arrival or potential service completion).

All randomness enters through a vector of uniforms so that the Python step
functions and the compiled rollout kernels consume identical streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, ContractViolation

SERVER_ALLOC = 0
NMODEL = 1


@dataclass(frozen=True)
class ServerAllocConfig:
    arrival_rates: tuple
    service_probs: tuple
    connect_probs: tuple
    init_max: int = 10
    queue_cap: Optional[int] = None

    kind = SERVER_ALLOC

    def __post_init__(self):
        for name in ("arrival_rates", "service_probs", "connect_probs"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        self.validate()

    @property
    def num_queues(self) -> int:
        return len(self.arrival_rates)

    @property
    def num_actions(self) -> int:
        return self.num_queues

    @property
    def obs_dim(self) -> int:
        return 2 * self.num_queues

    @property
    def uniforms_per_step(self) -> int:
        # service draw, one arrival draw per queue, one flag draw per queue
        return 1 + 2 * self.num_queues

    def validate(self):
        n = len(self.arrival_rates)
        if n < 1:
            raise ConfigError("server allocation needs at least one queue")
        if len(self.service_probs) != n or len(self.connect_probs) != n:
            raise ConfigError("arrival_rates, service_probs and connect_probs must have equal length")
        for name in ("arrival_rates", "service_probs", "connect_probs"):
            for v in getattr(self, name):
                if not (0.0 <= v <= 1.0) or math.isnan(v):
                    raise ConfigError(f"{name} entries must lie in [0, 1], got {v}")
        if self.init_max < 0:
            raise ConfigError("init_max must be non-negative")
        if self.queue_cap is not None and self.queue_cap < 1:
            raise ConfigError("queue_cap must be >= 1 when set")


@dataclass(frozen=True)
class NModelConfig:
    lambda1: float
    lambda2: float
    mu1: float
    mu2: float
    mu3: float
    holding_costs: tuple = (3.0, 1.0)
    init_max: int = 10
    queue_cap: Optional[int] = None

    kind = NMODEL
    num_queues = 2
    num_actions = 2
    obs_dim = 2
    uniforms_per_step = 1

    def __post_init__(self):
        object.__setattr__(self, "holding_costs", tuple(float(v) for v in self.holding_costs))
        self.validate()

    @property
    def rates(self) -> tuple:
        return (self.lambda1, self.lambda2, self.mu1, self.mu2, self.mu3)

    @property
    def uniformization_constant(self) -> float:
        return float(sum(self.rates))

    def validate(self):
        for v in self.rates:
            if not v > 0 or not math.isfinite(v):
                raise ConfigError(f"N-model rates must be positive and finite, got {v}")
        if len(self.holding_costs) != 2:
            raise ConfigError("N-model needs exactly two holding costs")
        if self.init_max < 0:
            raise ConfigError("init_max must be non-negative")
        if self.queue_cap is not None and self.queue_cap < 1:
            raise ConfigError("queue_cap must be >= 1 when set")


EnvConfig = Union[ServerAllocConfig, NModelConfig]


@dataclass
class State:
    queues: np.ndarray
    flags: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.queues = np.asarray(self.queues, dtype=np.int64)
        self.flags = np.asarray(self.flags, dtype=np.int64)
        if np.any(self.queues < 0):
            raise ContractViolation("queue lengths must be non-negative")
        if np.any((self.flags != 0) & (self.flags != 1)):
            raise ContractViolation("connectivity flags must be 0 or 1")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.queues, self.flags])

    def copy(self) -> "State":
        return State(self.queues.copy(), self.flags.copy())

    def __eq__(self, other):
        if not isinstance(other, State):
            return NotImplemented
        return np.array_equal(self.queues, other.queues) and np.array_equal(self.flags, other.flags)


PRESETS = {
    "sa-medium": lambda: ServerAllocConfig(
        arrival_rates=(0.2, 0.1), service_probs=(0.3, 0.8), connect_probs=(1.0, 1.0)
    ),
    "sa-high-faulty": lambda: ServerAllocConfig(
        arrival_rates=(0.2, 0.1), service_probs=(0.3, 0.8), connect_probs=(0.95, 0.5)
    ),
    "sa-veryhigh-faulty": lambda: ServerAllocConfig(
        arrival_rates=(0.2, 0.1), service_probs=(0.3, 0.8), connect_probs=(0.7, 0.5)
    ),
    "sa-10queue": lambda: ServerAllocConfig(
        arrival_rates=(0.05, 0.01, 0.2, 0.4, 0.05, 0.01, 0.02, 0.01, 0.015, 0.01),
        service_probs=(0.9, 0.85, 0.95, 0.75, 0.9, 0.9, 0.85, 0.9, 0.9, 0.85),
        connect_probs=(1.0,) * 10,
    ),
    "nmodel-veryhigh-2": lambda: NModelConfig(
        lambda1=0.9, lambda2=0.8, mu1=1.0, mu2=0.9, mu3=0.8
    ),
}


def load_preset(name: str) -> EnvConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; known presets: {sorted(PRESETS)}") from None


def stabilizability_check(config: ServerAllocConfig) -> bool:
    """Sufficient load condition for the server-allocation network."""
    lam = np.asarray(config.arrival_rates)
    p = np.asarray(config.service_probs)
    c = np.asarray(config.connect_probs)
    if np.any(p == 0):
        raise ConfigError("stabilizability is undefined when a service probability is 0")
    load = lam / p
    return bool(load.sum() < 1.0 - np.prod(1.0 - c) and np.all(load < c))


def nmodel_stabilizability_check(config: NModelConfig) -> bool:
    return (config.lambda1 - config.mu1) / config.mu2 <= 1.0 - config.lambda2 / config.mu3


def _coerce_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def reset(config: EnvConfig, seed) -> State:
    """Random start state: queues uniform on {0..init_max}, flags ~ Bernoulli(c)."""
    config.validate()
    rng = _coerce_rng(seed)
    queues = rng.integers(0, config.init_max + 1, size=config.num_queues).astype(np.int64)
    if config.queue_cap is not None:
        np.minimum(queues, config.queue_cap, out=queues)
    if config.kind == SERVER_ALLOC:
        flags = (rng.random(config.num_queues) < np.asarray(config.connect_probs)).astype(np.int64)
    else:
        flags = np.zeros(0, dtype=np.int64)
    return State(queues, flags)


def server_alloc_reset(config: ServerAllocConfig, seed) -> State:
    return reset(config, seed)


def server_alloc_step_u(state: State, action: int, config: ServerAllocConfig, u: Sequence[float]):
    """One step driven by explicit uniforms ``u`` (length ``1 + 2N``)."""
    n = config.num_queues
    a = int(action)
    if not 0 <= a < n:
        raise ContractViolation(f"action {a} out of range for {n} queues")
    q = state.queues.copy()
    if state.flags[a] == 1 and u[0] < config.service_probs[a] and q[a] > 0:
        q[a] -= 1
    for i in range(n):
        if u[1 + i] < config.arrival_rates[i]:
            q[i] += 1
    if config.queue_cap is not None:
        np.minimum(q, config.queue_cap, out=q)
    flags = np.empty(n, dtype=np.int64)
    for i in range(n):
        flags[i] = 1 if u[1 + n + i] < config.connect_probs[i] else 0
    nxt = State(q, flags)
    return nxt, float(q.sum())


def server_alloc_step(state: State, action: int, config: ServerAllocConfig, rng):
    """Serve queue ``action`` then sample arrivals and fresh connectivity flags.

    Returns ``(next_state, true_cost)`` with ``true_cost = sum(next.queues)``.
    """
    rng = _coerce_rng(rng)
    if not 0 <= int(action) < config.num_queues:
        raise ContractViolation(f"action {action} out of range for {config.num_queues} queues")
    return server_alloc_step_u(state, action, config, rng.random(config.uniforms_per_step))


def nmodel_step_u(state: State, action: int, config: NModelConfig, u: Sequence[float]):
    a = int(action)
    if a not in (0, 1):
        raise ContractViolation(f"N-model action must be 0 or 1, got {a}")
    q = state.queues.copy()
    x = u[0] * config.uniformization_constant
    lam1, lam2, mu1, mu2, mu3 = config.rates
    if x < lam1:
        q[0] += 1
    elif x < lam1 + lam2:
        q[1] += 1
    elif x < lam1 + lam2 + mu1:
        if q[0] > 0:
            q[0] -= 1
    elif x < lam1 + lam2 + mu1 + mu2:
        if a == 0 and q[0] > 0:
            q[0] -= 1
    else:
        if a == 1 and q[1] > 0:
            q[1] -= 1
    if config.queue_cap is not None:
        np.minimum(q, config.queue_cap, out=q)
    cost = config.holding_costs[0] * q[0] + config.holding_costs[1] * q[1]
    return State(q), float(cost)


def nmodel_step(state: State, action: int, config: NModelConfig, rng):
    """One uniformized event of the N-model; server 2 works buffer ``action``."""
    rng = _coerce_rng(rng)
    if int(action) not in (0, 1):
        raise ContractViolation(f"N-model action must be 0 or 1, got {action}")
    return nmodel_step_u(state, action, config, rng.random(1))


def step_u(state: State, action: int, config: EnvConfig, u):
    if config.kind == SERVER_ALLOC:
        return server_alloc_step_u(state, action, config, u)
    return nmodel_step_u(state, action, config, u)


def step(state: State, action: int, config: EnvConfig, rng):
    if config.kind == SERVER_ALLOC:
        return server_alloc_step(state, action, config, rng)
    return nmodel_step(state, action, config, rng)


def true_cost_of(config: EnvConfig, queues: np.ndarray) -> np.ndarray:
    """Vectorised optimality cost of (a batch of) next-state queue vectors."""
    queues = np.asarray(queues)
    if config.kind == SERVER_ALLOC:
        return queues.sum(axis=-1).astype(np.float64)
    return queues @ np.asarray(config.holding_costs, dtype=np.float64)


def env_params(config: EnvConfig) -> np.ndarray:
    """Flat float parameter vector consumed by the rollout kernels."""
    if config.kind == SERVER_ALLOC:
        return np.concatenate(
            [config.arrival_rates, config.service_probs, config.connect_probs]
        ).astype(np.float64)
    return np.array(config.rates + config.holding_costs, dtype=np.float64)


def config_to_dict(config: EnvConfig) -> dict:
    if config.kind == SERVER_ALLOC:
        d = {
            "kind": "server_alloc",
            "arrival_rates": list(config.arrival_rates),
            "service_probs": list(config.service_probs),
            "connect_probs": list(config.connect_probs),
        }
    else:
        d = {
            "kind": "nmodel",
            "lambda1": config.lambda1,
            "lambda2": config.lambda2,
            "mu1": config.mu1,
            "mu2": config.mu2,
            "mu3": config.mu3,
            "holding_costs": list(config.holding_costs),
        }
    d["init_max"] = config.init_max
    if config.queue_cap is not None:
        d["queue_cap"] = config.queue_cap
    return d


def config_from_dict(d: dict) -> EnvConfig:
    d = dict(d)
    kind = d.pop("kind", "server_alloc")
    try:
        if kind in ("server_alloc", "server-alloc", "sa"):
            return ServerAllocConfig(**d)
        if kind in ("nmodel", "n-model", "n_model"):
            return NModelConfig(**d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    raise ConfigError(f"unknown environment kind {kind!r}")


class QueueEnv:
    """Never-reset environment instance: a config plus the current state."""

    def __init__(self, config: EnvConfig, state: Optional[State] = None):
        self.config = config
        self.state = state

    def reset(self, rng) -> State:
        self.state = reset(self.config, rng)
        return self.state

    def draw_uniforms(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Per-step uniforms: column 0 drives the policy, the rest the dynamics."""
        return rng.random((n, 1 + self.config.uniforms_per_step))

    def step(self, action: int, u) -> tuple:
        nxt, cost = step_u(self.state, action, self.config, u)
        self.state = nxt
        return nxt, cost
