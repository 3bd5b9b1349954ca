"""Lyapunov energies and the shaped (stability + optimality) cost."""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ConfigError, ContractViolation


class CostVariant(enum.IntEnum):
    IDENTITY = 0
    RECIPROCAL = 1
    EXP_NEXT = 2


_VARIANT_NAMES = {
    "identity": CostVariant.IDENTITY,
    "reciprocal": CostVariant.RECIPROCAL,
    "exp_next": CostVariant.EXP_NEXT,
}


def parse_variant(value) -> CostVariant:
    if isinstance(value, CostVariant):
        return value
    if isinstance(value, (int, np.integer)):
        return CostVariant(int(value))
    name = str(value).strip().lower()
    if name == "exp_current":
        raise ConfigError(
            "cost variant 'exp_current' is not supported: its state-plus-action "
            "encoding is ambiguous; use 'exp_next'"
        )
    try:
        return _VARIANT_NAMES[name]
    except KeyError:
        raise ConfigError(
            f"unknown cost variant {value!r}; expected one of {sorted(_VARIANT_NAMES)}"
        ) from None


@dataclass(frozen=True)
class ShapingSpec:
    p: float = 2.0
    cost_variant: CostVariant = CostVariant.IDENTITY
    enabled: bool = True

    def __post_init__(self):
        object.__setattr__(self, "cost_variant", parse_variant(self.cost_variant))
        object.__setattr__(self, "p", float(self.p))
        if not self.p > 0 or not math.isfinite(self.p):
            raise ConfigError(f"Lyapunov exponent must be positive, got {self.p}")
        if self.enabled and self.p == 1.0 and self.cost_variant is not CostVariant.RECIPROCAL:
            warnings.warn(
                "linear Lyapunov shaping (p=1) tends to be diluted by the raw "
                "optimality cost; consider cost_variant='reciprocal'",
                stacklevel=3,
            )


def _queues(s) -> np.ndarray:
    return np.asarray(getattr(s, "queues", s), dtype=np.float64)


def _same_state(a, b) -> bool:
    if hasattr(a, "as_vector") and hasattr(b, "as_vector"):
        return np.array_equal(a.as_vector(), b.as_vector())
    return np.array_equal(_queues(a), _queues(b))


def lyapunov_value(state, p: float) -> float:
    """sum_i q_i ** p over queue coordinates (flags are ignored)."""
    if not p > 0:
        raise ContractViolation(f"p must be positive, got {p}")
    return float(np.sum(_queues(state) ** p))


def lyapunov_batch(queues, p: float) -> np.ndarray:
    """Row-wise Lyapunov energy of a (T, N) array of queue vectors."""
    return np.sum(np.asarray(queues, dtype=np.float64) ** p, axis=-1)


def optimality_cost_variant(c: float, s, s_next, variant) -> float:
    variant = parse_variant(variant)
    if variant is CostVariant.IDENTITY:
        return float(c)
    if variant is CostVariant.RECIPROCAL:
        return -1.0 / (c + 1.0)
    return -math.exp(-float(np.sum(_queues(s_next) ** 2)))


def variant_batch(c, next_queues, variant) -> np.ndarray:
    variant = parse_variant(variant)
    c = np.asarray(c, dtype=np.float64)
    if variant is CostVariant.IDENTITY:
        return c.copy()
    if variant is CostVariant.RECIPROCAL:
        return -1.0 / (c + 1.0)
    return -np.exp(-np.sum(np.asarray(next_queues, dtype=np.float64) ** 2, axis=-1))


def shaped_cost(s, s_next, c: float, spec: ShapingSpec) -> float:
    base = optimality_cost_variant(c, s, s_next, spec.cost_variant)
    if not spec.enabled:
        return base
    return lyapunov_value(s_next, spec.p) - lyapunov_value(s, spec.p) + base


def shaped_cost_batch(queues, next_queues, c, spec: ShapingSpec) -> np.ndarray:
    base = variant_batch(c, next_queues, spec.cost_variant)
    if not spec.enabled:
        return base
    return lyapunov_batch(next_queues, spec.p) - lyapunov_batch(queues, spec.p) + base


def telescoped_shaped_sum(trajectory: Iterable, spec: ShapingSpec) -> float:
    """Sum of shaped costs over consecutive ``(s, c, s_next)`` records.

    Equals ``sum(variant(c)) + l(s_last) - l(s_first)`` up to rounding.
    """
    total = 0.0
    prev_next = None
    for s, c, s_next in trajectory:
        if prev_next is not None and not _same_state(prev_next, s):
            raise ContractViolation("trajectory is not consecutive")
        total += shaped_cost(s, s_next, c, spec)
        prev_next = s_next
    return total
