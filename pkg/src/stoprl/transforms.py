"""Coordinate-wise compressive bijections applied to observations.

The policy and critic only ever see transformed states; costs and the
Lyapunov drift are always computed on the raw queue lengths.
"""

from __future__ import annotations

import enum
import math

import numpy as np

from .errors import ContractViolation


class TransformKind(enum.IntEnum):
    # integer codes are shared with the compiled kernels
    IDENTITY = 0
    SYMSQRT = 1
    SYMLOGE = 2
    SYMSIGMOID = 3


DEFAULT_TRANSFORM = TransformKind.SYMLOGE

_ALIASES = {
    "id": TransformKind.IDENTITY,
    "identity": TransformKind.IDENTITY,
    "ss": TransformKind.SYMSQRT,
    "symsqrt": TransformKind.SYMSQRT,
    "sl": TransformKind.SYMLOGE,
    "symloge": TransformKind.SYMLOGE,
    "sig": TransformKind.SYMSIGMOID,
    "symsigmoid": TransformKind.SYMSIGMOID,
}

SHORT_LABELS = {
    TransformKind.IDENTITY: "id",
    TransformKind.SYMSQRT: "ss",
    TransformKind.SYMLOGE: "sl",
    TransformKind.SYMSIGMOID: "sig",
}


def parse_transform(value) -> TransformKind:
    """Accept a TransformKind, its integer code, or a label such as ``"sl"``."""
    if isinstance(value, TransformKind):
        return value
    if isinstance(value, (int, np.integer)):
        return TransformKind(int(value))
    try:
        return _ALIASES[str(value).strip().lower()]
    except KeyError:
        raise ValueError(
            f"unknown state transform {value!r}; expected one of {sorted(_ALIASES)}"
        ) from None


def apply_transform(kind, x: float) -> float:
    kind = parse_transform(kind)
    x = float(x)
    if not math.isfinite(x):
        raise ContractViolation(f"transform input must be finite, got {x}")
    if kind is TransformKind.IDENTITY:
        return x
    if x == 0.0:
        return 0.0
    sign = 1.0 if x > 0 else -1.0
    a = abs(x)
    if kind is TransformKind.SYMSQRT:
        return sign * (math.sqrt(a + 1.0) - 1.0)
    if kind is TransformKind.SYMLOGE:
        return sign * math.log1p(a)
    return sign / (1.0 + math.exp(-a))


def inverse_transform(kind, y: float) -> float:
    kind = parse_transform(kind)
    y = float(y)
    if not math.isfinite(y):
        raise ContractViolation(f"inverse transform input must be finite, got {y}")
    if kind is TransformKind.IDENTITY:
        return y
    if y == 0.0:
        return 0.0
    sign = 1.0 if y > 0 else -1.0
    b = abs(y)
    if kind is TransformKind.SYMSQRT:
        return sign * ((b + 1.0) ** 2 - 1.0)
    if kind is TransformKind.SYMLOGE:
        return sign * math.expm1(b)
    # symsigmoid maps x != 0 onto 0.5 < |y| < 1
    if not 0.5 < b < 1.0:
        raise ValueError(f"{y} is outside the range of symsigmoid")
    return sign * math.log(b / (1.0 - b))


def transform_array(kind, x) -> np.ndarray:
    """Vectorised forward transform; returns a new float64 array."""
    kind = parse_transform(kind)
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ContractViolation("transform input must be finite")
    if kind is TransformKind.IDENTITY:
        return x.copy()
    a = np.abs(x)
    s = np.sign(x)
    if kind is TransformKind.SYMSQRT:
        return s * (np.sqrt(a + 1.0) - 1.0)
    if kind is TransformKind.SYMLOGE:
        return s * np.log1p(a)
    return s / (1.0 + np.exp(-a))


def transform_state(kind, state) -> np.ndarray:
    """Transform every coordinate (queue lengths, then flags) of a state."""
    return transform_array(kind, state.as_vector())
