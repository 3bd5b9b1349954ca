"""Stability instruments and IQM aggregation.

IQM definition used throughout: sort the n samples, give the sample at
sorted index i (0-based) the weight of its overlap with [n/4, 3n/4], i.e.
``max(0, min(i + 1, 3n/4) - max(i, n/4))``, and divide the weighted sum by
n/2. When n is a multiple of 4 this is the plain mean of the middle half.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractViolation


@dataclass(frozen=True)
class IqmSummary:
    iqm: float
    ci_low: float
    ci_high: float
    n_samples: int
    n_bootstrap: int

    def __post_init__(self):
        if not self.ci_low <= self.iqm <= self.ci_high:
            raise ContractViolation("IQM must lie inside its confidence interval")


def _destab_flags(buffer) -> np.ndarray:
    n = buffer.size
    if n == 0:
        raise ContractViolation("empty buffer")
    return np.asarray(buffer.destabilizing[:n], dtype=bool)


def destabilizing_fraction(buffer) -> float:
    """Share of slots that served an empty queue while another queue held work."""
    return float(_destab_flags(buffer).mean())


def _queue_matrix(states) -> np.ndarray:
    if isinstance(states, np.ndarray):
        q = states
    else:
        q = np.array([np.asarray(getattr(s, "queues", s)) for s in states])
    if q.ndim == 1:
        q = q[:, None]
    if len(q) == 0:
        raise ContractViolation("empty state sequence")
    return q


def visitation_mass(states, l1_radius: float) -> float:
    """Fraction of ``states`` (State objects or queue rows) with L1 norm <= radius."""
    q = _queue_matrix(states)
    return float(np.mean(np.abs(q).sum(axis=1) <= l1_radius))


def visitation_grid(states, max_len: int = 50) -> np.ndarray:
    """Counts over the first two queue lengths, bin width 1, clipped to ``max_len``."""
    q = _queue_matrix(states)
    if q.shape[1] < 2:
        raise ContractViolation("visitation grid needs at least two queues")
    x = np.minimum(q[:, 0], max_len)
    y = np.minimum(q[:, 1], max_len)
    grid = np.zeros((max_len + 1, max_len + 1), dtype=np.int64)
    np.add.at(grid, (x, y), 1)
    return grid


def write_visitation_grid(path, grid: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["q1", "q2", "count"])
        for i, j in zip(*np.nonzero(grid)):
            w.writerow([int(i), int(j), int(grid[i, j])])


def unstable_advantage_stats(buffer, advantages) -> Optional[float]:
    """Mean advantage over destabilizing slots, or ``None`` when there are none."""
    flags = _destab_flags(buffer)
    adv = np.asarray(advantages, dtype=np.float64)[: len(flags)]
    if not flags.any():
        return None
    return float(adv[flags].mean())


def _iqm_weights(n: int) -> np.ndarray:
    lo, hi = n / 4.0, 3.0 * n / 4.0
    i = np.arange(n, dtype=np.float64)
    return np.clip(np.minimum(i + 1, hi) - np.maximum(i, lo), 0.0, None)


def _sorted_iqm(xs: np.ndarray, w: np.ndarray) -> np.ndarray:
    # offsets from the middle order statistic keep constant rows exact
    mid = xs[..., xs.shape[-1] // 2]
    return mid + ((xs - mid[..., None]) @ w) / (xs.shape[-1] / 2.0)


def iqm(samples) -> float:
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ContractViolation("IQM of an empty sample")
    return float(_sorted_iqm(np.sort(x), _iqm_weights(x.size)))


def bootstrap_ci(samples, n_bootstrap: int = 2000, rng=None) -> IqmSummary:
    """Percentile bootstrap (2.5/97.5) of the IQM."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    n = x.size
    if n < 2:
        raise ContractViolation("bootstrap needs at least two samples")
    if n_bootstrap < 1:
        raise ContractViolation("n_bootstrap must be positive")
    rng = np.random.default_rng(rng)
    point = iqm(x)
    idx = rng.integers(0, n, size=(n_bootstrap, n))
    stats = _sorted_iqm(np.sort(x[idx], axis=1), _iqm_weights(n))
    lo, hi = np.percentile(stats, [2.5, 97.5])
    # the percentile interval can miss a skewed point estimate; widen to include it
    return IqmSummary(point, float(min(lo, point)), float(max(hi, point)), n, n_bootstrap)


def summarize(samples, n_bootstrap: int = 2000, rng=None) -> IqmSummary:
    """Like ``bootstrap_ci`` but accepts a single sample (degenerate interval)."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 1:
        v = float(x[0])
        return IqmSummary(v, v, v, 1, 0)
    return bootstrap_ci(x, n_bootstrap, rng)
