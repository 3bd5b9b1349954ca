"""Backend selection for the rollout kernel.

The compiled extension is used when it imports; otherwise (or when
``STOPRL_PURE_PYTHON=1`` is set) the pure-Python twin is used. Both expose
``simulate`` with the same signature and consume the same uniform matrix.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernels
from .errors import ConfigError
from ._pykernels import POLICY_CMU, POLICY_MAXWEIGHT, POLICY_MLP, POLICY_RANDOM  # noqa: F401

try:
    if os.environ.get("STOPRL_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-Python backend forced")
    from . import _ckernels
except ImportError:
    _ckernels = None

MAX_COMPILED_WIDTH = 512

BACKEND = "cython" if _ckernels is not None else "python"


def available_backends() -> list:
    return ["python"] + (["cython"] if _ckernels is not None else [])


def _module(backend):
    if backend is None:
        backend = BACKEND
    if backend == "cython":
        if _ckernels is None:
            raise RuntimeError("compiled kernels are not available")
        return _ckernels
    if backend == "python":
        return _pykernels
    raise ValueError(f"unknown backend {backend!r}")


def simulate(config, state, uniforms, policy_kind, params=None, transform=0, backend=None):
    """Advance ``config``'s chain ``len(uniforms)`` steps from ``state``.

    Returns ``(states, actions, logps, costs)`` where ``states`` has one more
    row than the others (row 0 is the starting state, rows are queues then
    flags).
    """
    from .environments import env_params

    uniforms = np.ascontiguousarray(uniforms, dtype=np.float64)
    n = uniforms.shape[0]
    d = len(state.queues) + len(state.flags)
    states = np.empty((n + 1, d), dtype=np.int64)
    actions = np.empty(n, dtype=np.int64)
    logps = np.empty(n, dtype=np.float64)
    costs = np.empty(n, dtype=np.float64)
    weights = None
    mod = _module(backend)
    if policy_kind == POLICY_MLP:
        if len(params.weights) != 3:
            raise ConfigError("rollout kernels support exactly two hidden layers")
        if max(params.sizes) > MAX_COMPILED_WIDTH:
            mod = _pykernels
        weights = tuple(
            np.ascontiguousarray(a, dtype=np.float64) for a in params.arrays()
        )
    cap = -1 if config.queue_cap is None else int(config.queue_cap)
    mod.simulate(
        int(config.kind),
        env_params(config),
        np.ascontiguousarray(state.queues, dtype=np.int64),
        np.ascontiguousarray(state.flags, dtype=np.int64),
        cap,
        uniforms,
        int(policy_kind),
        weights,
        int(transform),
        states,
        actions,
        logps,
        costs,
    )
    return states, actions, logps, costs
