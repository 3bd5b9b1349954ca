"""Exact long-run average cost of fixed policies on capped versions of the queueing chains.

Arrivals that would push a queue past the cap are dropped (the queue stays at
the cap), which matches ``queue_cap`` in the simulators, so Monte-Carlo runs
on a capped environment can be checked against these numbers.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .environments import NMODEL, SERVER_ALLOC, EnvConfig
from .errors import ChainSizeError, ConfigError, ContractViolation, MultiClassError
from .shaping import lyapunov_batch

POLICIES = ("maxweight", "cmu", "serve-longest", "serve-shortest", "uniform")
DEFAULT_STATE_LIMIT = 1_000_000
DENSE_LIMIT = 5_000


@dataclass
class TruncatedChain:
    cap: int
    queues: np.ndarray  # (S, N)
    flags: np.ndarray  # (S, N), all ones for always-connected queues; (S, 0) for the N-model
    P: sparse.csr_matrix
    expected_true_cost: np.ndarray
    _succ: tuple  # (rows, cols, probs) of the transition list, kept for shaped costs

    @property
    def num_states(self) -> int:
        return len(self.queues)

    def expected_shaped_cost(self, p: float) -> np.ndarray:
        """Per-state E[l(s') - l(s) + c(s')] for Lyapunov exponent ``p``."""
        rows, cols, probs = self._succ
        e_next = np.bincount(rows, probs * lyapunov_batch(self.queues[cols], p), minlength=self.num_states)
        return e_next - lyapunov_batch(self.queues, p) + self.expected_true_cost


def policy_probs(name: str, config: EnvConfig, queues: np.ndarray, flags: np.ndarray) -> np.ndarray:
    """(S, A) action probabilities of a named fixed policy."""
    S, n = queues.shape
    A = config.num_actions
    q = queues.astype(np.float64)
    if name == "uniform":
        return np.full((S, A), 1.0 / A)
    if config.kind == NMODEL:
        if name in ("maxweight", "cmu"):
            w = np.where(q > 0, np.array([config.holding_costs[0] * config.mu2,
                                          config.holding_costs[1] * config.mu3]), -1.0)
        elif name == "serve-longest":
            w = q
        elif name == "serve-shortest":
            w = np.where(q > 0, -q, -np.inf)
        else:
            raise ConfigError(f"unknown oracle policy {name!r}")
    else:
        p = np.asarray(config.service_probs)
        if name == "maxweight":
            w = flags * p * q
        elif name == "cmu":
            w = np.where(q > 0, p, -1.0)
        elif name == "serve-longest":
            w = q
        elif name == "serve-shortest":
            w = np.where(q > 0, -q, -np.inf)
        else:
            raise ConfigError(f"unknown oracle policy {name!r}")
    out = np.zeros((S, A))
    out[np.arange(S), np.argmax(w, axis=1)] = 1.0
    return out


def _enumerate_states(n: int, cap: int, flag_queues: list, fixed_flags: np.ndarray):
    m = len(flag_queues)
    q = np.array(list(itertools.product(range(cap + 1), repeat=n)), dtype=np.int64).reshape(-1, n)
    fb = np.array(list(itertools.product((0, 1), repeat=m)), dtype=np.int64).reshape(2 ** m, m)
    queues = np.repeat(q, len(fb), axis=0)
    flags = np.tile(fixed_flags, (len(queues), 1))
    if m:
        flags[:, flag_queues] = np.tile(fb, (len(q), 1))
    return queues, flags


def _index(queues, flags, cap, flag_queues):
    n = queues.shape[1]
    radix = (cap + 1) ** np.arange(n - 1, -1, -1)
    qi = queues @ radix
    m = len(flag_queues)
    if not m:
        return qi
    fi = flags[:, flag_queues] @ (2 ** np.arange(m - 1, -1, -1))
    return qi * (2 ** m) + fi


def _server_alloc_transitions(config, cap, pi, queues, flags, flag_queues):
    n = config.num_queues
    S = len(queues)
    lam = np.asarray(config.arrival_rates)
    mu = np.asarray(config.service_probs)
    c = np.asarray(config.connect_probs)
    rows, cols, probs = [], [], []
    sid = np.arange(S)
    for a in range(n):
        pa = pi[:, a]
        live = pa > 0
        if not live.any():
            continue
        success = flags[:, a] * mu[a] * (queues[:, a] > 0)
        for served in (0, 1):
            p_srv = success if served else 1.0 - success
            q1 = queues.copy()
            if served:
                q1[:, a] -= 1
            for arr in itertools.product((0, 1), repeat=n):
                arr = np.array(arr)
                p_arr = np.prod(np.where(arr == 1, lam, 1.0 - lam))
                q2 = np.minimum(q1 + arr, cap)
                for fl in itertools.product((0, 1), repeat=len(flag_queues)):
                    f2 = np.tile((c > 0).astype(np.int64), (S, 1))
                    p_fl = 1.0
                    for j, i in enumerate(flag_queues):
                        f2[:, i] = fl[j]
                        p_fl *= c[i] if fl[j] else 1.0 - c[i]
                    pr = pa * p_srv * p_arr * p_fl
                    keep = live & (pr > 0)
                    rows.append(sid[keep])
                    cols.append(_index(q2[keep], f2[keep], cap, flag_queues))
                    probs.append(pr[keep])
    return rows, cols, probs


def _nmodel_transitions(config, cap, pi, queues):
    S = len(queues)
    sid = np.arange(S)
    big = config.uniformization_constant
    lam1, lam2, mu1, mu2, mu3 = config.rates
    rows, cols, probs = [], [], []
    events = [
        (lam1 / big, np.ones(S), np.array([1, 0])),
        (lam2 / big, np.ones(S), np.array([0, 1])),
        (mu1 / big, np.ones(S), np.array([-1, 0])),
        (mu2 / big, pi[:, 0], np.array([-1, 0])),
        (mu3 / big, pi[:, 1], np.array([0, -1])),
    ]
    for rate, gate, delta in events:
        # gated fraction applies the move; the rest of the event is a self-loop
        moved = np.clip(queues + delta, 0, cap)
        for target, w in ((moved, rate * gate), (queues, rate * (1.0 - gate))):
            keep = w > 0
            rows.append(sid[keep])
            cols.append(_index(target[keep], np.zeros((keep.sum(), 0), dtype=np.int64), cap, []))
            probs.append(w[keep])
    return rows, cols, probs


def build_truncated_chain(config: EnvConfig, policy, cap: int,
                          state_limit: int = DEFAULT_STATE_LIMIT) -> TruncatedChain:
    """Enumerate the capped chain under ``policy`` (a name from POLICIES or a callable).

    A callable receives ``(config, queues, flags)`` arrays and returns (S, A) probabilities.
    """
    if cap < 1:
        raise ContractViolation("cap must be >= 1")
    n = config.num_queues
    if config.kind == SERVER_ALLOC:
        c = np.asarray(config.connect_probs)
        flag_queues = [i for i in range(n) if 0.0 < c[i] < 1.0]
        fixed = (c > 0).astype(np.int64)
    else:
        flag_queues, fixed = [], np.zeros(0, dtype=np.int64)
    count = (cap + 1) ** n * 2 ** len(flag_queues)
    if count > state_limit:
        raise ChainSizeError(f"truncated chain has {count} states, limit is {state_limit}")
    queues, flags = _enumerate_states(n, cap, flag_queues, fixed)
    if callable(policy):
        pi = np.asarray(policy(config, queues, flags), dtype=np.float64)
    else:
        pi = policy_probs(policy, config, queues, flags)
    if pi.shape != (len(queues), config.num_actions) or not np.allclose(pi.sum(axis=1), 1.0, atol=1e-12):
        raise ContractViolation("policy must return a probability row per state")
    if config.kind == SERVER_ALLOC:
        rows, cols, probs = _server_alloc_transitions(config, cap, pi, queues, flags, flag_queues)
        cost_of = lambda q: q.sum(axis=1).astype(np.float64)  # noqa: E731
    else:
        rows, cols, probs = _nmodel_transitions(config, cap, pi, queues)
        hc = np.asarray(config.holding_costs)
        cost_of = lambda q: q @ hc  # noqa: E731
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    probs = np.concatenate(probs)
    S = len(queues)
    P = sparse.csr_matrix((probs, (rows, cols)), shape=(S, S))
    P.sum_duplicates()
    true_c = np.bincount(rows, probs * cost_of(queues[cols]), minlength=S)
    return TruncatedChain(cap, queues, flags, P, true_c, (rows, cols, probs))


def stationary_distribution(chain: TruncatedChain, tol: float = 1e-12, max_iter: int = 1_000_000) -> np.ndarray:
    P = chain.P
    S = chain.num_states
    n_comp, labels = connected_components(P, directed=True, connection="strong")
    # a class is closed when no probability mass leaves it
    coo = P.tocoo()
    leaving = np.zeros(n_comp, dtype=bool)
    leaving[labels[coo.row[labels[coo.row] != labels[coo.col]]]] = True
    closed = np.flatnonzero(~leaving)
    if len(closed) != 1:
        comps = [np.flatnonzero(labels == k).tolist() for k in closed]
        raise MultiClassError(f"chain has {len(closed)} closed classes", comps)
    members = np.flatnonzero(labels == closed[0])
    pi = np.zeros(S)
    if len(members) <= DENSE_LIMIT:
        sub = P[members][:, members].toarray()
        A = sub.T - np.eye(len(members))
        A[-1, :] = 1.0
        b = np.zeros(len(members))
        b[-1] = 1.0
        from scipy.linalg import solve

        pi[members] = solve(A, b)
    else:
        sub = P[members][:, members].tocsr()
        x = np.full(len(members), 1.0 / len(members))
        for _ in range(max_iter):
            # lazy chain: same stationary law, no periodicity
            y = 0.5 * (x + sub.T @ x)
            y /= y.sum()
            if np.abs(y - x).sum() < tol:
                x = y
                break
            x = y
        pi[members] = x
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def stationary_average_cost(chain: TruncatedChain, cost_kind="true", p: float = 2.0) -> float:
    """Long-run average of the true cost, or of the shaped cost when ``cost_kind='shaped'``."""
    pi = stationary_distribution(chain)
    if cost_kind == "true":
        return float(pi @ chain.expected_true_cost)
    if cost_kind == "shaped":
        return float(pi @ chain.expected_shaped_cost(p))
    raise ConfigError(f"cost_kind must be 'true' or 'shaped', got {cost_kind!r}")


def oracle_table(config: EnvConfig, cap: int = 10, p: float = 2.0, tol: float = 1e-8):
    """Rows ``(policy, J_true, J_shaped, ok)`` plus whether both orderings agree."""
    rows = []
    for name in POLICIES:
        chain = build_truncated_chain(config, name, cap)
        jt = stationary_average_cost(chain, "true")
        js = stationary_average_cost(chain, "shaped", p)
        rows.append((name, jt, js, abs(js - jt) <= tol * max(1.0, abs(jt))))
    order_true = sorted(range(len(rows)), key=lambda i: (round(rows[i][1], 9), i))
    order_shaped = sorted(range(len(rows)), key=lambda i: (round(rows[i][2], 9), i))
    return rows, order_true == order_shaped
