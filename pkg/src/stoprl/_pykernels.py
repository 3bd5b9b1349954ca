"""Pure-Python rollout kernel; reference twin of ``_ckernels.pyx``."""

import math

import numpy as np

POLICY_MLP = 0
POLICY_MAXWEIGHT = 1
POLICY_RANDOM = 2
POLICY_CMU = 3

_SERVER_ALLOC = 0


def _transform(kind, x):
    if kind == 0:
        return x.astype(np.float64)
    a = np.abs(x).astype(np.float64)
    s = np.sign(x)
    if kind == 1:
        return s * (np.sqrt(a + 1.0) - 1.0)
    if kind == 2:
        return s * np.log1p(a)
    return s / (1.0 + np.exp(-a))


def _sample(logits, u):
    m = logits.max()
    z = logits - m
    e = np.exp(z)
    tot = e.sum()
    acc = 0.0
    n = len(logits)
    a = n - 1
    for i in range(n):
        acc += e[i] / tot
        if u < acc:
            a = i
            break
    return a, float(z[a] - math.log(tot))


def simulate(env_kind, env_params, queues, flags, cap, uniforms, policy_kind,
             weights, transform, states_out, actions_out, logp_out, cost_out):
    """Run ``len(uniforms)`` steps in place; row 0 of ``states_out`` is the start state."""
    n_steps = uniforms.shape[0]
    nq = queues.shape[0]
    nf = flags.shape[0]
    q = np.array(queues, dtype=np.int64)
    f = np.array(flags, dtype=np.int64)
    states_out[0, :nq] = q
    states_out[0, nq:] = f
    if env_kind == _SERVER_ALLOC:
        lam = env_params[:nq]
        p = env_params[nq:2 * nq]
        c = env_params[2 * nq:3 * nq]
        n_act = nq
    else:
        lam1, lam2, mu1, mu2, mu3, h1, h2 = (float(v) for v in env_params[:7])
        big = lam1 + lam2 + mu1 + mu2 + mu3
        n_act = 2
    if policy_kind == POLICY_MLP:
        w1, b1, w2, b2, w3, b3 = weights
    for t in range(n_steps):
        u = uniforms[t]
        if policy_kind == POLICY_MLP:
            x = _transform(transform, np.concatenate([q, f]))
            h = np.tanh(x @ w1 + b1)
            h = np.tanh(h @ w2 + b2)
            a, lp = _sample(h @ w3 + b3, u[0])
        elif policy_kind == POLICY_RANDOM:
            a = min(int(u[0] * n_act), n_act - 1)
            lp = -math.log(n_act)
        else:
            if env_kind == _SERVER_ALLOC:
                if policy_kind == POLICY_MAXWEIGHT:
                    w = f * p * q
                else:
                    w = np.where(q > 0, p, -1.0)
            else:
                w = np.where(q > 0, np.array([h1 * mu2, h2 * mu3]), -1.0)
            a = int(np.argmax(w))
            lp = 0.0
        if env_kind == _SERVER_ALLOC:
            if f[a] == 1 and u[1] < p[a] and q[a] > 0:
                q[a] -= 1
            q += (u[2:2 + nq] < lam)
            if cap >= 0:
                np.minimum(q, cap, out=q)
            f = (u[2 + nq:2 + 2 * nq] < c).astype(np.int64)
            cost = float(q.sum())
        else:
            x = u[1] * big
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
            if cap >= 0:
                np.minimum(q, cap, out=q)
            cost = h1 * q[0] + h2 * q[1]
        states_out[t + 1, :nq] = q
        states_out[t + 1, nq:] = f
        actions_out[t] = a
        logp_out[t] = lp
        cost_out[t] = cost
    return n_steps
