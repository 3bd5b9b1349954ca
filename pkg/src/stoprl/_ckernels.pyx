# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled rollout kernel. Must stay step-for-step equivalent to _pykernels."""

from libc.math cimport exp, log, log1p, sqrt, tanh, fabs

import numpy as np
cimport numpy as cnp

cnp.import_array()

DEF MAX_WIDTH = 512

cdef enum:
    POLICY_MLP = 0
    POLICY_MAXWEIGHT = 1
    POLICY_RANDOM = 2
    POLICY_CMU = 3


cdef inline double _transform(int kind, double x) nogil:
    cdef double a, s
    if kind == 0 or x == 0.0:
        return x
    s = 1.0 if x > 0 else -1.0
    a = fabs(x)
    if kind == 1:
        return s * (sqrt(a + 1.0) - 1.0)
    if kind == 2:
        return s * log1p(a)
    return s / (1.0 + exp(-a))


cdef inline void _dense(const double[:, ::1] w, const double[::1] b, double* x,
                        int n_in, double* out, int n_out, bint act) nogil:
    cdef int i, j
    cdef double acc
    for j in range(n_out):
        out[j] = 0.0
    for i in range(n_in):
        acc = x[i]
        for j in range(n_out):
            out[j] += acc * w[i, j]
    for j in range(n_out):
        out[j] += b[j]
        if act:
            out[j] = tanh(out[j])


def simulate(int env_kind, const double[::1] env_params, const cnp.int64_t[::1] queues,
             const cnp.int64_t[::1] flags, long cap, const double[:, ::1] uniforms,
             int policy_kind, weights, int transform, cnp.int64_t[:, ::1] states_out,
             cnp.int64_t[::1] actions_out, double[::1] logp_out, double[::1] cost_out):
    """Run ``len(uniforms)`` steps in place; row 0 of ``states_out`` is the start state."""
    cdef Py_ssize_t n_steps = uniforms.shape[0]
    cdef int nq = queues.shape[0]
    cdef int nf = flags.shape[0]
    cdef int d = nq + nf
    cdef int n_act, i, a, t, h1n = 0, h2n = 0
    cdef double lam1 = 0, lam2 = 0, mu1 = 0, mu2 = 0, mu3 = 0, hc1 = 0, hc2 = 0, big = 0
    cdef double x, u0, m, tot, acc, lp, best, wgt, cost
    cdef cnp.int64_t[::1] q = np.array(queues, dtype=np.int64)
    cdef cnp.int64_t[::1] f = np.array(flags, dtype=np.int64)
    cdef double obs[MAX_WIDTH]
    cdef double hid1[MAX_WIDTH]
    cdef double hid2[MAX_WIDTH]
    cdef double logits[MAX_WIDTH]
    cdef const double[:, ::1] w1
    cdef const double[:, ::1] w2
    cdef const double[:, ::1] w3
    cdef const double[::1] b1
    cdef const double[::1] b2
    cdef const double[::1] b3

    if env_kind == 0:
        n_act = nq
    else:
        n_act = 2
        lam1 = env_params[0]; lam2 = env_params[1]; mu1 = env_params[2]
        mu2 = env_params[3]; mu3 = env_params[4]; hc1 = env_params[5]; hc2 = env_params[6]
        big = lam1 + lam2 + mu1 + mu2 + mu3

    if policy_kind == POLICY_MLP:
        w1, b1, w2, b2, w3, b3 = weights
        h1n = w1.shape[1]
        h2n = w2.shape[1]
        if d > MAX_WIDTH or h1n > MAX_WIDTH or h2n > MAX_WIDTH or w3.shape[1] != n_act:
            raise ValueError("network shape unsupported by the compiled kernel")
        if w1.shape[0] != d:
            raise ValueError("policy input width does not match the state dimension")

    for i in range(nq):
        states_out[0, i] = q[i]
    for i in range(nf):
        states_out[0, nq + i] = f[i]

    with nogil:
        for t in range(n_steps):
            u0 = uniforms[t, 0]
            if policy_kind == POLICY_MLP:
                for i in range(nq):
                    obs[i] = _transform(transform, <double>q[i])
                for i in range(nf):
                    obs[nq + i] = _transform(transform, <double>f[i])
                _dense(w1, b1, obs, d, hid1, h1n, True)
                _dense(w2, b2, hid1, h1n, hid2, h2n, True)
                _dense(w3, b3, hid2, h2n, logits, n_act, False)
                m = logits[0]
                for i in range(1, n_act):
                    if logits[i] > m:
                        m = logits[i]
                tot = 0.0
                for i in range(n_act):
                    logits[i] = logits[i] - m
                    tot += exp(logits[i])
                acc = 0.0
                a = n_act - 1
                for i in range(n_act):
                    acc += exp(logits[i]) / tot
                    if u0 < acc:
                        a = i
                        break
                lp = logits[a] - log(tot)
            elif policy_kind == POLICY_RANDOM:
                a = <int>(u0 * n_act)
                if a > n_act - 1:
                    a = n_act - 1
                lp = -log(<double>n_act)
            else:
                a = 0
                best = -2.0
                for i in range(n_act):
                    if env_kind == 0:
                        if policy_kind == POLICY_MAXWEIGHT:
                            wgt = f[i] * env_params[nq + i] * q[i]
                        else:
                            wgt = env_params[nq + i] if q[i] > 0 else -1.0
                    else:
                        if q[i] > 0:
                            wgt = hc1 * mu2 if i == 0 else hc2 * mu3
                        else:
                            wgt = -1.0
                    if wgt > best:
                        best = wgt
                        a = i
                lp = 0.0

            if env_kind == 0:
                if f[a] == 1 and uniforms[t, 1] < env_params[nq + a] and q[a] > 0:
                    q[a] -= 1
                cost = 0.0
                for i in range(nq):
                    if uniforms[t, 2 + i] < env_params[i]:
                        q[i] += 1
                    if cap >= 0 and q[i] > cap:
                        q[i] = cap
                    cost += q[i]
                for i in range(nq):
                    f[i] = 1 if uniforms[t, 2 + nq + i] < env_params[2 * nq + i] else 0
            else:
                x = uniforms[t, 1] * big
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
                    if q[0] > cap:
                        q[0] = cap
                    if q[1] > cap:
                        q[1] = cap
                cost = hc1 * q[0] + hc2 * q[1]

            for i in range(nq):
                states_out[t + 1, i] = q[i]
            for i in range(nf):
                states_out[t + 1, nq + i] = f[i]
            actions_out[t] = a
            logp_out[t] = lp
            cost_out[t] = cost
    return n_steps
