"""Compiled inner loops for one exploration phase.

The arithmetic mirrors the pure-Python agents operation for operation
(sequential sums, same update expressions), and randomness comes from
uniforms pre-drawn by the agents and the environment, so both engines give
bitwise identical trajectories.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def next_state(row, u):
    c = 0.0
    last = -1
    for t in range(row.shape[0]):
        p = row[t]
        if p > 0.0:
            last = t
        c += p
        if u < c:
            return t
    return last


@njit(cache=True)
def tabular_phase(Q, n_act, baseline, rho, gamma, eta, ua, ue, kern, rew, strides,
                  absorbing, restart_to, restart, s0):
    N = Q.shape[0]
    T = ue.shape[0]
    s = s0
    a = np.zeros(N, dtype=np.int64)
    for t in range(T):
        j = 0
        for i in range(N):
            n = n_act[i, s]
            if ua[i, t, 0] < rho[i]:
                ai = int(ua[i, t, 1] * n)
                if ai >= n:
                    ai = n - 1
            else:
                ai = baseline[i, s]
            a[i] = ai
            j += ai * strides[i]
        s2 = next_state(kern[s, j], ue[t, 0])
        for i in range(N):
            m = Q[i, s2, 0]
            for b in range(1, n_act[i, s2]):
                if Q[i, s2, b] > m:
                    m = Q[i, s2, b]
            target = rew[i, s, j] + gamma[i] * m
            Q[i, s, a[i]] = (1.0 - eta[i]) * Q[i, s, a[i]] + eta[i] * target
        if restart and absorbing[s2]:
            k = int(ue[t, 1] * restart_to.shape[0])
            if k >= restart_to.shape[0]:
                k = restart_to.shape[0] - 1
            s2 = restart_to[k]
        s = s2
    return s


@njit(cache=True)
def _dot(x, y, d):
    acc = 0.0
    for k in range(d):
        acc += x[k] * y[k]
    return acc


@njit(cache=True)
def linear_phase(theta, dims, feats, n_act, baseline, rho, gamma, eta, ua, ue, kern, rew,
                 strides, absorbing, restart_to, restart, s0):
    N = theta.shape[0]
    T = ue.shape[0]
    s = s0
    a = np.zeros(N, dtype=np.int64)
    for t in range(T):
        j = 0
        for i in range(N):
            n = n_act[i, s]
            if ua[i, t, 0] < rho[i]:
                ai = int(ua[i, t, 1] * n)
                if ai >= n:
                    ai = n - 1
            else:
                ai = baseline[i, s]
            a[i] = ai
            j += ai * strides[i]
        s2 = next_state(kern[s, j], ue[t, 0])
        for i in range(N):
            d = dims[i]
            m = _dot(feats[i, s2, 0], theta[i], d)
            for b in range(1, n_act[i, s2]):
                v = _dot(feats[i, s2, b], theta[i], d)
                if v > m:
                    m = v
            cur = _dot(feats[i, s, a[i]], theta[i], d)
            coef = eta[i] * (rew[i, s, j] + gamma[i] * m - cur)
            for k in range(d):
                theta[i, k] = theta[i, k] + coef * feats[i, s, a[i], k]
        if restart and absorbing[s2]:
            k = int(ue[t, 1] * restart_to.shape[0])
            if k >= restart_to.shape[0]:
                k = restart_to.shape[0] - 1
            s2 = restart_to[k]
        s = s2
    return s
