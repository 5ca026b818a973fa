"""Pure-numpy scan kernels: the fallback backend.

Each function matches its twin in backend_numba exactly in signature and
semantics. The recurrence is inherently sequential, so this backend pays one
round of numpy dispatch per timestep; it exists for environments without a
working numba and as an independent reference in backend-equivalence tests.

All kernels compute, per timestep t:

    h <- A_t h + u[t]          (A dense (N,N), diagonal (N,), or scalar a[t])
    y[t, p] = sum_n cs[t, n, p] * h[n, p]

``*_last`` variants return (y, final state); ``*_traj`` variants return
(y, states) with states[0] the initial state and states[t] the state after
step t. Inputs are trusted (validated by the wrappers in moessm.ssm).
"""

from __future__ import annotations

import numpy as np


def scan_dense_last(a, u, cs, h0):
    t_len = u.shape[0]
    y = np.empty((t_len, u.shape[2]), dtype=u.dtype)
    h = h0.copy()
    for t in range(t_len):
        h = np.dot(a, h)
        h += u[t]
        np.einsum("np,np->p", cs[t], h, out=y[t])
    return y, h


def scan_dense_traj(a, u, cs, h0):
    t_len, n, p = u.shape
    y = np.empty((t_len, p), dtype=u.dtype)
    hs = np.empty((t_len + 1, n, p), dtype=u.dtype)
    hs[0] = h0
    for t in range(t_len):
        np.dot(a, hs[t], out=hs[t + 1])
        hs[t + 1] += u[t]
        np.einsum("np,np->p", cs[t], hs[t + 1], out=y[t])
    return y, hs


def scan_diag_last(a, u, cs, h0):
    t_len = u.shape[0]
    y = np.empty((t_len, u.shape[2]), dtype=u.dtype)
    h = h0.copy()
    av = a[:, None]
    for t in range(t_len):
        h *= av
        h += u[t]
        np.einsum("np,np->p", cs[t], h, out=y[t])
    return y, h


def scan_diag_traj(a, u, cs, h0):
    t_len, n, p = u.shape
    y = np.empty((t_len, p), dtype=u.dtype)
    hs = np.empty((t_len + 1, n, p), dtype=u.dtype)
    hs[0] = h0
    av = a[:, None]
    for t in range(t_len):
        np.multiply(hs[t], av, out=hs[t + 1])
        hs[t + 1] += u[t]
        np.einsum("np,np->p", cs[t], hs[t + 1], out=y[t])
    return y, hs


def scan_scalar_last(a, u, cs, h0):
    t_len = u.shape[0]
    y = np.empty((t_len, u.shape[2]), dtype=u.dtype)
    h = h0.copy()
    for t in range(t_len):
        h *= a[t]
        h += u[t]
        np.einsum("np,np->p", cs[t], h, out=y[t])
    return y, h


def scan_scalar_traj(a, u, cs, h0):
    t_len, n, p = u.shape
    y = np.empty((t_len, p), dtype=u.dtype)
    hs = np.empty((t_len + 1, n, p), dtype=u.dtype)
    hs[0] = h0
    for t in range(t_len):
        np.multiply(hs[t], a[t], out=hs[t + 1])
        hs[t + 1] += u[t]
        np.einsum("np,np->p", cs[t], hs[t + 1], out=y[t])
    return y, hs
