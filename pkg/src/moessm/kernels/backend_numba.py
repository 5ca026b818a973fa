"""Numba-compiled scan kernels: the default backend.

Twins of backend_numpy with identical signatures and semantics; see that
module for the contract. The per-timestep loop is where numba earns its keep:
the diagonal and scalar updates run as single fused native loops instead of
three numpy passes plus dispatch per step. The dense update keeps np.dot so
the N x N matmul still goes through BLAS.

cache=True persists compiled code next to the package, so only the first call
in a fresh environment pays compilation.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def scan_dense_last(a, u, cs, h0):
    t_len, n, p = u.shape
    y = np.empty((t_len, p), dtype=u.dtype)
    h = h0.copy()
    for t in range(t_len):
        h = np.dot(a, h)
        h += u[t]
        for j in range(p):
            acc = 0.0
            for i in range(n):
                acc += cs[t, i, j] * h[i, j]
            y[t, j] = acc
    return y, h


@njit(cache=True)
def scan_dense_traj(a, u, cs, h0):
    t_len, n, p = u.shape
    y = np.empty((t_len, p), dtype=u.dtype)
    hs = np.empty((t_len + 1, n, p), dtype=u.dtype)
    hs[0] = h0
    for t in range(t_len):
        hn = np.dot(a, hs[t])
        for i in range(n):
            for j in range(p):
                hs[t + 1, i, j] = hn[i, j] + u[t, i, j]
        for j in range(p):
            acc = 0.0
            for i in range(n):
                acc += cs[t, i, j] * hs[t + 1, i, j]
            y[t, j] = acc
    return y, hs


@njit(cache=True)
def scan_diag_last(a, u, cs, h0):
    t_len, n, p = u.shape
    y = np.empty((t_len, p), dtype=u.dtype)
    h = h0.copy()
    for t in range(t_len):
        for i in range(n):
            ai = a[i]
            for j in range(p):
                h[i, j] = ai * h[i, j] + u[t, i, j]
        for j in range(p):
            acc = 0.0
            for i in range(n):
                acc += cs[t, i, j] * h[i, j]
            y[t, j] = acc
    return y, h


@njit(cache=True)
def scan_diag_traj(a, u, cs, h0):
    t_len, n, p = u.shape
    y = np.empty((t_len, p), dtype=u.dtype)
    hs = np.empty((t_len + 1, n, p), dtype=u.dtype)
    hs[0] = h0
    for t in range(t_len):
        for i in range(n):
            ai = a[i]
            for j in range(p):
                hs[t + 1, i, j] = ai * hs[t, i, j] + u[t, i, j]
        for j in range(p):
            acc = 0.0
            for i in range(n):
                acc += cs[t, i, j] * hs[t + 1, i, j]
            y[t, j] = acc
    return y, hs


@njit(cache=True)
def scan_scalar_last(a, u, cs, h0):
    t_len, n, p = u.shape
    y = np.empty((t_len, p), dtype=u.dtype)
    h = h0.copy()
    for t in range(t_len):
        at = a[t]
        for i in range(n):
            for j in range(p):
                h[i, j] = at * h[i, j] + u[t, i, j]
        for j in range(p):
            acc = 0.0
            for i in range(n):
                acc += cs[t, i, j] * h[i, j]
            y[t, j] = acc
    return y, h


@njit(cache=True)
def scan_scalar_traj(a, u, cs, h0):
    t_len, n, p = u.shape
    y = np.empty((t_len, p), dtype=u.dtype)
    hs = np.empty((t_len + 1, n, p), dtype=u.dtype)
    hs[0] = h0
    for t in range(t_len):
        at = a[t]
        for i in range(n):
            for j in range(p):
                hs[t + 1, i, j] = at * hs[t, i, j] + u[t, i, j]
        for j in range(p):
            acc = 0.0
            for i in range(n):
                acc += cs[t, i, j] * hs[t + 1, i, j]
            y[t, j] = acc
    return y, hs
