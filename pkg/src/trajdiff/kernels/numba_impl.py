"""Numba-compiled hot kernels, loop-for-loop equivalents of numpy_impl.

prange iterations write disjoint output slices and every reduction is a
sequential scalar loop, so results are bit-identical across thread counts.
fastmath stays off for the same reason.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def attention(q, k, v):
    bsz, n, d = q.shape
    m = k.shape[1]
    dv = v.shape[2]
    scale = 1.0 / np.sqrt(d)
    out = np.empty((bsz, n, dv))
    for b in prange(bsz):
        row = np.empty(m)
        for i in range(n):
            hi = -np.inf
            for j in range(m):
                s = 0.0
                for t in range(d):
                    s += q[b, i, t] * k[b, j, t]
                row[j] = s * scale
                if row[j] > hi:
                    hi = row[j]
            tot = 0.0
            for j in range(m):
                row[j] = np.exp(row[j] - hi)
                tot += row[j]
            for t in range(dv):
                acc = 0.0
                for j in range(m):
                    acc += row[j] * v[b, j, t]
                out[b, i, t] = acc / tot
    return out


# no prange here: the fully-suppressed-row raise would block the parallel
# transform; callers precheck, this is the backstop
@njit(cache=True)
def cross_guided(q, k, v, keep, boost):
    bsz, n, d = q.shape
    m = k.shape[0]
    dv = v.shape[1]
    scale = 1.0 / np.sqrt(d)
    out = np.empty((bsz, n, dv))
    for b in range(bsz):
        row = np.empty(m)
        for i in range(n):
            hi = -np.inf
            for j in range(m):
                if keep[b, i, j] != 0:
                    s = 0.0
                    for t in range(d):
                        s += q[b, i, t] * k[j, t]
                    row[j] = s * scale
                    if row[j] > hi:
                        hi = row[j]
                else:
                    row[j] = -np.inf
            if hi == -np.inf:
                raise ValueError("cross-attention row fully suppressed")
            tot = 0.0
            for j in range(m):
                row[j] = np.exp(row[j] - hi)
                tot += row[j]
            for t in range(dv):
                acc = 0.0
                for j in range(m):
                    acc += (row[j] / tot + boost[b, i, j]) * v[j, t]
                out[b, i, t] = acc
    return out


@njit(cache=True, parallel=True)
def self_guided(q, k, v, w):
    bsz, n, d = q.shape
    m = k.shape[1]
    dv = v.shape[2]
    scale = 1.0 / np.sqrt(d)
    out = np.empty((bsz, n, dv))
    for b in prange(bsz):
        row = np.empty(m)
        for i in range(n):
            hi = -np.inf
            for j in range(m):
                s = 0.0
                for t in range(d):
                    s += q[b, i, t] * k[b, j, t]
                row[j] = s * scale * w[b, i, j]
                if row[j] > hi:
                    hi = row[j]
            tot = 0.0
            for j in range(m):
                row[j] = np.exp(row[j] - hi)
                tot += row[j]
            for t in range(dv):
                acc = 0.0
                for j in range(m):
                    acc += row[j] * v[b, j, t]
                out[b, i, t] = acc / tot
    return out


@njit(cache=True, parallel=True)
def conv3x3(x, w, b):
    ci, f, h, wd = x.shape
    co = w.shape[0]
    out = np.empty((co, f, h, wd))
    for o in prange(co):
        out[o, :, :, :] = b[o]
        for c in range(ci):
            for di in range(3):
                i0 = max(0, 1 - di)
                i1 = min(h, h + 1 - di)
                for dj in range(3):
                    j0 = max(0, 1 - dj)
                    j1 = min(wd, wd + 1 - dj)
                    wv = w[o, c, di, dj]
                    for fr in range(f):
                        for i in range(i0, i1):
                            ii = i + di - 1
                            for j in range(j0, j1):
                                out[o, fr, i, j] += wv * x[c, fr, ii, j + dj - 1]
    return out


@njit(cache=True, parallel=True)
def tconv3(x, w, b):
    ci, f, h, wd = x.shape
    co = w.shape[0]
    out = np.empty((co, f, h, wd))
    for o in prange(co):
        out[o, :, :, :] = b[o]
        for c in range(ci):
            for dt in range(3):
                f0 = max(0, 1 - dt)
                f1 = min(f, f + 1 - dt)
                wv = w[o, c, dt]
                for fr in range(f0, f1):
                    ff = fr + dt - 1
                    for i in range(h):
                        for j in range(wd):
                            out[o, fr, i, j] += wv * x[c, ff, i, j]
    return out
