"""Compiled inner loops for the sampler and the kernel estimator.

Component-major layouts: ``G`` and ``D`` have shape (m, n).
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def lse_sum(lw, A):
    """sum_i log sum_j exp(lw[j] + A[j, i])."""
    m, n = A.shape
    mx = np.full(n, -np.inf)
    for j in range(m):
        for i in range(n):
            v = lw[j] + A[j, i]
            if v > mx[i]:
                mx[i] = v
    acc = np.zeros(n)
    for j in range(m):
        for i in range(n):
            acc[i] += math.exp(lw[j] + A[j, i] - mx[i])
    total = 0.0
    for i in range(n):
        total += mx[i] + math.log(acc[i])
    return total


@njit(cache=True)
def lse_sum2(lw, A, B):
    """sum_i log sum_j exp(lw[j] + A[j, i] + B[j, i])."""
    m, n = A.shape
    mx = np.full(n, -np.inf)
    for j in range(m):
        for i in range(n):
            v = lw[j] + A[j, i] + B[j, i]
            if v > mx[i]:
                mx[i] = v
    acc = np.zeros(n)
    for j in range(m):
        for i in range(n):
            acc[i] += math.exp(lw[j] + A[j, i] + B[j, i] - mx[i])
    total = 0.0
    for i in range(n):
        total += mx[i] + math.log(acc[i])
    return total


@njit(cache=True)
def sample_allocations(lw, G, D, u):
    """Draw z_i with P(z_i = j) ∝ exp(lw[j] + G[j, i] + D[j, i]) using uniforms ``u``."""
    m, n = G.shape
    z = np.empty(n, dtype=np.int64)
    p = np.empty(m)
    for i in range(n):
        mx = -np.inf
        for j in range(m):
            p[j] = lw[j] + G[j, i] + D[j, i]
            if p[j] > mx:
                mx = p[j]
        tot = 0.0
        for j in range(m):
            p[j] = math.exp(p[j] - mx)
            tot += p[j]
        target = u[i] * tot
        c = 0.0
        k = m - 1
        for j in range(m):
            c += p[j]
            if target < c:
                k = j
                break
        z[i] = k
    return z


@njit(cache=True)
def gauss_rows(centers, points, h):
    """exp(-0.5 * sum_k ((points[i, k] - centers[j, k]) / h[k])**2), shape (len(points), len(centers))."""
    ni, d = points.shape
    nj = centers.shape[0]
    out = np.empty((ni, nj))
    for i in range(ni):
        for j in range(nj):
            s = 0.0
            for k in range(d):
                t = (points[i, k] - centers[j, k]) / h[k]
                s += t * t
            out[i, j] = math.exp(-0.5 * s)
    return out
