"""Exact O(N^2) pair sums over particles with the diagonal excluded."""
import math

import numpy as np
from numba import njit

_INV_2PI = 1.0 / (2.0 * math.pi)


@njit(cache=True)
def pair_grad_sum(Q):
    """Return (F, dmin) with F[i] = sum_{j != i} grad g(q_i - q_j)."""
    N = Q.shape[0]
    F = np.zeros((N, 2))
    dmin2 = np.inf
    for i in range(N):
        xi = Q[i, 0]
        yi = Q[i, 1]
        for j in range(i + 1, N):
            dx = xi - Q[j, 0]
            dy = yi - Q[j, 1]
            r2 = dx * dx + dy * dy
            if r2 < dmin2:
                dmin2 = r2
            c = -_INV_2PI / r2
            F[i, 0] += c * dx
            F[i, 1] += c * dy
            F[j, 0] -= c * dx
            F[j, 1] -= c * dy
    return F, math.sqrt(dmin2)


@njit(cache=True)
def pair_energy(Q, w):
    """sum_{k != l} w_k w_l g(x_k - x_l) and the minimum pair distance."""
    N = Q.shape[0]
    s = 0.0
    dmin2 = np.inf
    for i in range(N):
        for j in range(i + 1, N):
            dx = Q[i, 0] - Q[j, 0]
            dy = Q[i, 1] - Q[j, 1]
            r2 = dx * dx + dy * dy
            if r2 < dmin2:
                dmin2 = r2
            s += w[i] * w[j] * (-0.5 * _INV_2PI * math.log(r2))
    return 2.0 * s, math.sqrt(dmin2)


@njit(cache=True)
def pair_rate(Q, Vq, w):
    """sum_{k != l} w_k w_l (v(x_k) - v(x_l)) . grad g(x_k - x_l)."""
    N = Q.shape[0]
    s = 0.0
    for i in range(N):
        for j in range(i + 1, N):
            dx = Q[i, 0] - Q[j, 0]
            dy = Q[i, 1] - Q[j, 1]
            r2 = dx * dx + dy * dy
            du = Vq[i, 0] - Vq[j, 0]
            dv = Vq[i, 1] - Vq[j, 1]
            s += w[i] * w[j] * (-_INV_2PI) * (du * dx + dv * dy) / r2
    return 2.0 * s


def min_pair_distance(Q: np.ndarray) -> float:
    Q = np.ascontiguousarray(Q, dtype=float)
    if Q.shape[0] < 2:
        return np.inf
    return pair_energy(Q, np.zeros(Q.shape[0]))[1]
