"""Compiled inner loops for the Viterbi steps.

Both kernels resolve ties to the lowest source index, and both treat an
all ``-inf`` candidate set as coming from state 0, so the banded kernel
reproduces the dense one bit for bit on band-plus-floor matrices.
"""

import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True, nogil=True)
def banded_step(delta, in_log, w2, log_mu, log_b, new_delta, psi):
    n, width = in_log.shape
    gbest = NEG_INF
    gj = 0
    for j in range(n):
        if delta[j] > gbest:
            gbest = delta[j]
            gj = j
    floor = gbest + log_mu
    for i in range(n):
        best = NEG_INF
        bj = n
        lo = i - w2
        for k in range(width):
            j = lo + k
            if j < 0 or j >= n:
                continue
            v = delta[j] + in_log[i, k]
            if v > best:
                best = v
                bj = j
        if floor > best:
            best = floor
            bj = gj
        elif floor == best and gj < bj:
            bj = gj
        if best == NEG_INF:
            bj = 0
        new_delta[i] = best + log_b[i]
        psi[i] = bj


@njit(cache=True, nogil=True)
def dense_step(delta, log_a_t, log_b, new_delta, psi):
    n = delta.shape[0]
    for i in range(n):
        best = NEG_INF
        bj = 0
        row = log_a_t[i]
        for j in range(n):
            v = delta[j] + row[j]
            if v > best:
                best = v
                bj = j
        new_delta[i] = best + log_b[i]
        psi[i] = bj
