"""Decayed connectionist subsequence aligner (the fixed-weight baseline).

Forward::

    alpha[i, j] = alpha[i-1, j]
                + sum_{k>=1} delta**k * alpha[i-1, j-k] * y[i, j] * g_k
    g_1 = phi(C_{j-1} | C_j),  g_k = 1 for k > 1

The backward pass mirrors it with ``beta[i+1, j+k]`` and ``phi(C_j | C_{j+1})``.
Column -1 (before the first token) is an all-zero boundary.
"""
from __future__ import annotations

from typing import Optional

import numpy as np


def _check(Y, transition, delta):
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.size == 0:
        raise ValueError("emission grid must be a non-empty 2-D array")
    if not 0.0 <= delta < 1.0:
        raise ValueError("decay must lie in [0, 1)")
    L = Y.shape[1]
    trans = np.ones((L, L)) if transition is None else np.asarray(transition, dtype=np.float64)
    if trans.shape != (L, L):
        raise ValueError(f"transition must be ({L}, {L})")
    return Y, trans


def csa_step(prev_row, y_row, transition, delta: float, max_k: Optional[int] = None) -> np.ndarray:
    """One forward row update given the previous row."""
    prev_row = np.asarray(prev_row, dtype=np.float64)
    L = prev_row.size
    out = prev_row.copy()
    for j in range(L):
        kmax = j if max_k is None else min(j, max_k)
        acc = 0.0
        for k in range(1, kmax + 1):
            gate = transition[j - 1, j] if k == 1 else 1.0
            acc += delta ** k * prev_row[j - k] * gate
        out[j] += acc * y_row[j]
    return out


def csa_forward(Y, transition=None, delta: float = 0.5, max_k: Optional[int] = None) -> np.ndarray:
    """Forward scores; row 0 holds ``y[0, 0]`` in the first cell and zeros elsewhere."""
    Y, trans = _check(Y, transition, delta)
    T, L = Y.shape
    alpha = np.zeros((T, L))
    alpha[0, 0] = Y[0, 0]
    for i in range(1, T):
        alpha[i] = csa_step(alpha[i - 1], Y[i], trans, delta, max_k)
    return alpha


def csa_backward(Y, transition=None, delta: float = 0.5, max_k: Optional[int] = None) -> np.ndarray:
    """Backward scores; the last row holds ``y[-1, -1]`` in the terminal cell."""
    Y, trans = _check(Y, transition, delta)
    T, L = Y.shape
    beta = np.zeros((T, L))
    beta[-1, -1] = Y[-1, -1]
    for i in range(T - 2, -1, -1):
        nxt = beta[i + 1]
        for j in range(L):
            kmax = L - 1 - j if max_k is None else min(L - 1 - j, max_k)
            acc = 0.0
            for k in range(1, kmax + 1):
                gate = trans[j, j + 1] if k == 1 else 1.0
                acc += delta ** k * nxt[j + k] * gate
            beta[i, j] = nxt[j] + acc * Y[i, j]
    return beta
