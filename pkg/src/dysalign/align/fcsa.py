"""Full-stack neural forward-backward recursion over the (frame, token) lattice.

Each cell combines six transition stacks.  Stacks 1-4 are scored by a shared
MLP ``f1`` on (previous score, transition probability, emission), two lookups
per stack, squashed by a sigmoid.  Stacks 5 and 6 are passive constants.  The
cell value is ``sigmoid(f2(sum of stack scores))``.

Lookups per stack for the forward pass at cell (i, j), 0-based::

    stack 1: (i-1, j)     and (i-1, j-1)
    stack 2: (i-k, j-1)   and (i-k^, j-1)       copy
    stack 3: (i-k, j-k)   and (i-k^, j-k^)      skip
    stack 4: (i-1, j+k)   and (i-1, j+k^)       non-monotonic

with offsets ``1 <= k <= k^ <= bound``.  The backward pass uses the mirrored
lookups ``(i + a, j + b)``.  A lookup that falls outside the grid drops its
``f1`` term; a cell with no legal offsets drops both terms of stacks 2-4.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..grad import (MLP, Parameter, Tensor, as_tensor, gather_rows, getitem, matmul, mean, mlp_forward, mul, reshape,
                    sigmoid, stack, transpose, unstack, where)

PASS_INSERTED = 1.0
PASS_REMOVED = 1e-5
N_STACKS = 6


class FcsaNetwork:
    """The two learned score networks ``f1`` (3 -> 1) and ``f2`` (1 -> 1)."""

    def __init__(self, rng: np.random.Generator, hidden: int = 8, name: str = "fcsa"):
        self.f1 = MLP(3, hidden, 1, rng, f"{name}.f1")
        self.f2 = MLP(1, hidden, 1, rng, f"{name}.f2")

    def parameters(self) -> list[Parameter]:
        return self.f1.parameters() + self.f2.parameters()


def forward_bound(T: int, L: int) -> np.ndarray:
    i, j = np.meshgrid(np.arange(T), np.arange(L), indexing="ij")
    return np.minimum(i, j)


def backward_bound(T: int, L: int) -> np.ndarray:
    i, j = np.meshgrid(np.arange(T), np.arange(L), indexing="ij")
    return np.maximum(np.minimum(T - 1 - i, L - 1 - j) - 1, 0)


@dataclass(frozen=True)
class Offsets:
    """Per-cell offsets ``k <= k_hat``; zero marks a cell without legal offsets."""

    k: np.ndarray
    k_hat: np.ndarray

    def mirrored(self) -> "Offsets":
        return Offsets(self.k[::-1, ::-1].copy(), self.k_hat[::-1, ::-1].copy())

    def check(self, bound: np.ndarray) -> None:
        k, kh = self.k, self.k_hat
        if k.shape != bound.shape or kh.shape != bound.shape:
            raise ValueError("offset arrays do not match the grid")
        active = k > 0
        if np.any((kh > 0) != active):
            raise ValueError("k and k_hat must be both zero or both positive")
        if np.any(active & ((kh < k) | (kh > bound))):
            raise ValueError("offsets violate k <= k_hat <= bound")


def sample_offsets(bound: np.ndarray, rng: np.random.Generator) -> Offsets:
    """Uniform ``k`` in ``[1, bound]`` then uniform ``k_hat`` in ``[k, bound]``."""
    u1 = rng.random(bound.shape)
    u2 = rng.random(bound.shape)
    k = np.where(bound > 0, 1 + np.floor(u1 * bound), 0).astype(np.int64)
    k_hat = np.where(bound > 0, k + np.floor(u2 * (bound - k + 1)), 0).astype(np.int64)
    return Offsets(k, k_hat)


@dataclass
class FcsaGrid:
    """Scores of one direction: ``scores`` is (T, L); ``stacks`` is (6, T, L)."""

    scores: Tensor
    stacks: np.ndarray
    offsets: Offsets

    @property
    def values(self) -> np.ndarray:
        return self.scores.data


def _lookups(T: int, L: int, k: np.ndarray, k_hat: np.ndarray, sign: int):
    """Row, column and validity of the 8 lookup terms of every cell, each (T, 8, L).

    ``sign`` is -1 for the forward pass and +1 for the backward pass.
    """
    i = np.arange(T)[:, None, None]
    j = np.arange(L)[None, None, :]
    k, kh = k[:, None, :], k_hat[:, None, :]
    one = np.ones_like(k)
    a = np.concatenate([one, one, k, kh, k, kh, one, one], axis=1)
    b = np.concatenate([0 * one, one, one, one, k, kh, -k, -kh], axis=1)
    rows, cols = i + sign * a, j + sign * b
    needs_k = np.array([False, False, True, True, True, True, True, True])[None, :, None]
    valid = (rows >= 0) & (rows < T) & (cols >= 0) & (cols < L) & (~needs_k | (k > 0))
    return rows, cols, valid


def _run(Y, transition, net: FcsaNetwork, offsets: Offsets, reverse: bool) -> FcsaGrid:
    Y = as_tensor(Y)
    Phi = as_tensor(transition)
    T, L = Y.shape
    if Phi.shape != (L, L):
        raise ValueError(f"transition matrix must be ({L}, {L}), got {Phi.shape}")
    sign = 1 if reverse else -1
    order = range(T - 1, -1, -1) if reverse else range(T)
    start = (T - 1, L - 1) if reverse else (0, 0)
    stacks = np.empty((N_STACKS, T, L))
    stacks[4] = PASS_INSERTED
    stacks[5] = PASS_REMOVED
    jj = np.arange(L)
    H = net.f1.l1.W.shape[0]

    r_all, c_all, v_all = _lookups(T, L, offsets.k, offsets.k_hat, sign)
    cc = np.where(v_all, c_all, 0)
    masks = v_all.astype(np.float64)

    # the transition and emission inputs of f1 do not depend on the recursion,
    # so their share of the first layer is computed for all rows at once
    W1 = net.f1.l1.W  # (H, 3) over (previous score, transition, emission)
    trans = getitem(Phi, (np.tile(jj, 8 * T), cc.ravel()))
    emit = reshape(getitem(Y, (slice(None), np.tile(jj, 8))), (T * 8 * L,))
    static = matmul(stack([trans, emit], axis=1), transpose(getitem(W1, (slice(None), np.array([1, 2])))))
    static = unstack(reshape(static + net.f1.l1.b, (T, 8 * L, H)))
    w_prev = getitem(W1, (slice(None), np.array([0])))  # (H, 1)
    f1_out, f2 = net.f1.l2, net.f2

    rows: dict[int, Tensor] = {}
    for i in order:
        prev = gather_rows(rows, r_all[i].ravel(), c_all[i].ravel(), v_all[i].ravel())
        f1 = mlp_forward(reshape(prev, (8 * L, 1)), w_prev, static[i], f1_out.W, f1_out.b)
        terms = mul(reshape(f1, (8, L)), masks[i])
        active = sigmoid(reshape(terms, (4, 2, L)).sum(axis=1))  # stacks 1-4
        stacks[:4, i] = active.data
        total = active.sum(axis=0) + (PASS_INSERTED + PASS_REMOVED)
        row = sigmoid(reshape(f2(reshape(total, (L, 1))), (L,)))
        if i == start[0]:
            row = where(jj == start[1], 1.0, row)
        rows[i] = row

    scores = stack([rows[i] for i in range(T)])
    return FcsaGrid(scores, stacks, offsets)


def fcsa_forward(Y, transition, net: FcsaNetwork, offsets: Optional[Offsets] = None,
                 rng: Optional[np.random.Generator] = None) -> FcsaGrid:
    """Alpha branch.  Offsets are sampled from ``rng`` unless given (frozen mode)."""
    T, L = as_tensor(Y).shape
    bound = forward_bound(T, L)
    if offsets is None:
        offsets = sample_offsets(bound, rng if rng is not None else np.random.default_rng())
    offsets.check(bound)
    return _run(Y, transition, net, offsets, reverse=False)


def fcsa_backward(Y, transition, net: FcsaNetwork, offsets: Optional[Offsets] = None,
                  rng: Optional[np.random.Generator] = None) -> FcsaGrid:
    """Beta branch, mirroring the forward lookups; ``beta[-1, -1] = 1``."""
    T, L = as_tensor(Y).shape
    bound = backward_bound(T, L)
    if offsets is None:
        offsets = sample_offsets(bound, rng if rng is not None else np.random.default_rng())
    offsets.check(bound)
    return _run(Y, transition, net, offsets, reverse=True)


def pre_alignment_loss(alpha, beta, Y, cells: Optional[np.ndarray] = None) -> Tensor:
    """``-mean(alpha * beta / y)`` over all cells, or over the boolean mask ``cells``.

    The masked variant is experimental.
    """
    alpha, beta, Y = as_tensor(alpha), as_tensor(beta), as_tensor(Y)
    if np.any(Y.data <= 0):
        raise ValueError("emission probabilities must be positive")
    ratio = alpha * beta / Y
    if cells is None:
        return -mean(ratio)
    cells = np.asarray(cells, dtype=bool)
    if not cells.any():
        raise ValueError("empty cell selection")
    return -(ratio * cells.astype(np.float64)).sum() * (1.0 / cells.sum())
