"""Longest-common-subsequence alignment sampling.

A frame ``i`` matches token ``j`` when ``y[i, j] * phi(C_j | C_{j-1})``
exceeds a threshold (the first token has no transition gate).  The DP is the
textbook LCS table; the backtrack pairs at most one frame with each token.

:func:`spans_from_frame_map` turns that sparse pairing into contiguous spans:
every unmatched frame joins the span of the next matched frame, and trailing
unmatched frames join the last matched span.  For the text ``P L IY Z`` and the
speech ``P P L EY SIL-EY Z`` this yields ``P-[P,P] L-[L] IY-[EY,SIL-EY] Z-[Z]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..core import Alignment
from ..grad import as_tensor
from .emission import emission_grid


@dataclass(frozen=True)
class LcsAlignment:
    """``frame_map[i]`` is the token paired with frame ``i`` (or ``None``)."""

    frame_map: tuple
    alignment: Alignment
    length: int  # LCS length


def _gate(transition: Optional[np.ndarray], L: int) -> np.ndarray:
    gate = np.ones(L)
    if transition is not None and L > 1:
        trans = np.asarray(transition, dtype=np.float64)
        gate[1:] = trans[np.arange(1, L), np.arange(L - 1)]  # phi(C_j | C_{j-1})
    return gate


def lcs_frame_map(Y, transition=None, threshold: float = 0.5) -> tuple[list[Optional[int]], int]:
    """Run the LCS table and backtrack; returns the per-frame pairing and LCS length."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")
    Y = np.asarray(as_tensor(Y).data, dtype=np.float64)
    T, L = Y.shape
    match = Y * _gate(None if transition is None else as_tensor(transition).data, L)[None, :] > threshold
    dp = np.zeros((T + 1, L + 1), dtype=np.int64)
    for i in range(1, T + 1):
        for j in range(1, L + 1):
            if match[i - 1, j - 1]:
                dp[i, j] = dp[i - 1, j - 1] + 1
            else:
                dp[i, j] = max(dp[i - 1, j], dp[i, j - 1])

    frame_map: list[Optional[int]] = [None] * T
    i, j = T, L
    while i > 0 and j > 0:
        if match[i - 1, j - 1]:
            frame_map[i - 1] = j - 1
            i, j = i - 1, j - 1
        elif dp[i - 1, j] > dp[i, j - 1]:
            i -= 1
        else:
            j -= 1
    return frame_map, int(dp[T, L])


def spans_from_frame_map(frame_map: Sequence[Optional[int]], n_tokens: int) -> Alignment:
    """Contiguous spans from a sparse monotone frame pairing (see module docstring)."""
    T = len(frame_map)
    spans: list[Optional[tuple[int, int]]] = [None] * n_tokens
    start = 0
    last = None
    for i, j in enumerate(frame_map):
        if j is None:
            continue
        spans[j] = (start, i)
        start, last = i + 1, j
    if last is not None and start < T:
        spans[last] = (spans[last][0], T - 1)
    return Alignment(tuple(spans), T)


def lcs_align(Y, transition=None, threshold: float = 0.5) -> LcsAlignment:
    frame_map, length = lcs_frame_map(Y, transition, threshold)
    L = np.shape(as_tensor(Y).data)[1]
    return LcsAlignment(tuple(frame_map), spans_from_frame_map(frame_map, L), length)


def sample_alignment(tau, mu, raw_sigma, noise, transition=None, threshold: float = 0.5) -> LcsAlignment:
    """Draw one alignment: build the emission grid from ``C^S`` then run :func:`lcs_align`."""
    Y = emission_grid(tau, mu, raw_sigma, noise)
    return lcs_align(Y.data, None if transition is None else as_tensor(transition).data, threshold)


def export_grid_csv(path, grid, header: str = "value") -> None:
    """Write a (T, L) grid as ``frame,token,value`` rows."""
    grid = np.asarray(as_tensor(grid).data)
    T, L = grid.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"frame,token,{header}\n")
        for i in range(T):
            for j in range(L):
                fh.write(f"{i},{j},{float(grid[i, j])!r}\n")


def export_alignment_csv(path, alignment: Alignment) -> None:
    """Write the alignment as ``frame,token,value`` rows with value 1 on aligned cells."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frame,token,value\n")
        for j, span in enumerate(alignment.spans):
            if span is None:
                continue
            for i in range(span[0], span[1] + 1):
                fh.write(f"{i},{j},1\n")
