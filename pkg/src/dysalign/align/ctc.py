"""Blank-augmented CTC loss and the blank-free monotonic forward recursion."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..grad import Tensor, as_tensor, concat, getitem, log, logsumexp, stack, where

NEG = -1e30


def min_frames(target: Sequence[int]) -> int:
    """Frames needed to emit ``target`` (repeats need a separating blank)."""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def ctc_loss(Y, target: Sequence[int], blank: int = 0, log_input: bool = False) -> Tensor:
    """Negative log-likelihood of ``target`` under frame-wise label posteriors.

    ``Y`` is (T, V): probabilities, or log-probabilities when ``log_input``.
    The forward recursion runs in log space.
    """
    Y = as_tensor(Y)
    target = [int(t) for t in target]
    if any(t == blank for t in target):
        raise ValueError("target must not contain the blank symbol")
    T = Y.shape[0]
    if T < min_frames(target):
        raise ValueError(f"target needs {min_frames(target)} frames, only {T} available")
    lp = Y if log_input else log(Y)

    ext = [blank]
    for t in target:
        ext += [t, blank]
    S = len(ext)
    ext = np.array(ext)
    skip = np.zeros(S, dtype=bool)
    for s in range(2, S):
        skip[s] = ext[s] != blank and ext[s] != ext[s - 2]

    emit = getitem(lp, (slice(None), ext))  # (T, S)
    init = np.full(S, NEG)
    init[:min(2, S)] = 0.0
    la = where(init > NEG / 2, emit[0], Tensor(init))
    for t in range(1, T):
        pad1 = concat([Tensor([NEG]), la[:-1]]) if S > 1 else Tensor([NEG])
        if S > 2:
            pad2 = where(skip, concat([Tensor([NEG, NEG]), la[:-2]]), Tensor(np.full(S, NEG)))
        else:
            pad2 = Tensor(np.full(S, NEG))
        la = logsumexp(stack([la, pad1, pad2]), axis=0) + emit[t]
    final = la[S - 2:] if S > 1 else la
    return -logsumexp(final, axis=0)


def _log(Y):
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(Y, dtype=np.float64))


def monotonic_forward(Y, *, return_log: bool = False) -> np.ndarray:
    """Stack-1 forward scores without blanks.

    ``alpha[i, j] = (alpha[i-1, j] + alpha[i-1, j-1]) * Y[i, j]`` with the path
    forced to start in cell (0, 0).  ``alpha[-1, -1]`` is the total weight of
    all stay-or-advance paths that cover every text token.
    """
    ly = _log(Y)
    if ly.ndim != 2 or ly.size == 0:
        raise ValueError("emission grid must be a non-empty 2-D array")
    T, L = ly.shape
    la = np.full((T, L), -np.inf)
    la[0, 0] = ly[0, 0]
    for i in range(1, T):
        prev = la[i - 1]
        shifted = np.concatenate([[-np.inf], prev[:-1]])
        la[i] = np.logaddexp(prev, shifted) + ly[i]
    return la if return_log else np.exp(la)


def monotonic_step(prev_row, y_row) -> np.ndarray:
    """One row of :func:`monotonic_forward` in linear space."""
    prev_row = np.asarray(prev_row, dtype=np.float64)
    shifted = np.concatenate([[0.0], prev_row[:-1]])
    return (prev_row + shifted) * np.asarray(y_row)


def monotonic_log_likelihood(Y) -> float:
    return float(monotonic_forward(Y, return_log=True)[-1, -1])
