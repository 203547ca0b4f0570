"""Consistency loss between aligned frames and their word, and the weighted total."""
from __future__ import annotations

import math
import warnings
from typing import Mapping, Optional

import numpy as np

from ..core import Alignment
from ..grad import Tensor, as_tensor, exp, getitem, logsumexp, matmul, mean, stack, transpose

LOSS_NAMES = ("kl", "flow", "pre", "post", "con", "pit")
DEFAULT_WEIGHTS = {name: 1.0 for name in LOSS_NAMES}


def consistency_loss(alignment: Alignment, tau, words, mode: str = "contrastive") -> Tensor:
    """Sum over units ``j`` of the mean in-span term.

    ``tau`` is (T, D) and ``words`` is (W, D); ``alignment`` has W spans.
    With ``s[i, j] = tau_i . C_j`` the per-frame term is

    * ``literal``:      ``exp(s[i, j]) / sum_{i' outside span} exp(s[i', j])``
    * ``contrastive``:  ``-log(exp(s[i, j]) / (exp(s[i, j]) + sum_{i' outside} exp(s[i', j])))``

    The literal ratio grows with in-span similarity, so minimizing it pushes
    the wrong way; the contrastive form is the default.  Units with an empty
    span contribute nothing; units covering every frame are skipped with a
    warning.
    """
    if mode not in ("literal", "contrastive"):
        raise ValueError(f"unknown mode {mode!r}")
    tau, words = as_tensor(tau), as_tensor(words)
    T = tau.shape[0]
    if alignment.n_frames != T:
        raise ValueError("alignment and speech disagree on the frame count")
    if len(alignment) != words.shape[0]:
        raise ValueError("alignment and word embeddings disagree on the unit count")
    scores = matmul(tau, transpose(words))  # (T, W)
    terms = []
    for j, span in enumerate(alignment.spans):
        if span is None:
            continue
        inside = np.arange(span[0], span[1] + 1)
        outside = np.setdiff1d(np.arange(T), inside)
        if outside.size == 0:
            warnings.warn(f"unit {j} covers every frame; its consistency term is skipped", RuntimeWarning)
            continue
        s_in = getitem(scores, (inside, j))
        s_out = getitem(scores, (outside, j))
        if mode == "literal":
            terms.append(mean(exp(s_in) / exp(s_out).sum()))
        else:
            lse_out = logsumexp(s_out, axis=0)
            pair = stack([s_in, lse_out * np.ones(inside.size)], axis=1)
            terms.append(mean(logsumexp(pair, axis=1) - s_in))
    if not terms:
        return Tensor(0.0)
    return stack(terms).sum()


def final_loss(components: Mapping[str, object], weights: Optional[Mapping[str, float]] = None) -> Tensor:
    """``sum_u lambda_u * L_u`` over kl, flow, pre, post, con and pit.

    Missing components count as zero; all weights default to 1.
    """
    unknown = set(components) - set(LOSS_NAMES)
    if weights is not None:
        unknown |= set(weights) - set(LOSS_NAMES)
    if unknown:
        raise KeyError(f"unknown loss components {sorted(unknown)}")
    lam = dict(DEFAULT_WEIGHTS)
    lam.update(weights or {})
    total = Tensor(0.0)
    for name in LOSS_NAMES:
        if name not in components:
            continue
        value = as_tensor(components[name])
        if not math.isfinite(value.item()):
            raise FloatingPointError(f"loss component {name!r} is not finite")
        if lam[name] != 0.0:
            total = total + value * lam[name]
    return total
