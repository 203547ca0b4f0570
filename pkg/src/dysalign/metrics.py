"""Evaluation metrics: dPER, frame F1, matching score, detection F1, SF, FP rate, PPER and WER."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Optional, Sequence

import numpy as np

from .core import SHORT_EVENT_FRAMES, DysfluencyAnnotation, TimedTokenSequence

# ---------------------------------------------------------------------------
# edit alignment


def edit_operations(ref: Sequence[Hashable], hyp: Sequence[Hashable]) -> list[tuple[str, Optional[int], Optional[int]]]:
    """Minimal-edit alignment as (op, ref index, hyp index) with op in match/sub/del/ins.

    Among equal-cost paths the backtrack prefers a diagonal step, then a
    deletion, then an insertion.
    """
    n, m = len(ref), len(hyp)
    D = np.zeros((n + 1, m + 1), dtype=np.int64)
    D[:, 0] = np.arange(n + 1)
    D[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = D[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            D[i, j] = min(diag, D[i - 1, j] + 1, D[i, j - 1] + 1)
    ops = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and D[i, j] == D[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            ops.append(("match" if ref[i - 1] == hyp[j - 1] else "sub", i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and D[i, j] == D[i - 1, j] + 1:
            ops.append(("del", i - 1, None))
            i -= 1
        else:
            ops.append(("ins", None, j - 1))
            j -= 1
    return ops[::-1]


def edit_distance(ref: Sequence[Hashable], hyp: Sequence[Hashable]) -> int:
    return sum(op != "match" for op, _, _ in edit_operations(ref, hyp))


# ---------------------------------------------------------------------------
# dPER


@dataclass
class DperAccumulators:
    S: float = 0.0
    I: float = 0.0
    D: float = 0.0
    C: float = 0.0

    @property
    def value(self) -> float:
        num = self.S + self.D + self.I
        if num == 0:
            return 0.0
        den = self.S + self.D + self.C
        return math.inf if den == 0 else num / den


def _as_pairs(seq) -> list[tuple[Hashable, float]]:
    if isinstance(seq, TimedTokenSequence):
        return [(t.symbol, t.duration_s) for t in seq]
    return [(s, float(d)) for s, d in seq]


def dper_accumulators(ref, hyp) -> DperAccumulators:
    """Duration-weighted edit counts; inputs are TimedTokenSequences or (symbol, seconds) pairs."""
    ref, hyp = _as_pairs(ref), _as_pairs(hyp)
    if any(d < 0 for _, d in ref + hyp):
        raise ValueError("durations must be non-negative")
    acc = DperAccumulators()
    for op, i, j in edit_operations([s for s, _ in ref], [s for s, _ in hyp]):
        if op == "sub":
            acc.S += ref[i][1] + hyp[j][1]
        elif op == "ins":
            acc.I += hyp[j][1]
        elif op == "del":
            acc.D += ref[i][1]
        else:
            acc.C += abs(ref[i][1] - hyp[j][1])
    return acc


def dper(ref, hyp) -> float:
    """``(S + D + I) / (S + D + C)``; 0 when nothing is wrong, inf when only insertions occur."""
    return dper_accumulators(ref, hyp).value


# ---------------------------------------------------------------------------
# frame F1


def framewise_f1(ref, hyp, ignore: Optional[int] = None) -> float:
    """Micro F1 over frames; frames labelled ``ignore`` are not positives."""
    ref, hyp = np.asarray(ref), np.asarray(hyp)
    if ref.shape != hyp.shape:
        raise ValueError(f"frame counts differ: {ref.shape} vs {hyp.shape}")
    if ignore is None:
        if ref.size == 0:
            return 1.0
        return float(np.mean(ref == hyp))
    tp = np.sum((ref == hyp) & (ref != ignore))
    n_pred, n_true = np.sum(hyp != ignore), np.sum(ref != ignore)
    if n_pred + n_true == 0:
        return 1.0
    return float(2 * tp / (n_pred + n_true))


# ---------------------------------------------------------------------------
# event matching


def iou(a: tuple[int, int], b: tuple[int, int]) -> float:
    """Intersection over union of half-open intervals."""
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]))
    union = max(a[1], b[1]) - min(a[0], b[0])
    return inter / union if union > 0 else 0.0


def f1_from_counts(matched: int, n_pred: int, n_gt: int) -> float:
    if n_pred + n_gt == 0:
        return 1.0
    return 2.0 * matched / (n_pred + n_gt)


@dataclass
class MatchResult:
    pairs: list = field(default_factory=list)  # (pred index, gt index, IoU)
    unmatched_pred: list = field(default_factory=list)
    unmatched_gt: list = field(default_factory=list)

    @property
    def n_pred(self) -> int:
        return len(self.pairs) + len(self.unmatched_pred)

    @property
    def n_gt(self) -> int:
        return len(self.pairs) + len(self.unmatched_gt)

    @property
    def f1(self) -> float:
        return f1_from_counts(len(self.pairs), self.n_pred, self.n_gt)


def match_events(pred: Sequence[DysfluencyAnnotation], gt: Sequence[DysfluencyAnnotation],
                 threshold: float = 0.5, same_word: bool = False,
                 min_frames: int = SHORT_EVENT_FRAMES) -> MatchResult:
    """Greedy one-to-one matching by descending IoU among same-type pairs with IoU > threshold.

    Intervals are widened to ``min_frames`` so point events still overlap.
    """
    cands = []
    for p, a in enumerate(pred):
        for g, b in enumerate(gt):
            if a.dysfluency_type != b.dysfluency_type:
                continue
            if same_word and a.word.lower() != b.word.lower():
                continue
            v = iou(a.interval(min_frames), b.interval(min_frames))
            if v > threshold:
                cands.append((-v, p, g))
    cands.sort()
    used_p, used_g, pairs = set(), set(), []
    for neg, p, g in cands:
        if p in used_p or g in used_g:
            continue
        used_p.add(p)
        used_g.add(g)
        pairs.append((p, g, -neg))
    return MatchResult(sorted(pairs), [p for p in range(len(pred)) if p not in used_p],
                       [g for g in range(len(gt)) if g not in used_g])


def matching_score(pred, gt, threshold: float = 0.5) -> tuple[float, MatchResult]:
    """MS: F1 of IoU-matched events of equal type; empty against empty scores 1."""
    result = match_events(pred, gt, threshold)
    return result.f1, result


def type_matches(pred: Sequence[DysfluencyAnnotation], gt: Sequence[DysfluencyAnnotation]) -> int:
    """Events matched by type alone (multiset intersection)."""
    cp = Counter(a.dysfluency_type for a in pred)
    cg = Counter(a.dysfluency_type for a in gt)
    return sum(min(cp[t], cg[t]) for t in cp)


def corpus_detection_scores(preds: Sequence[Sequence[DysfluencyAnnotation]],
                            gts: Sequence[Sequence[DysfluencyAnnotation]]) -> dict:
    """Micro-averaged MS, strict F1 (type + word + IoU) and type-only F1 over utterances."""
    if len(preds) != len(gts):
        raise ValueError("prediction and reference lists differ in length")
    n_pred = sum(len(p) for p in preds)
    n_gt = sum(len(g) for g in gts)
    ms = sum(len(match_events(p, g).pairs) for p, g in zip(preds, gts))
    strict = sum(len(match_events(p, g, same_word=True).pairs) for p, g in zip(preds, gts))
    typ = sum(type_matches(p, g) for p, g in zip(preds, gts))
    return {
        "matching_score": f1_from_counts(ms, n_pred, n_gt),
        "strict_f1": f1_from_counts(strict, n_pred, n_gt),
        "type_f1": f1_from_counts(typ, n_pred, n_gt),
        "n_pred": n_pred,
        "n_gt": n_gt,
    }


# ---------------------------------------------------------------------------
# corpus-level ratios


def scaling_factors(results: Sequence[float]) -> float:
    """``(c - b) * 0.3 + (b - a) * 0.4`` for results at 30%, 60% and 100% of the data."""
    a, b, c = (float(x) for x in results)
    if not all(math.isfinite(x) for x in (a, b, c)):
        raise ValueError("results must be finite")
    return (c - b) * 0.3 + (b - a) * 0.4


def fp_rate(flags: Sequence[int]) -> float:
    """Share of samples flagged as dysfluent."""
    if len(flags) == 0:
        raise ValueError("no samples")
    return float(np.mean([1 if f else 0 for f in flags]))


def pper(error_flags: Sequence) -> float:
    """Share of utterances with at least one phonetic error (flags or error counts)."""
    if len(error_flags) == 0:
        raise ValueError("no samples")
    return float(np.mean([1 if f else 0 for f in error_flags]))


def ratio(pper_value: float, fp: float) -> float:
    if fp <= 0:
        raise ZeroDivisionError("Ratio is undefined when the FP rate is zero")
    return pper_value / fp


def pper_and_ratio(error_flags: Sequence, fp: float) -> tuple[float, float]:
    p = pper(error_flags)
    return p, ratio(p, fp)


def wer(ref: Sequence[str], hyp: Sequence[str]) -> float:
    if len(ref) == 0:
        raise ValueError("empty reference")
    return edit_distance(list(ref), list(hyp)) / len(ref)
