"""Rule-based dysfluency detection on top of the trained aligner.

1. Frame labels are the arg-max of the non-blank posteriors.
2. Frames are cut into segments at label changes and at feature jumps larger
   than ``jump_factor`` times the median jump (this separates back-to-back
   copies of the same phoneme).  Segments shorter than ``min_frames`` are
   merged into a neighbour.
3. Segments are aligned to the reference phonemes with the LCS sampler.  A
   segment's emission for a reference phoneme is its averaged posterior
   divided by the segment's largest averaged posterior.
4. Unaligned segments and reference phonemes are classified:

   * a silence segment                                  -> block
   * a reference phoneme with a leftover segment in its gap -> replacement
   * a reference phoneme with nothing in its gap        -> missing
   * leftover segments that copy the next aligned phonemes -> repetition
   * any other leftover segment                         -> insertion
   * an aligned segment much longer than its phoneme's typical duration -> prolongation
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .align.lcs import lcs_frame_map
from .core import (DEFAULT_ALPHABET, Alignment, DysfluencyAnnotation, DysfluencyType, PhonemeAlphabet,
                   TimedToken, TimedTokenSequence)
from .model import AlignerModel

DT = DysfluencyType


@dataclass
class Segment:
    start: int  # inclusive frame
    end: int  # exclusive frame
    label: int

    @property
    def frames(self) -> int:
        return self.end - self.start


def segment_frames(labels: np.ndarray, features: np.ndarray, jump_factor: float = 2.0,
                   min_frames: int = 2) -> list[Segment]:
    """Label runs, split further where consecutive feature vectors jump."""
    T = len(labels)
    if T == 0:
        return []
    jumps = np.linalg.norm(np.diff(features, axis=0), axis=1) if T > 1 else np.zeros(0)
    cut = np.zeros(T, dtype=bool)
    cut[0] = True
    if T > 1:
        cut[1:] = labels[1:] != labels[:-1]
        med = np.median(jumps)
        if med > 0:
            cut[1:] |= jumps > jump_factor * med
    starts = list(np.flatnonzero(cut)) + [T]
    segs = [Segment(int(a), int(b), 0) for a, b in zip(starts[:-1], starts[1:])]
    for s in segs:
        s.label = int(np.bincount(labels[s.start:s.end]).argmax())

    # fold short segments into the neighbour whose mean features are closest
    changed = True
    while changed and len(segs) > 1:
        changed = False
        for k, s in enumerate(segs):
            if s.frames >= min_frames:
                continue
            mean = features[s.start:s.end].mean(axis=0)
            opts = []
            for n in (k - 1, k + 1):
                if 0 <= n < len(segs):
                    nb = segs[n]
                    opts.append((np.linalg.norm(features[nb.start:nb.end].mean(axis=0) - mean), n))
            _, n = min(opts)
            lo, hi = min(k, n), max(k, n)
            merged = Segment(segs[lo].start, segs[hi].end, segs[n].label)
            segs[lo:hi + 1] = [merged]
            changed = True
            break
    return segs


@dataclass
class DurationPrior:
    """Typical frames per phoneme, learned from reference timings."""

    median: dict = field(default_factory=dict)
    default: float = 5.0

    @classmethod
    def fit(cls, timed_sequences) -> "DurationPrior":
        by_sym: dict[int, list[int]] = {}
        for seq in timed_sequences:
            for tok in seq:
                by_sym.setdefault(tok.symbol, []).append(tok.frames)
        med = {s: float(np.median(v)) for s, v in by_sym.items()}
        default = float(np.median([f for v in by_sym.values() for f in v])) if by_sym else 5.0
        return cls(med, default)

    def expected(self, symbol: int) -> float:
        return self.median.get(symbol, self.default)


@dataclass
class DetectorConfig:
    threshold: float = 0.5
    jump_factor: float = 2.0
    min_frames: int = 2
    prolongation_ratio: float = 1.6
    prolongation_excess: int = 3  # frames beyond the typical duration, so jitter is not flagged


@dataclass
class Detection:
    annotations: list
    segments: list
    pairs: list  # aligned (segment index, reference index)
    frame_labels: np.ndarray

    def alignment(self, n_tokens: int) -> Alignment:
        """Reference tokens mapped to the frames of their aligned segment."""
        spans: list = [None] * n_tokens
        for k, j in self.pairs:
            spans[j] = (self.segments[k].start, self.segments[k].end - 1)
        return Alignment(tuple(spans), len(self.frame_labels))

    def phones(self) -> TimedTokenSequence:
        """Recognized phonemes, one per segment."""
        return TimedTokenSequence(TimedToken(s.label, s.start, s.end) for s in self.segments)


class Detector:
    def __init__(self, model: AlignerModel, prior: Optional[DurationPrior] = None,
                 config: DetectorConfig = DetectorConfig()):
        self.model = model
        self.alphabet: PhonemeAlphabet = model.alphabet
        self.prior = prior or DurationPrior()
        self.config = config

    def frame_posteriors(self, tau: np.ndarray) -> np.ndarray:
        """Non-blank posteriors, renormalized per frame."""
        P = self.model.posteriors(tau)
        P[:, self.alphabet.blank_id] = 0.0
        return P / P.sum(axis=1, keepdims=True)

    def detect(self, tau, ref_ids: Sequence[int], ref_words: Sequence[int], words: Sequence[str]) -> Detection:
        """Annotations for one utterance.

        ``tau`` is (T, D); ``ref_words[j]`` is the word index of reference phoneme ``j``.
        """
        tau = np.asarray(tau, dtype=np.float64)
        cfg = self.config
        P = self.frame_posteriors(tau)
        labels = P.argmax(axis=1)
        segs = segment_frames(labels, tau, cfg.jump_factor, cfg.min_frames)
        ref_ids = list(ref_ids)
        L = len(ref_ids)
        # emission relative to the segment's best label, so flat posteriors still match
        seg_post = np.array([P[s.start:s.end].mean(axis=0) for s in segs])
        Y = seg_post[:, ref_ids] / seg_post.max(axis=1, keepdims=True)
        fmap, _ = lcs_frame_map(Y, None, cfg.threshold)
        pairs = [(k, j) for k, j in enumerate(fmap) if j is not None]
        seg_of = {j: k for k, j in pairs}
        sil = self.alphabet.silence_id

        events: list[DysfluencyAnnotation] = []
        used: set[int] = set()

        def word_at(j: int) -> str:
            return words[ref_words[min(max(j, 0), L - 1)]]

        def next_ref(k: int) -> int:
            later = [j for kk, j in pairs if kk > k]
            return later[0] if later else L - 1

        # blocks first: silence is never a reference token
        for k, s in enumerate(segs):
            if fmap[k] is None and s.label == sil:
                events.append(DysfluencyAnnotation(word_at(next_ref(k)), DT.BLOCK, s.start, s.end))
                used.add(k)

        # unaligned reference phonemes
        matched_refs = sorted(seg_of)
        for j in range(L):
            if j in seg_of:
                continue
            prev_k = max((seg_of[i] for i in matched_refs if i < j), default=-1)
            next_k = min((seg_of[i] for i in matched_refs if i > j), default=len(segs))
            gap = [k for k in range(prev_k + 1, next_k) if k not in used and fmap[k] is None]
            if gap:
                k = gap[0]
                used.add(k)
                events.append(DysfluencyAnnotation(word_at(j), DT.REPLACEMENT, segs[k].start, segs[k].end))
            else:
                at = segs[next_k].start if next_k < len(segs) else segs[-1].end
                events.append(DysfluencyAnnotation(word_at(j), DT.MISSING, at, None))

        # leftover segments: repetition runs or insertions
        k = 0
        while k < len(segs):
            if fmap[k] is not None or k in used:
                k += 1
                continue
            run = [k]
            while run[-1] + 1 < len(segs) and fmap[run[-1] + 1] is None and run[-1] + 1 not in used:
                run.append(run[-1] + 1)
            after = run[-1] + 1
            j0 = fmap[after] if after < len(segs) else None
            rep = self._repetition(run, Y, j0, ref_ids, seg_of, cfg.threshold) if j0 is not None else None
            if rep is not None:
                events.append(DysfluencyAnnotation(word_at(j0), DT.REPETITION, segs[run[0]].start, segs[rep].end))
                # the original cluster, including stray segments inside it, belongs to the event
                used.update(range(run[0], rep + 1))
                k = rep + 1
                continue
            for r in run:
                events.append(DysfluencyAnnotation(word_at(next_ref(r)), DT.INSERTION, segs[r].start, segs[r].end))
            used.update(run)
            k = after

        # prolongations on aligned segments
        for k, j in pairs:
            s = segs[k]
            expected = self.prior.expected(ref_ids[j])
            if s.frames >= cfg.prolongation_ratio * expected and s.frames - expected >= cfg.prolongation_excess:
                events.append(DysfluencyAnnotation(word_at(j), DT.PROLONGATION, s.start, s.end))

        order = list(DT)
        events.sort(key=lambda a: (a.start, order.index(a.dysfluency_type)))
        return Detection(events, segs, pairs, labels)

    @staticmethod
    def _repetition(run, Y, j0, ref_ids, seg_of, threshold) -> Optional[int]:
        """Last segment of the repeated cluster when ``run`` copies the phonemes from ``j0``.

        A segment copies reference phoneme ``j`` when its relative emission
        ``Y[segment, j]`` reaches ``threshold``.
        """
        for c in (1, 2, 3):
            if len(run) % c or j0 + c > len(ref_ids):
                continue
            if not all((j0 + d) in seg_of for d in range(c)):
                continue
            if all(Y[r, j0 + t % c] >= threshold for t, r in enumerate(run)):
                return seg_of[j0 + c - 1]
        return None


def detect_utterance(detector: Detector, utt, alphabet: PhonemeAlphabet = DEFAULT_ALPHABET) -> Detection:
    """Convenience wrapper for a simulated utterance."""
    return detector.detect(utt.features.T, alphabet.encode(utt.reference_phonemes), utt.reference_words, utt.words)
