import functools
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dysalign.core import DysfluencyAnnotation, TimedTokenSequence
from dysalign.metrics import (corpus_detection_scores, dper, dper_accumulators, edit_operations, fp_rate,
                              framewise_f1, iou, match_events, matching_score, pper, pper_and_ratio, ratio,
                              scaling_factors, type_matches, wer)
from dysalign.report import extract_flag


def levenshtein(a, b):
    """Independent memoised recursion."""

    @functools.lru_cache(maxsize=None)
    def d(i, j):
        if i == 0 or j == 0:
            return i + j
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def ann(t, start, end=None, word="w"):
    return DysfluencyAnnotation.from_seconds(word, t, start, end)


# ---------------------------------------------------------------------------
# dPER


def test_dper_identical_is_zero():
    seq = [("P", 0.1), ("L", 0.2)]
    assert dper(seq, seq) == 0.0


def test_dper_deletion_case():
    acc = dper_accumulators([("P", 0.1), ("L", 0.2)], [("P", 0.1)])
    assert acc.D == 0.2 and acc.C == 0.0 and acc.S == 0.0 and acc.I == 0.0
    assert dper([("P", 0.1), ("L", 0.2)], [("P", 0.1)]) == 1.0


def test_dper_duration_only_case():
    acc = dper_accumulators([("P", 0.1), ("L", 0.2)], [("P", 0.2), ("L", 0.2)])
    assert acc.C == pytest.approx(0.1, abs=1e-15)
    assert dper([("P", 0.1), ("L", 0.2)], [("P", 0.2), ("L", 0.2)]) == 0.0


def test_dper_substitution_and_insertion():
    acc = dper_accumulators([("P", 0.1), ("L", 0.2)], [("B", 0.3), ("L", 0.2), ("Z", 0.1)])
    assert (acc.S, acc.I, acc.D, acc.C) == pytest.approx((0.4, 0.1, 0.0, 0.0))
    assert dper([("P", 0.1), ("L", 0.2)], [("B", 0.3), ("L", 0.2), ("Z", 0.1)]) == pytest.approx(0.5 / 0.4)
    assert dper([], [("P", 0.1)]) == math.inf
    with pytest.raises(ValueError):
        dper([("P", -0.1)], [("P", 0.1)])


def test_dper_accepts_timed_sequences():
    ref = TimedTokenSequence.from_durations([1, 2], [5, 10])
    hyp = TimedTokenSequence.from_durations([1], [5])
    assert dper(ref, hyp) == pytest.approx(1.0)


symbols_st = st.lists(st.sampled_from("ABCD"), max_size=7)
durations_st = st.floats(0.02, 2.0)


@st.composite
def timed_pairs(draw):
    syms = draw(symbols_st)
    return [(s, draw(durations_st)) for s in syms]


@settings(max_examples=300, deadline=None)
@given(timed_pairs(), timed_pairs(), st.floats(0.01, 100.0))
def test_dper_scale_invariance(ref, hyp, k):
    a = dper(ref, hyp)
    b = dper([(s, d * k) for s, d in ref], [(s, d * k) for s, d in hyp])
    if math.isinf(a):
        assert math.isinf(b)
    else:
        assert abs(a - b) <= 1e-9 * max(1.0, abs(a))


@settings(max_examples=200, deadline=None)
@given(timed_pairs(), timed_pairs())
def test_dper_zero_iff_same_symbols(ref, hyp):
    same = [s for s, _ in ref] == [s for s, _ in hyp]
    assert (dper(ref, hyp) == 0.0) == same


@settings(max_examples=200, deadline=None)
@given(symbols_st, symbols_st)
def test_edit_operations_are_minimal_and_consistent(ref, hyp):
    ops = edit_operations(ref, hyp)
    assert sum(op != "match" for op, _, _ in ops) == levenshtein(tuple(ref), tuple(hyp))
    assert [i for _, i, _ in ops if i is not None] == list(range(len(ref)))
    assert [j for _, _, j in ops if j is not None] == list(range(len(hyp)))


def test_edit_tie_break_prefers_substitution():
    assert edit_operations(["A"], ["B"]) == [("sub", 0, 0)]


# ---------------------------------------------------------------------------
# frame F1


def confusion_micro_f1(ref, hyp, labels):
    tp = sum(sum(1 for r, h in zip(ref, hyp) if r == h == c) for c in labels)
    fp = sum(sum(1 for r, h in zip(ref, hyp) if h == c and r != c) for c in labels)
    fn = sum(sum(1 for r, h in zip(ref, hyp) if r == c and h != c) for c in labels)
    return 2 * tp / (2 * tp + fp + fn)


def test_framewise_examples():
    assert framewise_f1([1, 2, 3], [1, 2, 3]) == 1.0
    assert framewise_f1([1, 1, 2], [2, 2, 1]) == 0.0
    ref, hyp = [0, 0, 1, 1], [0, 1, 1, 0]
    assert framewise_f1(ref, hyp) == confusion_micro_f1(ref, hyp, [0, 1]) == 0.5
    with pytest.raises(ValueError):
        framewise_f1([1], [1, 2])


def test_framewise_ignore_label():
    ref, hyp = [0, 3, 3, 4], [3, 3, 0, 4]
    # positives exclude label 0: tp=2, pred=3, true=3
    assert framewise_f1(ref, hyp, ignore=0) == pytest.approx(2 * 2 / 6)


# ---------------------------------------------------------------------------
# matching score


def test_iou_example():
    assert iou((50, 100), (60, 100)) == pytest.approx(0.8)
    assert iou((0, 5), (5, 10)) == 0.0


def test_matching_examples():
    ms, res = matching_score([ann("block", 1.2, 2.0)], [ann("block", 1.0, 2.0)])
    assert ms == 1.0 and res.pairs[0][2] == pytest.approx(0.8)
    assert matching_score([ann("block", 0.0, 0.5)], [ann("block", 1.0, 2.0)])[0] == 0.0
    assert matching_score([], [])[0] == 1.0
    assert matching_score([ann("repetition", 1.2, 2.0)], [ann("block", 1.0, 2.0)])[0] == 0.0


def test_matching_is_greedy_one_to_one():
    gt = [ann("block", 1.0, 2.0)]
    pred = [ann("block", 1.1, 2.0), ann("block", 1.0, 2.0)]
    res = match_events(pred, gt)
    assert res.pairs == [(1, 0, 1.0)] and res.unmatched_pred == [0]
    assert res.f1 == pytest.approx(2 / 3)


def test_point_events_match_by_widening():
    assert matching_score([ann("missing", 1.02)], [ann("missing", 1.0)])[0] == 1.0


event_st = st.builds(lambda t, s, d: DysfluencyAnnotation("w", t, s, s + d),
                     st.sampled_from(["block", "repetition"]), st.integers(0, 200), st.integers(5, 60))


@settings(max_examples=200, deadline=None)
@given(st.lists(event_st, max_size=5), st.lists(event_st, max_size=5))
def test_matching_symmetric_and_bounded(pred, gt):
    a, ra = matching_score(pred, gt)
    b, _ = matching_score(gt, pred)
    assert a == pytest.approx(b) and 0.0 <= a <= 1.0
    assert all(v > 0.5 for _, _, v in ra.pairs)
    assert len({p for p, _, _ in ra.pairs}) == len(ra.pairs)


@settings(max_examples=150, deadline=None)
@given(st.lists(event_st, min_size=1, max_size=5), st.lists(event_st, min_size=1, max_size=5), st.data())
def test_matching_monotone_under_correction(gt, pred, data):
    before, res = matching_score(pred, gt)
    if not res.unmatched_gt or not res.unmatched_pred:
        return
    p = data.draw(st.sampled_from(res.unmatched_pred))
    g = data.draw(st.sampled_from(res.unmatched_gt))
    corrected = list(pred)
    corrected[p] = gt[g]
    assert matching_score(corrected, gt)[0] >= before


def test_corpus_detection_scores():
    gt = [[ann("block", 1.0, 2.0, "a"), ann("missing", 3.0, word="b")], []]
    pred = [[ann("block", 1.1, 2.0, "x"), ann("repetition", 3.0, 3.5, "b")], [ann("block", 0.0, 0.3, "c")]]
    s = corpus_detection_scores(pred, gt)
    assert s["n_pred"] == 3 and s["n_gt"] == 2
    assert s["matching_score"] == pytest.approx(2 * 1 / 5)
    assert s["strict_f1"] == 0.0  # the matched block names the wrong word
    assert s["type_f1"] == pytest.approx(2 * 1 / 5)
    assert type_matches(pred[0], gt[0]) == 1
    with pytest.raises(ValueError):
        corpus_detection_scores(pred, gt[:1])


# ---------------------------------------------------------------------------
# corpus ratios


@pytest.mark.parametrize("results,expected", [
    ([89.0, 89.2, 90.8], 0.56),
    ([92.3, 93.7, 95.8], 1.19),
    ([37.8, 36.0, 33.6], -1.44),
])
def test_scaling_factor_table_values(results, expected):
    assert abs(scaling_factors(results) - expected) < 1e-9


@given(st.lists(st.floats(-100, 100), min_size=3, max_size=3), st.integers(0, 2), st.floats(-10, 10))
def test_scaling_factor_is_linear(r, k, h):
    bumped = list(r)
    bumped[k] += h
    slope = (-0.4, 0.4 - 0.3, 0.3)[k]
    assert scaling_factors(bumped) - scaling_factors(r) == pytest.approx(slope * h, abs=1e-9)


def test_scaling_factor_rejects_non_finite():
    with pytest.raises(ValueError):
        scaling_factors([1.0, float("nan"), 2.0])


def test_fp_rate_examples():
    assert fp_rate([1, 0, 0, 1]) == 0.5
    assert fp_rate([0, 0, 0]) == 0.0
    with pytest.raises(ValueError):
        fp_rate([])


@given(st.lists(st.lists(st.just(DysfluencyAnnotation("w", "block", 0)), max_size=2), min_size=1, max_size=8))
def test_fp_rate_from_annotation_lists(corpus):
    flags = [extract_flag(a) for a in corpus]
    assert fp_rate(flags) == sum(1 for a in corpus if a) / len(corpus)


def test_pper_and_ratio_examples():
    assert round(100 * ratio(8.7, 11.9), 1) == 73.1
    assert ratio(0.0, 0.2) == 0.0
    assert ratio(0.3, 0.3) == 1.0
    with pytest.raises(ZeroDivisionError):
        ratio(0.1, 0.0)
    assert pper([0, 3, 1, 0]) == 0.5  # an utterance counts once however many errors it has
    assert pper_and_ratio([1, 0], 0.5) == (0.5, 1.0)


def test_wer_examples():
    assert wer("a b c d".split(), "a b c d".split()) == 0.0
    assert wer("a b c d".split(), "a x c d".split()) == 0.25
    with pytest.raises(ValueError):
        wer([], ["a"])


@settings(max_examples=200)
@given(st.lists(st.sampled_from("xyz"), min_size=1, max_size=8), st.lists(st.sampled_from("xyz"), max_size=8))
def test_wer_matches_recursive_oracle(ref, hyp):
    assert wer(ref, hyp) == levenshtein(tuple(ref), tuple(hyp)) / len(ref)
