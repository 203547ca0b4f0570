import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dysalign.core import DysfluencyAnnotation, DysfluencyType
from dysalign.metrics import fp_rate
from dysalign.report import (extract_flag, extraction_output, flag_json, format_time, mispronounced_prompt,
                             parse_flag, render_json, render_report, roundtrip)

A = DysfluencyAnnotation.from_seconds
WORDS = ["please", "call", "stella"]

EXAMPLE_WITH = """[
  {
    "word": "I",
    "dysfluency": "repetition",
    "time_start": 0.50,
    "time_end": null
  }
]
{
  "has_dysfluency": 1
}"""

EXAMPLE_WITHOUT = """[]
{
  "has_dysfluency": 0
}"""


def test_format_time():
    assert format_time(A("w", "block", 1.0, 1.04)) == "1.00s"
    assert format_time(A("w", "block", 1.0, 1.1)) == "1.00s-1.10s"
    assert format_time(A("w", "missing", 0.42)) == "0.42s"


def test_fluent_report_has_only_header():
    text = render_report([], WORDS)
    assert text.splitlines() == [
        "The speaker is attempting to speak the ground truth text please call stella. "
        "We are going to analyze the pronunciation problem for each word:"
    ]


def test_report_lines_and_clauses():
    anns = [A("stella", "missing", 1.0), A("please", "repetition", 0.2, 0.6), A("please", "block", 0.1, 0.14)]
    lines = render_report(anns, WORDS).splitlines()
    assert lines[1] == ("- For word please, the pronunciation problems are block at time 0.10s "
                        "and repetition at time 0.20s-0.60s.")
    assert lines[2] == "- For the last word stella, the pronunciation problems are missing at time 1.00s."
    assert len(lines) == 3


def test_report_rejects_unknown_word():
    with pytest.raises(ValueError):
        render_report([A("hello", "block", 0.1, 0.3)], WORDS)


def test_repeated_word_assigned_in_order():
    words = ["the", "cat", "the", "dog"]
    anns = [A("the", "block", 0.0, 0.2), A("cat", "missing", 0.5), A("the", "prolongation", 1.0, 1.4)]
    lines = render_report(anns, words).splitlines()
    assert len(lines) == 4
    assert "block" in lines[1] and "missing" in lines[2] and "prolongation" in lines[3]
    # consecutive events on one word stay on that occurrence
    same = render_report([A("the", "block", 0.0, 0.2), A("the", "repetition", 0.3, 0.6)], words)
    assert len(same.splitlines()) == 2


def test_extraction_examples_are_bit_exact():
    assert extraction_output([A("I", "repetition", 0.5)]) == EXAMPLE_WITH
    assert extraction_output([]) == EXAMPLE_WITHOUT


def test_flag():
    assert extract_flag([A("I", "repetition", 0.5)]) == 1
    assert extract_flag([]) == 0
    assert parse_flag(flag_json([])) == 0
    with pytest.raises(ValueError):
        parse_flag('{"has_dysfluency": 2}')


ann_st = st.builds(DysfluencyAnnotation, st.sampled_from(WORDS), st.sampled_from(list(DysfluencyType)),
                   st.integers(0, 500), st.none() | st.integers(501, 900))


@given(st.lists(ann_st, max_size=5))
def test_json_render_parse_fixed_point(anns):
    text = render_json(anns)
    assert roundtrip(text) == text
    assert json.loads(text) == json.loads(roundtrip(text))


@given(st.lists(ann_st, max_size=3))
def test_flag_consistent_with_fp_rate(anns):
    assert extract_flag(anns) == fp_rate([extract_flag(anns)])


def test_mispronounced_prompt():
    text = mispronounced_prompt(["please"], [["P", "SIL", "P", "L", "IY", "Z"]])
    assert text == "<Non-fluent Pronunciation>,<please><P><Block><P><L><IY><Z> <Ground Truth Text><please>"
    two = mispronounced_prompt(["please", "call"], [["P", "L", "IY", "Z"], ["K", "AO", "L"]], [[], ["prolongation"]])
    assert two.endswith("<call><K><AO><L><Prolongation> <Ground Truth Text><please><call>")
    with pytest.raises(ValueError):
        mispronounced_prompt(["a", "b"], [["AH"]])
