"""Deterministic filling of the pronunciation-report templates and the dysfluency flag."""
from __future__ import annotations

import json
from typing import Optional, Sequence

from .core import DysfluencyAnnotation, frames_to_seconds, parse_annotations, serialize_annotations

HEADER = ("The speaker is attempting to speak the ground truth text {text}. "
          "We are going to analyze the pronunciation problem for each word:")


def format_time(annotation: DysfluencyAnnotation) -> str:
    """Start time only for events shorter than 0.1 s, else ``start-end``, in seconds."""
    a = annotation.canonical()
    start = f"{frames_to_seconds(a.start):.2f}s"
    if a.end is None:
        return start
    return f"{start}-{frames_to_seconds(a.end):.2f}s"


def _assign_words(annotations: Sequence[DysfluencyAnnotation], words: Sequence[str]) -> list[int]:
    """Ground-truth position of each annotation's word, scanning left to right."""
    lowered = [w.lower() for w in words]
    out, cursor = [], 0
    for a in annotations:
        w = a.word.lower()
        if w not in lowered:
            raise ValueError(f"annotated word {a.word!r} is not in the ground truth text")
        hits = [k for k in range(cursor, len(words)) if lowered[k] == w]
        pos = hits[0] if hits else lowered.index(w)
        out.append(pos)
        cursor = pos
    return out


def render_report(annotations: Sequence[DysfluencyAnnotation], words: Sequence[str]) -> str:
    """One line per word with problems; several problems on a word are joined into clauses."""
    words = list(words)
    ordered = sorted(annotations, key=lambda a: a.start)
    positions = _assign_words(ordered, words)
    by_word: dict[int, list[DysfluencyAnnotation]] = {}
    for pos, a in zip(positions, ordered):
        by_word.setdefault(pos, []).append(a)
    lines = [HEADER.format(text=" ".join(words))]
    for pos in sorted(by_word):
        clauses = " and ".join(f"{a.dysfluency_type.value} at time {format_time(a)}" for a in by_word[pos])
        lead = "For the last word" if pos == len(words) - 1 else "For word"
        lines.append(f"- {lead} {words[pos]}, the pronunciation problems are {clauses}.")
    return "\n".join(lines)


def render_json(annotations: Sequence[DysfluencyAnnotation]) -> str:
    return serialize_annotations(sorted(annotations, key=lambda a: a.start))


def extract_flag(annotations: Sequence[DysfluencyAnnotation]) -> int:
    """1 when at least one dysfluency entry exists, else 0."""
    return 1 if len(annotations) > 0 else 0


def flag_json(annotations: Sequence[DysfluencyAnnotation]) -> str:
    return '{\n  "has_dysfluency": %d\n}' % extract_flag(annotations)


def extraction_output(annotations: Sequence[DysfluencyAnnotation]) -> str:
    """Annotation array followed by the flag object."""
    return render_json(annotations) + "\n" + flag_json(annotations)


def parse_flag(text: str) -> int:
    value = json.loads(text)["has_dysfluency"]
    if value not in (0, 1):
        raise ValueError("has_dysfluency must be 0 or 1")
    return int(value)


def mispronounced_prompt(words: Sequence[str], phonemes_per_word: Sequence[Sequence[str]],
                         events_per_word: Optional[Sequence[Sequence[str]]] = None) -> str:
    """``<Non-fluent Pronunciation>,<word1><phn>...<non-fluency>, ... <Ground Truth Text><word-1>...``.

    Each word yields one tag sequence: the word, its spoken phonemes with
    ``SIL`` rendered as ``Block``, then any extra event tags for that word.
    """
    if len(words) != len(phonemes_per_word):
        raise ValueError("need one phoneme list per word")
    events_per_word = events_per_word or [[] for _ in words]
    parts = []
    for w, phones, evs in zip(words, phonemes_per_word, events_per_word):
        tags = [f"<{w}>"] + [f"<{'Block' if p == 'SIL' else p}>" for p in phones]
        tags += [f"<{e.capitalize()}>" for e in evs]
        parts.append("".join(tags))
    gt = "".join(f"<{w}>" for w in words)
    return "<Non-fluent Pronunciation>," + ", ".join(parts) + f" <Ground Truth Text>{gt}"


def roundtrip(text: str) -> str:
    """Parse then re-render annotation JSON."""
    return render_json(parse_annotations(text))
