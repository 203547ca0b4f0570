"""Shared domain types, the phoneme alphabet, frame/time conversion and file I/O."""
from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

FRAME_RATE = 50
FRAME_PERIOD = Fraction(1, FRAME_RATE)
# events shorter than this are reported with a start time only
SHORT_EVENT_FRAMES = 5

CMU_PHONEMES = (
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY",
    "F", "G", "HH", "IH", "IY", "JH", "K", "L", "M", "N", "NG", "OW", "OY", "P",
    "R", "S", "SH", "T", "TH", "UH", "UW", "V", "W", "Y", "Z", "ZH",
)
SIL = "SIL"
BLANK = "<blank>"


class DysfluencyError(Exception):
    """Base class for all package errors."""


class MatrixFormatError(DysfluencyError):
    pass


class BadMagicError(MatrixFormatError):
    pass


class TruncatedMatrixError(MatrixFormatError):
    pass


class DimensionOverflowError(MatrixFormatError):
    pass


class AlignmentError(DysfluencyError, ValueError):
    pass


class AnnotationError(DysfluencyError, ValueError):
    pass


class ShapeError(DysfluencyError, ValueError):
    """Arrays whose shapes do not fit together."""


# ---------------------------------------------------------------------------
# alphabet


class PhonemeAlphabet:
    """Ordered phoneme inventory with dense integer ids.

    The default inventory is the CTC blank (id 0), the 39 CMU phonemes and SIL.
    """

    def __init__(self, symbols: Sequence[str] = (BLANK,) + CMU_PHONEMES + (SIL,),
                 blank: str = BLANK, silence: str = SIL):
        symbols = tuple(symbols)
        if len(set(symbols)) != len(symbols):
            raise ValueError("duplicate symbols in alphabet")
        if blank == silence:
            raise ValueError("blank and silence must be distinct")
        if blank not in symbols or silence not in symbols:
            raise ValueError("alphabet must contain both blank and silence symbols")
        self.symbols = symbols
        self.index = {s: i for i, s in enumerate(symbols)}
        self.blank = blank
        self.silence = silence

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, label: str) -> bool:
        return label in self.index

    def __repr__(self) -> str:
        return f"PhonemeAlphabet({len(self)} symbols)"

    def lookup(self, label: str) -> int:
        try:
            return self.index[label]
        except KeyError:
            raise KeyError(f"unknown phoneme {label!r}") from None

    def label(self, idx: int) -> str:
        return self.symbols[idx]

    def encode(self, labels: Iterable[str]) -> list[int]:
        return [self.lookup(s) for s in labels]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.symbols[i] for i in ids]

    @property
    def blank_id(self) -> int:
        return self.index[self.blank]

    @property
    def silence_id(self) -> int:
        return self.index[self.silence]

    @property
    def phonemes(self) -> tuple[str, ...]:
        """Every symbol except blank and silence."""
        return tuple(s for s in self.symbols if s not in (self.blank, self.silence))


DEFAULT_ALPHABET = PhonemeAlphabet()


# ---------------------------------------------------------------------------
# time


def frames_to_seconds(frame: int) -> float:
    if frame < 0:
        raise ValueError("frame index must be non-negative")
    return float(frame * FRAME_PERIOD)


def seconds_to_frames(seconds: float, *, tol: float = 1e-6) -> int:
    """Inverse of :func:`frames_to_seconds`; rejects times off the frame grid."""
    frames = Fraction(seconds).limit_denominator(10**6) * FRAME_RATE
    n = round(frames)
    if abs(frames - n) > tol * FRAME_RATE:
        raise ValueError(f"{seconds!r} s is not a multiple of the {float(FRAME_PERIOD)} s frame period")
    if n < 0:
        raise ValueError("time must be non-negative")
    return int(n)


@dataclass(frozen=True)
class TimedToken:
    symbol: int
    start: int  # frame, inclusive
    end: int  # frame, exclusive

    @property
    def frames(self) -> int:
        return self.end - self.start

    @property
    def start_s(self) -> float:
        return frames_to_seconds(self.start)

    @property
    def end_s(self) -> float:
        return frames_to_seconds(self.end)

    @property
    def duration_s(self) -> float:
        return frames_to_seconds(self.frames)


class TimedTokenSequence(tuple):
    """Sorted, non-overlapping phoneme tokens on the 50 Hz frame grid."""

    def __new__(cls, tokens: Iterable[TimedToken] = ()):
        tokens = tuple(tokens)
        prev_end = 0
        for tok in tokens:
            if tok.start < 0 or tok.end < tok.start:
                raise ValueError(f"invalid token span {tok}")
            if tok.start < prev_end:
                raise ValueError("tokens overlap or are unsorted")
            prev_end = tok.end
        return super().__new__(cls, tokens)

    @classmethod
    def from_durations(cls, symbols: Sequence[int], frames: Sequence[int], start: int = 0):
        out, t = [], start
        for sym, n in zip(symbols, frames, strict=True):
            out.append(TimedToken(int(sym), t, t + int(n)))
            t += int(n)
        return cls(out)

    @classmethod
    def from_seconds(cls, items: Iterable[tuple[int, float, float]]):
        return cls(TimedToken(int(s), seconds_to_frames(a), seconds_to_frames(b)) for s, a, b in items)

    @property
    def symbols(self) -> list[int]:
        return [t.symbol for t in self]

    @property
    def n_frames(self) -> int:
        return self[-1].end if self else 0

    def frame_labels(self, n_frames: Optional[int] = None, fill: int = -1) -> np.ndarray:
        """Per-frame symbol ids; frames outside every token get ``fill``."""
        n = self.n_frames if n_frames is None else n_frames
        out = np.full(n, fill, dtype=np.int64)
        for tok in self:
            out[tok.start:min(tok.end, n)] = tok.symbol
        return out


# ---------------------------------------------------------------------------
# feature matrices ("NAFM" files)

_MAGIC = b"NAFM"
_HEADER = struct.Struct("<4sII")
_MAX_ELEMENTS = 2**32 - 1


def check_matrix(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError(f"feature matrix must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("feature matrix contains non-finite entries")
    return m


def encode_matrix(m: np.ndarray) -> bytes:
    m = check_matrix(m)
    rows, cols = m.shape
    return _HEADER.pack(_MAGIC, rows, cols) + np.ascontiguousarray(m, dtype="<f4").tobytes()


def decode_matrix(buf: bytes) -> np.ndarray:
    if len(buf) < 4:
        raise TruncatedMatrixError("file shorter than magic")
    if buf[:4] != _MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}")
    if len(buf) < _HEADER.size:
        raise TruncatedMatrixError("file shorter than header")
    _, rows, cols = _HEADER.unpack_from(buf)
    n = rows * cols
    if n > _MAX_ELEMENTS:
        raise DimensionOverflowError(f"{rows}x{cols} exceeds {_MAX_ELEMENTS} elements")
    expected = _HEADER.size + 4 * n
    if len(buf) < expected:
        raise TruncatedMatrixError(f"expected {expected} bytes, got {len(buf)}")
    if len(buf) > expected:
        raise MatrixFormatError(f"{len(buf) - expected} trailing bytes after matrix data")
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=_HEADER.size)
    return data.astype(np.float32).reshape(rows, cols)


def read_matrix(path) -> np.ndarray:
    """Read a row-major float32 matrix from an NAFM file."""
    return decode_matrix(Path(path).read_bytes())


def write_matrix(path, m: np.ndarray) -> None:
    Path(path).write_bytes(encode_matrix(m))


# ---------------------------------------------------------------------------
# alignments


@dataclass(frozen=True)
class Alignment:
    """Text-token to speech-frame spans.

    ``spans[j]`` is ``None`` when token ``j`` is absent from the speech, else an
    inclusive 0-based frame range ``(s, e)``.
    """

    spans: tuple
    n_frames: int

    def __post_init__(self):
        object.__setattr__(self, "spans", tuple(None if s is None else (int(s[0]), int(s[1]))
                                                for s in self.spans))
        self.validate()

    def validate(self) -> None:
        T = self.n_frames
        prev = None
        for j, span in enumerate(self.spans):
            if span is None:
                continue
            s, e = span
            if not 0 <= s <= e < T:
                raise AlignmentError(f"span {j} = {span} outside [0, {T})")
            if prev is not None:
                ps, pe = prev
                if not (pe <= s and ps < s and pe < e):
                    raise AlignmentError(f"span {j} = {span} not monotonic after {prev}")
                if pe >= s:
                    raise AlignmentError(f"frame {s} shared by two spans")
            prev = span

    def __len__(self) -> int:
        return len(self.spans)

    def frame_map(self) -> list[Optional[int]]:
        """Text index for each frame, ``None`` for unaligned frames."""
        out: list[Optional[int]] = [None] * self.n_frames
        for j, span in enumerate(self.spans):
            if span is not None:
                for i in range(span[0], span[1] + 1):
                    out[i] = j
        return out

    def group(self, groups: Sequence[int]) -> "Alignment":
        """Merge token spans into coarser units, e.g. phonemes into words.

        ``groups[j]`` is the unit index of token ``j``; units must be
        non-decreasing along the token sequence.
        """
        n_units = max(groups) + 1 if len(groups) else 0
        merged: list[Optional[tuple[int, int]]] = [None] * n_units
        for j, g in enumerate(groups):
            span = self.spans[j]
            if span is None:
                continue
            cur = merged[g]
            merged[g] = span if cur is None else (min(cur[0], span[0]), max(cur[1], span[1]))
        return Alignment(tuple(merged), self.n_frames)


# ---------------------------------------------------------------------------
# dysfluency annotations


class DysfluencyType(str, enum.Enum):
    REPETITION = "repetition"
    MISSING = "missing"
    BLOCK = "block"
    REPLACEMENT = "replacement"
    PROLONGATION = "prolongation"
    INSERTION = "insertion"

    @classmethod
    def parse(cls, value) -> "DysfluencyType":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise AnnotationError(f"unknown dysfluency type {value!r}") from None


@dataclass(frozen=True)
class DysfluencyAnnotation:
    """A typed dysfluency event on a word; times are stored as frame indices."""

    word: str
    dysfluency_type: DysfluencyType
    start: int
    end: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "dysfluency_type", DysfluencyType.parse(self.dysfluency_type))
        if self.start < 0:
            raise AnnotationError("start must be non-negative")
        if self.end is not None and self.end < self.start:
            raise AnnotationError("end precedes start")

    @classmethod
    def from_seconds(cls, word: str, dysfluency_type, time_start: float,
                     time_end: Optional[float] = None) -> "DysfluencyAnnotation":
        return cls(word, dysfluency_type, seconds_to_frames(time_start),
                   None if time_end is None else seconds_to_frames(time_end))

    @property
    def time_start(self) -> float:
        return frames_to_seconds(self.start)

    @property
    def time_end(self) -> Optional[float]:
        return None if self.end is None else frames_to_seconds(self.end)

    @property
    def is_short(self) -> bool:
        return self.end is None or self.end - self.start < SHORT_EVENT_FRAMES

    def canonical(self) -> "DysfluencyAnnotation":
        """The annotation as it survives serialization (short spans lose their end)."""
        if self.end is not None and self.is_short:
            return DysfluencyAnnotation(self.word, self.dysfluency_type, self.start, None)
        return self

    def interval(self, min_frames: int = SHORT_EVENT_FRAMES) -> tuple[int, int]:
        """Half-open evaluation interval in frames, widened to ``min_frames``."""
        end = self.start if self.end is None else self.end
        return self.start, max(end, self.start + min_frames)


def _fmt_time(frames: Optional[int]) -> str:
    if frames is None:
        return "null"
    return f"{frames_to_seconds(frames):.2f}"


def serialize_annotations(annotations: Sequence[DysfluencyAnnotation]) -> str:
    """Render annotations as the word/dysfluency/time_start/time_end JSON array."""
    if not annotations:
        return "[]"
    entries = []
    for a in annotations:
        c = a.canonical()
        entries.append(
            "  {\n"
            f'    "word": {json.dumps(c.word)},\n'
            f'    "dysfluency": {json.dumps(c.dysfluency_type.value)},\n'
            f'    "time_start": {_fmt_time(c.start)},\n'
            f'    "time_end": {_fmt_time(c.end)}\n'
            "  }"
        )
    return "[\n" + ",\n".join(entries) + "\n]"


def parse_annotations(text: str) -> list[DysfluencyAnnotation]:
    data = json.loads(text)
    if not isinstance(data, list):
        raise AnnotationError("annotation JSON must be an array")
    out = []
    for i, entry in enumerate(data):
        try:
            out.append(DysfluencyAnnotation.from_seconds(
                entry["word"], entry["dysfluency"], entry["time_start"], entry.get("time_end")))
        except (KeyError, TypeError, ValueError) as exc:
            raise AnnotationError(f"entry {i}: {exc}") from exc
    return out


def read_annotations(path) -> list[DysfluencyAnnotation]:
    return parse_annotations(Path(path).read_text())


def write_annotations(path, annotations: Sequence[DysfluencyAnnotation]) -> None:
    Path(path).write_text(serialize_annotations(annotations) + "\n")
