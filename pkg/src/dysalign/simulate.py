"""Rule-based dysfluency injection and co-dysfluency corpus generation.

Utterances are phoneme token lists with frame durations.  Every token remembers
its position in the fluent sequence (``orig``), so injections compose and can
be undone, and annotations are recomputed from event tags after all edits.

Injection rules:

* repetition    copies of a 1-2 phoneme cluster are placed before it (1-2 copies)
* block         a silence of 10-25 frames is inserted before a token
* missing       a non-initial phoneme of a word is deleted (point event)
* replacement   a phoneme is swapped with a confusable partner
* prolongation  a phoneme lasts 2-4 times longer
* insertion     a phoneme absent from the word is inserted before a token
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import (DEFAULT_ALPHABET, SIL, DysfluencyAnnotation, DysfluencyError, DysfluencyType, PhonemeAlphabet,
                   TimedTokenSequence, serialize_annotations, write_matrix)

DT = DysfluencyType

MULTI_COMBOS = (
    (DT.REPETITION, DT.MISSING),
    (DT.REPETITION, DT.BLOCK),
    (DT.MISSING, DT.BLOCK),
    (DT.REPLACEMENT, DT.BLOCK),
    (DT.PROLONGATION, DT.BLOCK),
)

_CONFUSABLE_PAIRS = [
    ("IY", "EY"), ("IY", "IH"), ("EH", "IH"), ("AE", "EH"), ("AA", "AO"), ("AH", "UH"), ("AH", "AA"),
    ("AW", "OW"), ("AY", "EY"), ("OY", "AY"), ("OW", "UW"), ("UH", "UW"), ("ER", "R"),
    ("P", "B"), ("T", "D"), ("K", "G"), ("S", "Z"), ("F", "V"), ("TH", "DH"), ("TH", "F"),
    ("SH", "ZH"), ("SH", "S"), ("CH", "JH"), ("M", "N"), ("N", "NG"), ("L", "R"), ("W", "V"),
    ("Y", "IY"), ("HH", "F"), ("JH", "ZH"),
]
CONFUSABLE: dict[str, tuple[str, ...]] = {}
for _a, _b in _CONFUSABLE_PAIRS:
    CONFUSABLE[_a] = CONFUSABLE.get(_a, ()) + (_b,)
    CONFUSABLE[_b] = CONFUSABLE.get(_b, ()) + (_a,)

VOWELS = frozenset({"AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH", "IY", "OW", "OY", "UH", "UW"})


class UnknownWordError(DysfluencyError, KeyError):
    pass


class InjectionError(DysfluencyError, ValueError):
    """A dysfluency type cannot be applied at the requested position."""


# ---------------------------------------------------------------------------
# lexicon


class Lexicon:
    """Word to phoneme-sequence table."""

    def __init__(self, entries: dict[str, Sequence[str]], alphabet: PhonemeAlphabet = DEFAULT_ALPHABET):
        self.entries = {w.lower(): tuple(p) for w, p in entries.items()}
        for word, phones in self.entries.items():
            if not phones:
                raise ValueError(f"empty pronunciation for {word!r}")
            bad = [p for p in phones if p not in alphabet or p in (alphabet.blank, alphabet.silence)]
            if bad:
                raise ValueError(f"{word!r} uses phonemes outside the alphabet: {bad}")

    @classmethod
    def parse(cls, text: str, **kw) -> "Lexicon":
        entries = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            word, sep, phones = line.partition("\t")
            if not sep:
                raise ValueError(f"line {n}: expected word<TAB>phonemes")
            entries[word] = phones.split()
        return cls(entries, **kw)

    @classmethod
    def from_file(cls, path, **kw) -> "Lexicon":
        return cls.parse(Path(path).read_text(encoding="utf-8"), **kw)

    @classmethod
    def builtin(cls) -> "Lexicon":
        return cls.parse(resources.files("dysalign.data").joinpath("lexicon.tsv").read_text(encoding="utf-8"))

    def __contains__(self, word: str) -> bool:
        return word.lower() in self.entries

    def __getitem__(self, word: str) -> tuple[str, ...]:
        try:
            return self.entries[word.lower()]
        except KeyError:
            raise UnknownWordError(f"word {word!r} is not in the lexicon") from None


def tokenize(text: str) -> list[str]:
    return re.findall(r"[a-z']+", text.lower())


def demo_texts() -> list[str]:
    raw = resources.files("dysalign.data").joinpath("demo_texts.txt").read_text(encoding="utf-8")
    return [line.strip() for line in raw.splitlines() if line.strip()]


# ---------------------------------------------------------------------------
# tokens and events


@dataclass(frozen=True)
class SimToken:
    """One phoneme occurrence.  ``symbol`` is None for the marker of a deleted phoneme."""

    symbol: Optional[str]
    frames: int
    word: int
    orig: Optional[int] = None  # index in the fluent sequence; None when inserted
    orig_symbol: Optional[str] = None
    orig_frames: Optional[int] = None
    events: tuple = ()


@dataclass(frozen=True)
class Event:
    id: int
    dysfluency_type: DysfluencyType
    word: int
    position: int  # fluent phoneme index


@dataclass(frozen=True)
class DurationModel:
    """Integer frame durations: a base per phoneme class plus uniform jitter."""

    vowel: int = 6
    consonant: int = 4
    jitter: int = 1

    def sample(self, symbol: str, rng: np.random.Generator) -> int:
        base = self.vowel if symbol in VOWELS else self.consonant
        return max(1, base + int(rng.integers(-self.jitter, self.jitter + 1)))


def fluent_tokens(words: Sequence[str], lexicon: Lexicon, durations: DurationModel,
                  rng: np.random.Generator) -> list[SimToken]:
    out = []
    for w, word in enumerate(words):
        for p in lexicon[word]:
            n = durations.sample(p, rng)
            out.append(SimToken(p, n, w, len(out), p, n))
    return out


def _locate(tokens: Sequence[SimToken], position: int) -> int:
    for k, tok in enumerate(tokens):
        if tok.orig == position:
            return k
    raise InjectionError(f"fluent position {position} not found")


def _word_span(tokens: Sequence[SimToken], word: int) -> list[int]:
    return [t.orig for t in tokens if t.word == word and t.orig is not None]


def _tag(tok: SimToken, event: int) -> SimToken:
    return replace(tok, events=tok.events + (event,))


def applicable(tokens: Sequence[SimToken], dtype: DysfluencyType, position: int) -> bool:
    """Whether ``dtype`` can be injected at fluent ``position``."""
    try:
        k = _locate(tokens, position)
    except InjectionError:
        return False
    tok = tokens[k]
    if tok.symbol is None:
        return False
    word = [p for p in _word_span(tokens, tok.word)]
    first = min(word)
    if dtype is DT.MISSING:
        return position != first and len(word) >= 2 and tok.orig_symbol == tok.symbol
    if dtype is DT.REPLACEMENT:
        return tok.symbol in CONFUSABLE and tok.orig_symbol == tok.symbol
    return True


def _corpus_ok(tokens, dtype: DysfluencyType, position: int) -> bool:
    """Corpus placement rules on top of :func:`applicable`."""
    if not applicable(tokens, dtype, position):
        return False
    if dtype is DT.REPETITION:
        word = tokens[_locate(tokens, position)].word
        return position == min(_word_span(tokens, word))
    if dtype in (DT.BLOCK, DT.INSERTION):
        return position >= 1
    return True


def inject(tokens: Sequence[SimToken], dtype, position: int, rng: np.random.Generator, event: int = 0,
           durations: DurationModel = DurationModel(), *, cluster: Optional[int] = None,
           copies: Optional[int] = None, block_frames: tuple[int, int] = (10, 25),
           prolong_factor: tuple[int, int] = (2, 4), substitute: Optional[str] = None) -> list[SimToken]:
    """Apply one dysfluency at fluent phoneme ``position``; mutated tokens carry ``event``.

    Optional keyword arguments pin the random choices (cluster length and copy
    count for repetition, the replacement phoneme).
    """
    dtype = DT.parse(dtype)
    tokens = list(tokens)
    if not applicable(tokens, dtype, position):
        raise InjectionError(f"{dtype.value} is not applicable at position {position}")
    k = _locate(tokens, position)
    tok = tokens[k]

    if dtype is DT.REPETITION:
        rest = [p for p in _word_span(tokens, tok.word) if p >= position]
        n = cluster if cluster is not None else int(rng.integers(1, 3))
        n = max(1, min(n, len(rest)))
        reps = copies if copies is not None else int(rng.integers(1, 3))
        originals = [_locate(tokens, position + d) for d in range(n)]
        while tokens[originals[-1]].symbol is None:  # never copy a deleted phoneme
            originals.pop()
        cluster_toks = [tokens[i] for i in originals]
        new = []
        for _ in range(reps):
            for c in cluster_toks:
                new.append(SimToken(c.symbol, durations.sample(c.symbol, rng), c.word, events=(event,)))
        for i in originals:
            tokens[i] = _tag(tokens[i], event)
        return tokens[:k] + new + tokens[k:]

    if dtype is DT.BLOCK:
        n = int(rng.integers(block_frames[0], block_frames[1] + 1))
        return tokens[:k] + [SimToken(SIL, n, tok.word, events=(event,))] + tokens[k:]

    if dtype is DT.MISSING:
        tokens[k] = replace(_tag(tok, event), symbol=None, frames=0)
        return tokens

    if dtype is DT.REPLACEMENT:
        sub = substitute if substitute is not None else str(rng.choice(CONFUSABLE[tok.symbol]))
        if sub == tok.symbol:
            raise InjectionError("replacement must change the phoneme")
        tokens[k] = replace(_tag(tok, event), symbol=sub)
        return tokens

    if dtype is DT.PROLONGATION:
        factor = int(rng.integers(prolong_factor[0], prolong_factor[1] + 1))
        tokens[k] = replace(_tag(tok, event), frames=tok.frames * factor)
        return tokens

    # insertion
    present = {t.symbol for t in tokens if t.word == tok.word}
    choices = [p for p in DEFAULT_ALPHABET.phonemes if p not in present]
    sym = substitute if substitute is not None else str(rng.choice(choices))
    return tokens[:k] + [SimToken(sym, durations.sample(sym, rng), tok.word, events=(event,))] + tokens[k:]


def recover_fluent(tokens: Sequence[SimToken]) -> list[tuple[str, int]]:
    """Undo every edit: (symbol, frames) of the fluent sequence."""
    kept = sorted((t for t in tokens if t.orig is not None), key=lambda t: t.orig)
    return [(t.orig_symbol, t.orig_frames) for t in kept]


def annotate(tokens: Sequence[SimToken], events: Sequence[Event], words: Sequence[str]) -> list[DysfluencyAnnotation]:
    """Annotations recomputed from event tags, sorted by start frame."""
    starts = np.concatenate([[0], np.cumsum([t.frames for t in tokens])])
    out = []
    for ev in events:
        idx = [k for k, t in enumerate(tokens) if ev.id in t.events]
        if not idx:
            raise InjectionError(f"event {ev.id} left no trace")
        lo, hi = int(starts[min(idx)]), int(starts[max(idx) + 1])
        end = None if hi == lo else hi
        out.append(DysfluencyAnnotation(words[ev.word], ev.dysfluency_type, lo, end))
    order = list(DT)
    return sorted(out, key=lambda a: (a.start, order.index(a.dysfluency_type)))


# ---------------------------------------------------------------------------
# co-dysfluency


@dataclass(frozen=True)
class SimulationConfig:
    """Corpus generation settings.

    ``mode`` is ``single``, ``multi``, ``mixed`` (each utterance is Multi with
    probability ``multi_fraction``) or ``fluent``.  In Single mode an
    utterance gets 2 instances, or 3 with probability ``p_three``; by default
    ``p_three`` is chosen so that the mixed corpus averages
    ``target_mean`` events per utterance.
    """

    mode: str = "mixed"
    multi_fraction: float = 0.4
    target_mean: float = 2.51
    single_types: tuple = (DT.REPETITION, DT.MISSING, DT.BLOCK, DT.REPLACEMENT, DT.PROLONGATION)
    single_weights: Optional[tuple] = None
    multi_combos: tuple = MULTI_COMBOS
    block_frames: tuple = (10, 25)
    prolong_factor: tuple = (2, 4)
    durations: DurationModel = DurationModel()
    feature_dim: int = 64
    voice_seed: int = 0  # fixes the phoneme embedding table across corpora
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("single", "multi", "mixed", "fluent"):
            raise ValueError(f"unknown mode {self.mode!r}")
        object.__setattr__(self, "single_types", tuple(DT.parse(t) for t in self.single_types))
        object.__setattr__(self, "multi_combos", tuple((DT.parse(a), DT.parse(b)) for a, b in self.multi_combos))
        for combo in self.multi_combos:
            if combo not in MULTI_COMBOS:
                raise ValueError(f"{combo} is not one of the supported combinations")
        if self.single_weights is not None and len(self.single_weights) != len(self.single_types):
            raise ValueError("single_weights must match single_types")
        if not 0.0 <= self.p_three <= 1.0:
            raise ValueError("target_mean is unreachable with 2-3 instances per utterance")

    @property
    def p_three(self) -> float:
        single_share = {"single": 1.0, "multi": 0.0, "mixed": 1.0 - self.multi_fraction, "fluent": 0.0}[self.mode]
        if single_share == 0.0:
            return 0.0
        multi_share = 1.0 - single_share if self.mode == "mixed" else 0.0
        return (self.target_mean - 2.0 * multi_share - 2.0 * single_share) / single_share

    def type_probabilities(self) -> np.ndarray:
        w = np.ones(len(self.single_types)) if self.single_weights is None else np.asarray(self.single_weights, float)
        return w / w.sum()


def _positions(tokens, dtype, exclude=()) -> list[int]:
    return [t.orig for t in tokens if t.orig is not None and t.orig not in exclude and _corpus_ok(tokens, dtype, t.orig)]


def co_dysfluency(tokens: Sequence[SimToken], config: SimulationConfig, rng: np.random.Generator,
                  mode: Optional[str] = None) -> tuple[list[SimToken], list[Event]]:
    """Inject Single or Multi co-dysfluencies.  Returns the mutated tokens and events.

    Single: 2-3 instances of one type, each in a different word.  Multi: one
    of the five combinations, its two events at distinct phoneme positions.
    """
    mode = mode or config.mode
    if mode == "mixed":
        mode = "multi" if rng.random() < config.multi_fraction else "single"
    tokens = list(tokens)
    if mode == "fluent":
        return tokens, []
    kw = dict(durations=config.durations, block_frames=config.block_frames, prolong_factor=config.prolong_factor)
    events: list[Event] = []

    if mode == "single":
        dtype = config.single_types[rng.choice(len(config.single_types), p=config.type_probabilities())]
        n = 3 if rng.random() < config.p_three else 2
        by_word: dict[int, list[int]] = {}
        for p in _positions(tokens, dtype):
            by_word.setdefault(tokens[_locate(tokens, p)].word, []).append(p)
        if len(by_word) < n:
            raise InjectionError(f"utterance too short for {n} {dtype.value} instances")
        chosen_words = sorted(rng.choice(sorted(by_word), size=n, replace=False))
        for ev_id, w in enumerate(chosen_words):
            cands = by_word[int(w)]
            p = int(cands[rng.integers(len(cands))])
            tokens = inject(tokens, dtype, p, rng, ev_id, **kw)
            events.append(Event(ev_id, dtype, int(w), p))
        return tokens, events

    combo = config.multi_combos[rng.integers(len(config.multi_combos))]
    used: list[int] = []
    for ev_id, dtype in enumerate(combo):
        cands = _positions(tokens, dtype, exclude=used)
        if not cands:
            raise InjectionError(f"utterance too short for {dtype.value}")
        p = int(cands[rng.integers(len(cands))])
        word = tokens[_locate(tokens, p)].word
        tokens = inject(tokens, dtype, p, rng, ev_id, **kw)
        events.append(Event(ev_id, dtype, word, p))
        used.append(p)
    return tokens, events


def synth_timed(tokens: Sequence[SimToken], alphabet: PhonemeAlphabet = DEFAULT_ALPHABET) -> TimedTokenSequence:
    """Contiguous timed tokens; deletion markers (zero frames) are dropped."""
    syms = [alphabet.lookup(t.symbol) for t in tokens if t.symbol is not None]
    frames = [t.frames for t in tokens if t.symbol is not None]
    if any(f <= 0 for f in frames):
        raise ValueError("durations must be positive")
    return TimedTokenSequence.from_durations(syms, frames)


# ---------------------------------------------------------------------------
# features


class FeatureSynth:
    """Frame features: a phoneme embedding, a per-token offset and frame noise.

    The token offset keeps adjacent copies of the same phoneme distinguishable,
    as separate articulations would be.
    """

    def __init__(self, alphabet: PhonemeAlphabet = DEFAULT_ALPHABET, dim: int = 64, seed: int = 0,
                 scale: float = 1.0, token_noise: float = 0.35, frame_noise: float = 0.15, art_dim: int = 12):
        rng = np.random.default_rng([seed, 7])
        self.alphabet = alphabet
        self.table = scale * rng.standard_normal((len(alphabet), dim))
        self.art_table = rng.standard_normal((len(alphabet), art_dim))
        self.token_noise, self.frame_noise = token_noise, frame_noise

    def render(self, timed: TimedTokenSequence, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """(dim, T) speech features and (12, T) articulatory trajectories."""
        T = timed.n_frames
        feats = np.empty((self.table.shape[1], T))
        art = np.empty((self.art_table.shape[1], T))
        for tok in timed:
            n = tok.frames
            offset = rng.normal(0.0, self.token_noise, self.table.shape[1])
            noise = rng.normal(0.0, self.frame_noise, (n, self.table.shape[1]))
            feats[:, tok.start:tok.end] = (self.table[tok.symbol] + offset + noise).T
            ramp = np.linspace(0.0, 1.0, n)[None, :]
            art[:, tok.start:tok.end] = self.art_table[tok.symbol][:, None] * (0.5 + 0.5 * ramp)
        art += rng.normal(0.0, 0.05, art.shape)
        return feats, art


# ---------------------------------------------------------------------------
# utterances and corpora


@dataclass
class SimulatedUtterance:
    uid: str
    text: str
    words: list
    tokens: list  # SimToken, after injection
    events: list
    annotations: list
    timed: TimedTokenSequence
    features: np.ndarray  # (dim, T)
    articulatory: np.ndarray  # (12, T)

    @property
    def reference_phonemes(self) -> list[str]:
        return [s for s, _ in recover_fluent(self.tokens)]

    @property
    def reference_words(self) -> list[int]:
        kept = sorted((t for t in self.tokens if t.orig is not None), key=lambda t: t.orig)
        return [t.word for t in kept]

    @property
    def n_frames(self) -> int:
        return self.timed.n_frames

    def timed_json(self, alphabet: PhonemeAlphabet = DEFAULT_ALPHABET) -> str:
        real = [t for t in self.tokens if t.symbol is not None]
        items = [{"phoneme": alphabet.label(tt.symbol), "word": self.words[t.word],
                  "start": round(tt.start_s, 2), "end": round(tt.end_s, 2)} for tt, t in zip(self.timed, real)]
        return json.dumps({"text": self.text, "words": self.words, "reference": self.reference_phonemes,
                           "reference_words": self.reference_words, "tokens": items}, indent=1)


def simulate_utterance(text: str, lexicon: Lexicon, config: SimulationConfig, index: int = 0,
                       synth: Optional[FeatureSynth] = None, mode: Optional[str] = None) -> SimulatedUtterance:
    rng = np.random.default_rng([config.seed, index])
    words = tokenize(text)
    if not words:
        raise ValueError("empty utterance")
    fluent = fluent_tokens(words, lexicon, config.durations, rng)
    tokens, events = co_dysfluency(fluent, config, rng, mode)
    timed = synth_timed(tokens)
    synth = synth or FeatureSynth(dim=config.feature_dim, seed=config.voice_seed)
    feats, art = synth.render(timed, rng)
    return SimulatedUtterance(f"utt{index:05d}", " ".join(words), words, tokens, events,
                              annotate(tokens, events, words), timed, feats, art)


def simulate_corpus(texts: Sequence[str], config: SimulationConfig, lexicon: Optional[Lexicon] = None,
                    n: Optional[int] = None, start: int = 0) -> list[SimulatedUtterance]:
    """``n`` utterances cycling through ``texts`` (default: one per text)."""
    if not texts:
        raise ValueError("no input texts")
    lexicon = lexicon or Lexicon.builtin()
    for t in texts:
        for w in tokenize(t):
            lexicon[w]
    synth = FeatureSynth(dim=config.feature_dim, seed=config.voice_seed)
    n = len(texts) if n is None else n
    return [simulate_utterance(texts[i % len(texts)], lexicon, config, i, synth) for i in range(start, start + n)]


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_utterance(out_dir: Path, utt: SimulatedUtterance) -> dict:
    files = {
        "features": f"{utt.uid}.nafm",
        "articulatory": f"{utt.uid}.art.nafm",
        "tokens": f"{utt.uid}.tokens.json",
        "annotations": f"{utt.uid}.json",
    }
    write_matrix(out_dir / files["features"], utt.features)
    write_matrix(out_dir / files["articulatory"], utt.articulatory)
    (out_dir / files["tokens"]).write_text(utt.timed_json() + "\n", encoding="utf-8")
    (out_dir / files["annotations"]).write_text(serialize_annotations(utt.annotations) + "\n", encoding="utf-8")
    digests = {k: _digest((out_dir / v).read_bytes()) for k, v in files.items()}
    return {"id": utt.uid, "text": utt.text, "n_frames": utt.n_frames, "n_events": len(utt.annotations),
            "files": files, "sha256": digests}


def corpus_generate(texts: Sequence[str], config: SimulationConfig, out_dir, lexicon: Optional[Lexicon] = None,
                    n: Optional[int] = None, jobs: int = 1) -> dict:
    """Write per-utterance bundles plus ``manifest.json``; returns the manifest."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DysfluencyError(f"cannot create output directory {out_dir}: {exc}") from exc
    utts = simulate_corpus(texts, config, lexicon, n)
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(jobs) as pool:
            entries = list(pool.map(lambda u: write_utterance(out_dir, u), utts))
    else:
        entries = [write_utterance(out_dir, u) for u in utts]
    cfg = asdict(config)
    cfg["single_types"] = [t.value for t in config.single_types]
    cfg["multi_combos"] = [[a.value, b.value] for a, b in config.multi_combos]
    manifest = {
        "config": cfg,
        "n_utterances": len(entries),
        "mean_events": float(np.mean([e["n_events"] for e in entries])),
        "utterances": entries,
    }
    body = json.dumps(manifest, indent=1, sort_keys=True, default=str)
    manifest["digest"] = _digest(body.encode())
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True, default=str) + "\n",
                                           encoding="utf-8")
    return manifest


def load_utterance(directory, entry: dict) -> dict:
    """Read one bundle written by :func:`corpus_generate`."""
    from .core import read_annotations, read_matrix

    directory = Path(directory)
    files = entry["files"]
    return {
        "features": read_matrix(directory / files["features"]).astype(np.float64),
        "tokens": json.loads((directory / files["tokens"]).read_text(encoding="utf-8")),
        "annotations": read_annotations(directory / files["annotations"]),
    }
