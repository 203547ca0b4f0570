"""Training loop for the aligner on simulated utterances."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import DEFAULT_ALPHABET, PhonemeAlphabet
from .grad import Adam, LearningRateSchedule, Tape, Tensor
from .model import AlignerModel, PreNoise
from .simulate import SimulatedUtterance

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainExample:
    tau: np.ndarray  # (T, D)
    ref_ids: tuple  # fluent reference phonemes
    spoken_ids: tuple  # phonemes actually produced, SIL included

    @classmethod
    def from_utterance(cls, utt: SimulatedUtterance, alphabet: PhonemeAlphabet = DEFAULT_ALPHABET) -> "TrainExample":
        return cls(utt.features.T.copy(), tuple(alphabet.encode(utt.reference_phonemes)),
                   tuple(utt.timed.symbols))


def example_objective(model: AlignerModel, ex: TrainExample, noise: PreNoise, w_pre: float, w_post: float) -> Tensor:
    total = Tensor(0.0)
    if w_pre:
        total = total + model.pre_loss(ex.tau, ex.ref_ids, noise) * w_pre
    if w_post:
        total = total + model.post_loss(ex.tau, ex.spoken_ids) * w_post
    return total


def frozen_noise(model: AlignerModel, examples: Sequence[TrainExample], seed: int) -> list[PreNoise]:
    rng = np.random.default_rng(seed)
    return [PreNoise.draw(ex.tau.shape[0], len(ex.ref_ids), model.dim, rng) for ex in examples]


def evaluate_objective(model: AlignerModel, examples: Sequence[TrainExample], noises: Sequence[PreNoise],
                       w_pre: float = 1.0, w_post: float = 1.0) -> float:
    """Mean of ``w_pre * L_PRE + w_post * L_POST`` under frozen noise (no tape)."""
    vals = [example_objective(model, ex, nz, w_pre, w_post).item() for ex, nz in zip(examples, noises)]
    return float(np.mean(vals))


@dataclass
class TrainResult:
    losses: list = field(default_factory=list)  # mini-batch objective per step
    initial: float = float("nan")  # frozen-noise objective before training
    final: float = float("nan")


def train(model: AlignerModel, examples: Sequence[TrainExample], steps: int = 200, batch: int = 2,
          schedule: Optional[LearningRateSchedule] = None, w_pre: float = 1.0, w_post: float = 1.0,
          seed: int = 0, callback: Optional[Callable[[int, float], None]] = None) -> TrainResult:
    """Adam on mini-batches; noise and FCSA offsets are resampled every step.

    The objective is also measured on all examples with one frozen noise draw
    before and after training, so the two numbers are comparable.
    """
    if not examples:
        raise ValueError("no training examples")
    rng = np.random.default_rng(seed)
    schedule = schedule or LearningRateSchedule()
    opt = Adam(model.parameters(), lr=schedule)
    eval_noise = frozen_noise(model, examples, seed + 1)
    result = TrainResult(initial=evaluate_objective(model, examples, eval_noise, w_pre, w_post))
    order = np.arange(len(examples))
    cursor = len(order)
    for step in range(steps):
        opt.zero_grad()
        total = 0.0
        for _ in range(batch):
            if cursor >= len(order):
                rng.shuffle(order)
                cursor = 0
            ex = examples[order[cursor]]
            cursor += 1
            noise = PreNoise.draw(ex.tau.shape[0], len(ex.ref_ids), model.dim, rng)
            with Tape() as tape:
                loss = example_objective(model, ex, noise, w_pre, w_post) * (1.0 / batch)
            tape.backward(loss)
            total += loss.item()
        opt.step()
        result.losses.append(total)
        if callback is not None:
            callback(step, total)
        if step % 50 == 0:
            log.info("step %d objective %.4f", step, total)
    result.final = evaluate_objective(model, examples, eval_noise, w_pre, w_post)
    return result
