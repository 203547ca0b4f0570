"""The trainable aligner: token embeddings, transition model and FCSA networks.

One embedding table covers the whole alphabet (blank and SIL included).  The
pre-alignment loss builds an emission grid over the reference phonemes; the
post-alignment loss is blank CTC over the full alphabet against the phonemes
actually spoken.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .align.ctc import ctc_loss
from .align.emission import TransitionModel, emission_grid, sample_token_embeddings
from .align.fcsa import (FcsaNetwork, Offsets, backward_bound, fcsa_backward, fcsa_forward, forward_bound,
                         pre_alignment_loss, sample_offsets)
from .core import DEFAULT_ALPHABET, PhonemeAlphabet
from .grad import Parameter, Tensor, getitem, load_parameters, log_softmax, matmul, save_parameters, transpose


@dataclass(frozen=True)
class PreNoise:
    """Frozen randomness of one pre-alignment pass."""

    embedding: np.ndarray  # (L, D) standard normal
    forward: Offsets
    backward: Offsets

    @classmethod
    def draw(cls, T: int, L: int, D: int, rng: np.random.Generator) -> "PreNoise":
        return cls(rng.standard_normal((L, D)), sample_offsets(forward_bound(T, L), rng),
                   sample_offsets(backward_bound(T, L), rng))


class AlignerModel:
    def __init__(self, rng: np.random.Generator, dim: int = 64, alphabet: PhonemeAlphabet = DEFAULT_ALPHABET,
                 hidden: int = 8, init_sigma: float = -4.0):
        self.alphabet = alphabet
        self.dim = dim
        self.mu = Parameter(rng.normal(0.0, 0.01, (len(alphabet), dim)), name="text.mu")
        self.raw_sigma = Parameter(np.full((len(alphabet), dim), init_sigma), name="text.raw_sigma")
        self.transition = TransitionModel(dim, rng)
        self.fcsa = FcsaNetwork(rng, hidden)

    def parameters(self) -> list[Parameter]:
        return [self.mu, self.raw_sigma] + self.transition.parameters() + self.fcsa.parameters()

    # ------------------------------------------------------------------
    def log_posteriors(self, tau) -> Tensor:
        """(T, V) log p(symbol | frame) over the whole alphabet, mean embeddings."""
        return log_softmax(matmul(tau, transpose(self.mu)), axis=1)

    def posteriors(self, tau) -> np.ndarray:
        return np.exp(self.log_posteriors(np.asarray(tau, dtype=np.float64)).data)

    def emission(self, tau, ref_ids: Sequence[int], noise: Optional[np.ndarray] = None) -> Tensor:
        ids = np.asarray(ref_ids)
        mu = getitem(self.mu, ids)
        sigma = getitem(self.raw_sigma, ids)
        noise = np.zeros((len(ids), self.dim)) if noise is None else noise
        return emission_grid(tau, mu, sigma, noise)

    def transition_matrix(self, ref_ids: Sequence[int], noise: Optional[np.ndarray] = None) -> Tensor:
        ids = np.asarray(ref_ids)
        noise = np.zeros((len(ids), self.dim)) if noise is None else noise
        cs = sample_token_embeddings(getitem(self.mu, ids), getitem(self.raw_sigma, ids), noise)
        return self.transition.matrix(cs)

    def pre_loss(self, tau, ref_ids: Sequence[int], noise: PreNoise) -> Tensor:
        Y = self.emission(tau, ref_ids, noise.embedding)
        phi = self.transition_matrix(ref_ids, noise.embedding)
        alpha = fcsa_forward(Y, phi, self.fcsa, noise.forward)
        beta = fcsa_backward(Y, phi, self.fcsa, noise.backward)
        return pre_alignment_loss(alpha.scores, beta.scores, Y)

    def post_loss(self, tau, spoken_ids: Sequence[int]) -> Tensor:
        return ctc_loss(self.log_posteriors(tau), spoken_ids, blank=self.alphabet.blank_id, log_input=True)

    # ------------------------------------------------------------------
    def save(self, directory) -> None:
        save_parameters(Path(directory), self.parameters())

    def load(self, directory) -> "AlignerModel":
        load_parameters(Path(directory), self.parameters())
        return self
