"""Emission grids and the learned transition model."""
from __future__ import annotations

import numpy as np

from ..grad import Parameter, Tensor, as_tensor, gaussian_sample, matmul, positive, sigmoid, softmax, transpose


def sample_token_embeddings(mu, raw_sigma, noise) -> Tensor:
    """Draw ``C^S = mu + sigma * noise`` once per grid, ``sigma = softplus(raw_sigma)``."""
    return gaussian_sample(mu, positive(raw_sigma), noise)


def emission_grid(tau, mu, raw_sigma, noise) -> Tensor:
    """Row-normalized emission probabilities ``Y[i, j] = p(C_j | tau_i)``.

    Parameters
    ----------
    tau : (T, D) speech tokens, one row per frame.
    mu, raw_sigma : (L, D) per-token Gaussian parameters of the text encoder.
    noise : (L, D) standard normal draws; zeros give the mean embeddings.

    Returns
    -------
    Tensor of shape (T, L) whose rows sum to one.
    """
    tau = as_tensor(tau)
    if tau.ndim != 2 or tau.shape[0] < 1:
        raise ValueError("tau must be a non-empty (T, D) matrix")
    cs = sample_token_embeddings(mu, raw_sigma, noise)
    if cs.shape[0] < 1:
        raise ValueError("need at least one text token")
    return softmax(matmul(tau, transpose(cs)), axis=1)


class TransitionModel:
    """``phi(C_m | C_n) = sigmoid(e_m . (W e_n + b))`` with a D x D linear map."""

    def __init__(self, dim: int, rng: np.random.Generator, name: str = "transition"):
        self.W = Parameter(rng.normal(0.0, 1.0 / dim, size=(dim, dim)), name=f"{name}.W")
        self.b = Parameter(np.zeros(dim), name=f"{name}.b")

    def parameters(self) -> list[Parameter]:
        return [self.W, self.b]

    def matrix(self, embeddings) -> Tensor:
        """(L, L) matrix with entry ``[m, n] = phi(C_m | C_n)``."""
        e = as_tensor(embeddings)
        projected = matmul(e, transpose(self.W)) + self.b  # row n: W e_n + b
        return sigmoid(matmul(e, transpose(projected)))
