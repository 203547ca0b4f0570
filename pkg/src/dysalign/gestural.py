"""Sparse gestural scores and the three representation losses.

A gestural score matrix ``H`` (K gestures x T frames) is generated
semi-implicitly.  For each row a count ``Z_C`` is drawn over ``ceil(T/4)``
classes, then ``Z_C`` (start, end) index pairs over ``T`` classes, then
Gaussian values on the covered frames.  Counts and indices use Gumbel-Softmax
with straight-through one-hots so the hard sample drives the forward pass
while gradients follow the relaxed probabilities.

The encoders here are small dense stand-ins working on a fixed frame count:

* projection  12 -> K per frame (gives the row signals ``X_i``)
* count       T -> ceil(T/4), shared across rows
* index       T -> 2T (start and end logits), shared across rows and spans
* value       12 -> 2K per frame (means and raw variances)
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import read_matrix, write_matrix
from .grad import (Dense, Parameter, Tensor, as_tensor, concat, cumsum, log, matmul, mean, positive, reshape, softmax,
                   tanh, transpose, where)

DEFAULT_TEMPERATURE = 2.0
DEFAULT_SIGMA_MIN = 0.01
ARTICULATORY_DIM = 12


def n_count_classes(T: int) -> int:
    return max(1, math.ceil(T / 4))


# ---------------------------------------------------------------------------
# sparse representation


@dataclass
class GesturalScores:
    """Per-row span lists; spans are 0-based inclusive ``(start, end, values)``."""

    K: int
    T: int
    rows: list = field(default_factory=list)

    def __post_init__(self):
        if not self.rows:
            self.rows = [[] for _ in range(self.K)]
        self.rows = [[(int(s), int(e), np.asarray(v, dtype=np.float64)) for s, e, v in row] for row in self.rows]
        self.validate()

    def validate(self) -> None:
        if len(self.rows) != self.K:
            raise ValueError(f"expected {self.K} rows, got {len(self.rows)}")
        for i, row in enumerate(self.rows):
            prev_end = -1
            for s, e, v in row:
                if not 0 <= s <= e < self.T:
                    raise ValueError(f"row {i}: span ({s}, {e}) outside [0, {self.T})")
                if s <= prev_end:
                    raise ValueError(f"row {i}: spans overlap or are unsorted")
                if v.shape != (e - s + 1,):
                    raise ValueError(f"row {i}: span ({s}, {e}) needs {e - s + 1} values")
                prev_end = e

    @property
    def n_spans(self) -> int:
        return sum(len(r) for r in self.rows)

    def to_dense(self) -> np.ndarray:
        H = np.zeros((self.K, self.T))
        for i, row in enumerate(self.rows):
            for s, e, v in row:
                H[i, s:e + 1] = v
        return H

    @classmethod
    def from_dense(cls, H) -> "GesturalScores":
        """Maximal runs of non-zero entries become spans."""
        H = np.asarray(H, dtype=np.float64)
        K, T = H.shape
        rows = []
        for i in range(K):
            nz = np.concatenate([[False], H[i] != 0, [False]])
            edges = np.flatnonzero(nz[1:] != nz[:-1])
            rows.append([(s, e - 1, H[i, s:e].copy()) for s, e in zip(edges[::2], edges[1::2])])
        return cls(K, T, rows)

    def to_json(self) -> str:
        doc = {"K": self.K, "T": self.T,
               "rows": [[{"start": s, "end": e, "values": v.tolist()} for s, e, v in row] for row in self.rows]}
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "GesturalScores":
        doc = json.loads(text)
        rows = [[(d["start"], d["end"], d["values"]) for d in row] for row in doc["rows"]]
        return cls(doc["K"], doc["T"], rows)

    def write_dense(self, path) -> None:
        write_matrix(path, self.to_dense())

    @classmethod
    def read_dense(cls, path) -> "GesturalScores":
        return cls.from_dense(read_matrix(path).astype(np.float64))


def merge_spans(spans: Sequence[tuple[int, int]]) -> list[tuple[int, int]]:
    """Sort each (a, b) pair, sort by start, and take the union of the covered frames."""
    ordered = sorted((min(a, b), max(a, b)) for a, b in spans)
    out: list[list[int]] = []
    for s, e in ordered:
        if out and s <= out[-1][1] + 1:
            out[-1][1] = max(out[-1][1], e)
        else:
            out.append([s, e])
    return [(s, e) for s, e in out]


def generate_spans(draws: Sequence[tuple[int, int]], count: int) -> list[tuple[int, int]]:
    """Spans from the first ``count`` raw (start, end) index draws."""
    if count < 1:
        raise ValueError("count must be at least 1")
    if len(draws) < count:
        raise ValueError(f"need {count} index pairs, got {len(draws)}")
    return merge_spans(list(draws)[:count])


# ---------------------------------------------------------------------------
# Gumbel-Softmax


def gumbel_noise(uniform) -> np.ndarray:
    u = np.asarray(uniform, dtype=np.float64)
    if np.any((u <= 0) | (u >= 1)):
        raise ValueError("uniform noise must lie strictly inside (0, 1)")
    return -np.log(-np.log(u))


def gumbel_categorical_sample(logits, temperature: float, noise) -> tuple[Tensor, np.ndarray]:
    """Relaxed sample ``softmax((logits + g) / temperature)`` and the hard argmax.

    ``noise`` holds uniform draws of the same shape as ``logits``; the last
    axis indexes the classes.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    logits = as_tensor(logits)
    perturbed = logits + gumbel_noise(noise)
    soft = softmax(perturbed * (1.0 / temperature), axis=-1)
    return soft, np.argmax(perturbed.data, axis=-1)


def one_hot(index, n: int) -> np.ndarray:
    return np.eye(n)[np.asarray(index)]


def straight_through(soft: Tensor, hard_index) -> Tensor:
    """Forward value is the one-hot of ``hard_index``; gradient flows through ``soft``."""
    hard = one_hot(hard_index, soft.shape[-1])
    return soft + (hard - soft.data)


# ---------------------------------------------------------------------------
# KL terms


def _xlogx(q: Tensor) -> Tensor:
    pos = q.data > 0
    return where(pos, q * log(where(pos, q, 1.0)), 0.0)


def categorical_kl_uniform(probs) -> Tensor:
    """``KL(q || uniform)`` along the last axis, summed over leading axes."""
    q = as_tensor(probs)
    n = q.shape[-1]
    return _xlogx(q).sum() + math.log(n) * (q.data.size // n)


def gaussian_kl_standard(mu, var, mask=None) -> Tensor:
    """``0.5 (mu^2 + var - 1 - log var)`` summed over entries (optionally masked)."""
    mu, var = as_tensor(mu), as_tensor(var)
    kl = (mu * mu + var - 1.0 - log(var)) * 0.5
    if mask is not None:
        kl = kl * np.asarray(mask, dtype=np.float64)
    return kl.sum()


def kl_loss(count_probs, index_probs, index_weights, value_mean, value_var, value_mask=None) -> Tensor:
    """Discrete KL of counts and gated indices against uniform priors plus the value KL.

    ``index_probs`` is (K, C1, 2, T) and ``index_weights`` (K, C1) marks the
    spans that are active under the sampled count.
    """
    index_probs = as_tensor(index_probs)
    K, C1, _, T = index_probs.shape
    per = _xlogx(index_probs).sum(axis=3) + math.log(T)  # (K, C1, 2)
    w = np.asarray(index_weights, dtype=np.float64)[:, :, None]
    index_kl = (per * w).sum()
    return categorical_kl_uniform(count_probs) + index_kl + gaussian_kl_standard(value_mean, value_var, value_mask)


# ---------------------------------------------------------------------------
# encoder


@dataclass
class GesturalNoise:
    """All random draws for one pass; freeze these to make a pass deterministic."""

    count: np.ndarray  # (K, C1) uniform
    index: np.ndarray  # (K, C1, 2, T) uniform
    value: np.ndarray  # (K, T) standard normal

    @classmethod
    def draw(cls, K: int, T: int, rng: np.random.Generator) -> "GesturalNoise":
        C1 = n_count_classes(T)
        eps = 1e-12
        return cls(rng.uniform(eps, 1 - eps, (K, C1)), rng.uniform(eps, 1 - eps, (K, C1, 2, T)),
                   rng.standard_normal((K, T)))


@dataclass
class EncoderOutput:
    H: Tensor  # (K, T)
    mask: np.ndarray  # (K, T) hard span mask
    count_probs: Tensor
    index_probs: Tensor
    gates: np.ndarray  # (K, C1) hard span activity
    value_mean: Tensor
    value_var: Tensor
    counts: np.ndarray  # sampled counts, 1-based
    draws: np.ndarray  # (K, C1, 2) hard index draws

    def scores(self) -> GesturalScores:
        H = self.H.data
        rows = []
        for i in range(H.shape[0]):
            spans = generate_spans([tuple(d) for d in self.draws[i]], int(self.counts[i]))
            rows.append([(s, e, H[i, s:e + 1].copy()) for s, e in spans])
        return GesturalScores(H.shape[0], H.shape[1], rows)

    def kl(self) -> Tensor:
        return kl_loss(self.count_probs, self.index_probs, self.gates, self.value_mean, self.value_var, self.mask)


class GesturalEncoder:
    """Stand-in count/index/value encoders for a fixed frame count ``T``."""

    def __init__(self, K: int, T: int, rng: np.random.Generator, dim: int = ARTICULATORY_DIM,
                 temperature: float = DEFAULT_TEMPERATURE, name: str = "gestural"):
        if T < 4:
            raise ValueError("need at least 4 frames")
        self.K, self.T, self.dim, self.temperature = K, T, dim, temperature
        self.C1 = n_count_classes(T)
        self.project = Dense(dim, K, rng, f"{name}.project")
        self.count = Dense(T, self.C1, rng, f"{name}.count")
        self.index = Dense(T, 2 * T, rng, f"{name}.index")
        self.value = Dense(dim, 2 * K, rng, f"{name}.value")

    def parameters(self) -> list[Parameter]:
        return (self.project.parameters() + self.count.parameters() + self.index.parameters()
                + self.value.parameters())

    def rows(self, X) -> Tensor:
        """Row signals ``X_i``: the (K, T) per-frame projection of ``X`` (dim x T)."""
        X = as_tensor(X)
        if X.shape != (self.dim, self.T):
            raise ValueError(f"expected features of shape {(self.dim, self.T)}, got {X.shape}")
        return transpose(self.project(transpose(X)))

    def count_logits(self, X) -> Tensor:
        return self.count(self.rows(X))

    def __call__(self, X, noise: GesturalNoise, relaxed: bool = False) -> EncoderOutput:
        """Sample ``H``.  ``relaxed`` replaces the one-hots by their soft relaxation.

        With frozen noise the relaxed pass is a smooth function of the
        parameters, which is what central-difference checks need.
        """
        K, T, C1 = self.K, self.T, self.C1
        R = self.rows(X)

        c_logits = self.count(R)  # (K, C1)
        c_soft, c_hard = gumbel_categorical_sample(c_logits, self.temperature, noise.count)
        c_onehot = c_soft if relaxed else straight_through(c_soft, c_hard)
        gates = cumsum(c_onehot, axis=1, reverse=True)  # gate_t = P(count > t)

        i_logits = reshape(self.index(R), (K, 1, 2, T))
        i_logits = i_logits + np.zeros((K, C1, 2, T))
        i_soft, i_hard = gumbel_categorical_sample(i_logits, self.temperature, noise.index)
        i_onehot = i_soft if relaxed else straight_through(i_soft, i_hard)
        first, second = i_onehot[:, :, 0, :], i_onehot[:, :, 1, :]
        swap = (i_hard[:, :, 0] > i_hard[:, :, 1])[:, :, None]
        lo = where(swap, second, first)
        hi = where(swap, first, second)
        span_mask = cumsum(lo, axis=2) * cumsum(hi, axis=2, reverse=True)  # (K, C1, T)

        weighted = span_mask * reshape(gates, (K, C1, 1))
        keep = Tensor(np.ones((K, T)))
        for t in range(C1):
            keep = keep * (1.0 - weighted[:, t, :])
        mask = 1.0 - keep

        stats = transpose(self.value(transpose(as_tensor(X))))  # (2K, T)
        v_mean, v_var = stats[:K], positive(stats[K:])
        values = v_mean + v_var ** 0.5 * noise.value

        hard_mask = (1.0 - np.prod(1.0 - one_hot(c_hard, C1)[:, ::-1].cumsum(axis=1)[:, ::-1][:, :, None]
                                   * _hard_span_mask(i_hard, T), axis=1))
        return EncoderOutput(
            H=mask * values,
            mask=hard_mask,
            count_probs=softmax(c_logits, axis=-1),
            index_probs=softmax(i_logits, axis=-1),
            gates=one_hot(c_hard, C1)[:, ::-1].cumsum(axis=1)[:, ::-1],
            value_mean=v_mean,
            value_var=v_var,
            counts=c_hard + 1,
            draws=i_hard,
        )


def _hard_span_mask(draws: np.ndarray, T: int) -> np.ndarray:
    lo = np.minimum(draws[..., 0], draws[..., 1])[..., None]
    hi = np.maximum(draws[..., 0], draws[..., 1])[..., None]
    t = np.arange(T)
    return ((t >= lo) & (t <= hi)).astype(np.float64)


def encode_values(mean_vec, var_vec, noise) -> Tensor:
    """Reparameterized span values ``mean + sqrt(var) * noise``."""
    return as_tensor(mean_vec) + as_tensor(var_vec) ** 0.5 * np.asarray(noise, dtype=np.float64)


# ---------------------------------------------------------------------------
# flow matching


def flow_path(x0, x, t: float, sigma_min: float = DEFAULT_SIGMA_MIN):
    """Point ``x_t`` on the linear noise-to-data path and its velocity ``u_t``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    if not 0.0 < sigma_min < 1.0:
        raise ValueError("sigma_min must lie in (0, 1)")
    x0 = np.asarray(x0, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    x_t = (1.0 - (1.0 - sigma_min) * t) * x0 + t * x
    u_t = x - (1.0 - sigma_min) * x0
    return x_t, u_t


def step_embedding(t: float, dim: int) -> np.ndarray:
    """Sinusoidal embedding of the flow step."""
    half = max(1, dim // 2)
    freqs = np.exp(-math.log(1000.0) * np.arange(half) / half)
    emb = np.concatenate([np.sin(t * freqs * 100.0), np.cos(t * freqs * 100.0)])
    return np.resize(emb, dim)


@dataclass(frozen=True)
class FlowConfig:
    sigma_min: float = DEFAULT_SIGMA_MIN
    hidden: int = 32

    def __post_init__(self):
        if not 0.0 < self.sigma_min < 1.0:
            raise ValueError("sigma_min must lie in (0, 1)")


class VectorField:
    """``v_t`` from the stacked input ``[H; X_t; X]`` plus a step-embedding column.

    Each column passes through a tanh layer; the mean hidden state over all
    T + 1 columns is added back to every frame before the output layer.
    """

    def __init__(self, K: int, D: int, rng: np.random.Generator, config: FlowConfig = FlowConfig(),
                 name: str = "flow"):
        self.K, self.D, self.config = K, D, config
        self.inp = Dense(K + 2 * D, config.hidden, rng, f"{name}.in")
        self.mix = Dense(config.hidden, config.hidden, rng, f"{name}.mix")
        self.out = Dense(config.hidden, D, rng, f"{name}.out")

    def parameters(self) -> list[Parameter]:
        return self.inp.parameters() + self.mix.parameters() + self.out.parameters()

    def stacked_input(self, H, x_t, x_hat, t: float) -> Tensor:
        H, x_t, x_hat = as_tensor(H), as_tensor(x_t), as_tensor(x_hat)
        if H.shape[0] != self.K or x_t.shape != x_hat.shape or x_hat.shape[0] != self.D \
                or H.shape[1] != x_hat.shape[1]:
            raise ValueError(f"cannot stack H{H.shape}, x_t{x_t.shape}, x{x_hat.shape}")
        body = concat([H, x_t, x_hat], axis=0)  # (K + 2D, T)
        s_t = np.zeros((self.K + 2 * self.D, 1))
        s_t[:self.K, 0] = step_embedding(t, self.K)
        return concat([body, Tensor(s_t)], axis=1)  # (K + 2D, T + 1)

    def __call__(self, H, x_t, x_hat, t: float) -> Tensor:
        stacked = self.stacked_input(H, x_t, x_hat, t)
        T = stacked.shape[1] - 1
        hidden = tanh(self.inp(transpose(stacked)))  # (T + 1, hidden)
        context = self.mix(mean(hidden, axis=0, keepdims=True))
        v = self.out(tanh(hidden[:T] + context))  # (T, D)
        return transpose(v)


def flow_loss(H, x_hat, t: float, x0, field_fn, sigma_min: float = DEFAULT_SIGMA_MIN) -> Tensor:
    """Mean over frames of ``||u_t - v_t||^2``.

    ``field_fn(H, x_t, x_hat, t)`` returns the (D, T) predicted velocity.
    """
    x_t, u_t = flow_path(x0, as_tensor(x_hat).data, t, sigma_min)
    v = field_fn(H, x_t, x_hat, t)
    diff = v - u_t
    return (diff * diff).sum() * (1.0 / u_t.shape[1])


# ---------------------------------------------------------------------------
# gestures and reconstruction


@dataclass
class GestureDictionary:
    G: np.ndarray  # (T', 12, K)
    objective: list = field(default_factory=list)

    @property
    def K(self) -> int:
        return self.G.shape[2]

    @property
    def window(self) -> int:
        return self.G.shape[0]


def extract_windows(X, window: int = 10, stride: Optional[int] = None) -> np.ndarray:
    """Slices ``X[:, s:s+window]`` of a (12, T) trajectory as (N, window, 12)."""
    X = np.asarray(X, dtype=np.float64)
    stride = window if stride is None else stride
    starts = range(0, X.shape[1] - window + 1, stride)
    return np.stack([X[:, s:s + window].T for s in starts]) if X.shape[1] >= window else np.empty((0, window, X.shape[0]))


def _kmeans_pp(data: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    centers = [data[rng.integers(len(data))]]
    d2 = ((data - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, K):
        total = d2.sum()
        idx = rng.integers(len(data)) if total <= 0 else rng.choice(len(data), p=d2 / total)
        centers.append(data[idx])
        d2 = np.minimum(d2, ((data - data[idx]) ** 2).sum(axis=1))
    return np.stack(centers)


def kmeans(data, K: int, rng: np.random.Generator, max_iter: int = 100, tol: float = 0.0):
    """Lloyd iterations from k-means++ seeds.

    Returns (centroids, labels, objective per iteration).  An emptied cluster is
    re-seeded with the point farthest from its centroid.
    """
    data = np.asarray(data, dtype=np.float64)
    if len(data) < K:
        raise ValueError(f"need at least {K} points, got {len(data)}")
    centers = _kmeans_pp(data, K, rng)
    history = []
    labels = np.zeros(len(data), dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((data[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        history.append(float(d2[np.arange(len(data)), labels].sum()))
        new = centers.copy()
        for k in range(K):
            members = data[labels == k]
            if len(members):
                new[k] = members.mean(axis=0)
            else:
                far = d2[np.arange(len(data)), labels].argmax()
                new[k] = data[far]
        if np.allclose(new, centers, atol=tol, rtol=0):
            centers = new
            break
        centers = new
    d2 = ((data[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    history.append(float(d2[np.arange(len(data)), labels].sum()))
    return centers, labels, history


def kmeans_gestures(windows, K: int, seed: int = 0, max_iter: int = 100) -> GestureDictionary:
    """Cluster (N, T', 12) windows into K gesture kernels."""
    windows = np.asarray(windows, dtype=np.float64)
    N, Tp, D = windows.shape
    if N < K:
        raise ValueError(f"need at least {K} windows, got {N}")
    centers, _, history = kmeans(windows.reshape(N, -1), K, np.random.default_rng(seed), max_iter)
    return GestureDictionary(np.transpose(centers.reshape(K, Tp, D), (1, 2, 0)), history)


def pit_reconstruct(H, G) -> Tensor:
    """``X_rec[:, t] = sum_s G[s] @ H[:, t - s]`` with windows truncated at the end."""
    H = as_tensor(H)
    G = np.asarray(G.G if isinstance(G, GestureDictionary) else G, dtype=np.float64)
    Tp, D, K = G.shape
    if H.shape[0] != K:
        raise ValueError(f"scores have {H.shape[0]} rows, gestures {K}")
    T = H.shape[1]
    out = matmul(G[0], H)
    for s in range(1, min(Tp, T)):
        shifted = concat([Tensor(np.zeros((K, s))), H[:, :T - s]], axis=1)
        out = out + matmul(G[s], shifted)
    return out


def pit_loss(X, H, G) -> Tensor:
    diff = as_tensor(X) - pit_reconstruct(H, G)
    return (diff * diff).sum()
