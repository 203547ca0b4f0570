"""A small reverse-mode differentiation engine over numpy arrays.

Operations on :class:`Tensor` values are recorded on the active :class:`Tape`
when at least one input requires a gradient.  ``Tape.backward`` walks the
recorded nodes in reverse creation order, which is a reverse topological order
of the computation graph.

    >>> w = Parameter(np.array([2.0]), name="w")
    >>> with Tape() as tape:
    ...     loss = (w * w).sum()
    >>> tape.backward(loss)
    >>> w.grad
    array([4.])
"""
from __future__ import annotations

import contextvars
import json
import math
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .core import ShapeError, read_matrix, write_matrix

_active_tape: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar("tape", default=None)


class Tape:
    """Ordered record of differentiable operations.

    Used as a context manager; nested tapes are not supported.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)

    def record(self, node: "Tensor") -> None:
        self.nodes.append(node)

    def backward(self, loss: "Tensor", seed: Optional[np.ndarray] = None) -> None:
        if loss.data.size != 1 and seed is None:
            raise ValueError("backward needs a scalar loss or an explicit seed")
        if not loss.requires_grad:
            return
        loss.grad = np.ones_like(loss.data) if seed is None else np.asarray(seed, dtype=np.float64)
        for node in reversed(self.nodes):
            g = node.grad
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.array(pg, dtype=np.float64, copy=True)
                else:
                    parent.grad = parent.grad + pg
            if not isinstance(node, Parameter):
                node.grad = None  # intermediate gradients are no longer needed


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self.name = name

    def __repr__(self) -> str:
        return f"Tensor({self.data!r})"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """A named trainable leaf with a gradient accumulator."""

    __slots__ = ()

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, dtype=np.float64, copy=True), requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _node(data, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    tape = _active_tape.get()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        tape.record(out)
    return out


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return _node(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)
    return _node(out, (a,), lambda g: (g * 0.5 * (1.0 + np.tanh(0.5 * a.data)),))


def where(cond, a, b) -> Tensor:
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    return _node(np.where(cond, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                            _unbroadcast(np.where(cond, 0.0, g), b.shape)))


# ---------------------------------------------------------------------------
# reductions and normalizations


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def logsumexp(a, axis=-1, keepdims=False) -> Tensor:
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.log(s) + m
    w = e / s

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * w,)

    return _node(out if keepdims else np.squeeze(out, axis), (a,), backward)


def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), backward)


def log_softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _node(out, (a,), backward)


def cumsum(a, axis=-1, reverse=False) -> Tensor:
    a = as_tensor(a)
    if reverse:
        out = np.flip(np.cumsum(np.flip(a.data, axis), axis), axis)
        back = lambda g: (np.cumsum(g, axis),)
    else:
        out = np.cumsum(a.data, axis)
        back = lambda g: (np.flip(np.cumsum(np.flip(g, axis), axis), axis),)
    return _node(out, (a,), back)


# ---------------------------------------------------------------------------
# linear algebra and shape


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if ad.ndim == 1:
            return bd @ g, np.outer(ad, g)
        if bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return g @ bd.T, ad.T @ g

    return _node(a.data @ b.data, (a, b), backward)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _node(a.data[idx], (a,), backward)


def unstack(a) -> list[Tensor]:
    """Split along the first axis; gradients land in one shared buffer.

    Cheaper than repeated ``getitem`` when every slice is used, because no
    slice allocates a full-size gradient.
    """
    a = as_tensor(a)
    tape = _active_tape.get()
    if tape is None or not a.requires_grad:
        return [Tensor(a.data[i]) for i in range(a.shape[0])]
    buf = np.zeros_like(a.data)
    hub = Tensor(a.data)
    hub.requires_grad = True
    hub._parents = (a,)
    hub._backward = lambda g: (buf,)
    hub.grad = buf
    tape.record(hub)  # runs after every slice during the reverse sweep
    out = []
    for i in range(a.shape[0]):
        piece = Tensor(a.data[i])
        piece.requires_grad = True

        def backward(g, i=i):
            buf[i] += g
            return ()

        piece._backward = backward
        tape.record(piece)
        out.append(piece)
    return out


def concat(items: Sequence, axis=0) -> Tensor:
    items = [as_tensor(t) for t in items]
    sizes = np.cumsum([t.shape[axis] for t in items])[:-1]
    return _node(np.concatenate([t.data for t in items], axis=axis), items,
                 lambda g: tuple(np.split(g, sizes, axis=axis)))


def stack(items: Sequence, axis=0) -> Tensor:
    items = [as_tensor(t) for t in items]

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(items)))

    return _node(np.stack([t.data for t in items], axis=axis), items, backward)


def gather_rows(rows: Sequence[Tensor], row_idx, col_idx, mask=None) -> Tensor:
    """Pick ``rows[row_idx[k]][col_idx[k]]`` for every k.

    ``rows`` is a list of 1-D tensors (e.g. the rows of a dynamic-programming
    table built so far); only the referenced rows become graph parents.
    Entries where the boolean ``mask`` is False are zero and ignore their
    indices.
    """
    row_idx = np.asarray(row_idx, dtype=np.int64)
    col_idx = np.asarray(col_idx, dtype=np.int64)
    keep = np.ones(row_idx.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not keep.any():
        return Tensor(np.zeros(row_idx.shape))
    used = np.unique(row_idx[keep])
    parents = [as_tensor(rows[r]) for r in used]
    pos = np.searchsorted(used, row_idx[keep])
    cols = col_idx[keep]
    table = np.stack([p.data for p in parents])
    out = np.zeros(row_idx.shape)
    out[keep] = table[pos, cols]

    def backward(g):
        acc = np.zeros_like(table)
        np.add.at(acc, (pos, cols), g[keep])
        return list(acc)

    return _node(out, parents, backward)


def scatter(values, positions, size: int) -> Tensor:
    """Place a 1-D tensor at ``positions`` of a zero vector of length ``size``."""
    values = as_tensor(values)
    positions = np.asarray(positions, dtype=np.int64)
    out = np.zeros(size)
    out[positions] = values.data
    return _node(out, (values,), lambda g: (g[positions],))


# ---------------------------------------------------------------------------
# composite layers


def dense_forward(x, weights: Tensor, bias: Tensor) -> Tensor:
    """``W @ x + b`` for a vector ``x``, or row-wise ``x @ W.T + b`` for a batch."""
    x = as_tensor(x)
    if weights.ndim != 2 or bias.shape != (weights.shape[0],) or x.shape[-1] != weights.shape[1]:
        raise ValueError(f"shape mismatch: W{weights.shape}, b{bias.shape}, x{x.shape}")
    if x.ndim == 1:
        return matmul(weights, x) + bias
    return matmul(x, transpose(weights)) + bias


def mlp_forward(x, W1, b1, W2, b2) -> Tensor:
    """Fused ``tanh(x W1^T + b1) W2^T + b2`` for a batch ``x`` of shape (N, n_in).

    ``b1`` may be (hidden,) or a per-row (N, hidden) offset.  One tape node
    replaces the seven of the unfused expression.
    """
    x, W1, b1, W2, b2 = (as_tensor(t) for t in (x, W1, b1, W2, b2))
    h = np.tanh(x.data @ W1.data.T + b1.data)
    out = h @ W2.data.T + b2.data

    def backward(g):
        gh = (g @ W2.data) * (1.0 - h * h)
        return (gh @ W1.data, gh.T @ x.data, _unbroadcast(gh, b1.shape), g.T @ h, g.sum(axis=0))

    return _node(out, (x, W1, b1, W2, b2), backward)


def gaussian_sample(mu, sigma, noise) -> Tensor:
    """Reparameterized draw ``mu + sigma * noise``."""
    return add(mu, mul(sigma, noise))


def positive(raw) -> Tensor:
    """Map an unconstrained parameter to a strictly positive scale."""
    return softplus(raw) + 1e-6


class Dense:
    """Affine layer ``y = x W^T + b`` with named parameters."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, name: str,
                 scale: Optional[float] = None, zero: bool = False):
        scale = 1.0 / math.sqrt(n_in) if scale is None else scale
        w = np.zeros((n_out, n_in)) if zero else rng.normal(0.0, scale, size=(n_out, n_in))
        self.W = Parameter(w, name=f"{name}.W")
        self.b = Parameter(np.zeros(n_out), name=f"{name}.b")

    def __call__(self, x) -> Tensor:
        return dense_forward(x, self.W, self.b)

    def parameters(self) -> list[Parameter]:
        return [self.W, self.b]


class MLP:
    """Two-layer tanh network ``n_in -> hidden -> n_out``."""

    def __init__(self, n_in: int, hidden: int, n_out: int, rng: np.random.Generator, name: str):
        self.l1 = Dense(n_in, hidden, rng, f"{name}.l1")
        self.l2 = Dense(hidden, n_out, rng, f"{name}.l2")

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        if x.ndim == 2:
            return mlp_forward(x, self.l1.W, self.l1.b, self.l2.W, self.l2.b)
        return self.l2(tanh(self.l1(x)))

    def parameters(self) -> list[Parameter]:
        return self.l1.parameters() + self.l2.parameters()


# ---------------------------------------------------------------------------
# optimization


class LearningRateSchedule:
    """Step decay: ``lr0 * decay ** (step // every)``."""

    def __init__(self, lr0: float = 1e-3, decay: float = 0.9, every: int = 10):
        self.lr0, self.decay, self.every = lr0, decay, every

    def __call__(self, step: int) -> float:
        return self.lr0 * self.decay ** (step // self.every)


class SGD:
    def __init__(self, params: Sequence[Parameter], lr=1e-3):
        self.params = list(params)
        self.lr = lr if callable(lr) else (lambda step, _lr=lr: _lr)
        self.step_count = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        lr = self.lr(self.step_count)
        for p in self.params:
            p.data -= lr * p.grad
        self.step_count += 1


class Adam(SGD):
    def __init__(self, params: Sequence[Parameter], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        super().__init__(params, lr)
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        lr = self.lr(self.step_count)
        self.step_count += 1
        t = self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mhat = m / (1 - self.b1 ** t)
            vhat = v / (1 - self.b2 ** t)
            p.data -= lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------------------
# checking


def value_and_grad(loss_fn: Callable[[], Tensor], params: Sequence[Parameter]) -> float:
    """Evaluate ``loss_fn`` under a fresh tape and fill ``p.grad`` for each param."""
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    value = loss.item()
    if not math.isfinite(value):
        raise FloatingPointError(f"non-finite loss {value}")
    tape.backward(loss)
    return value


def gradient_check(loss_fn: Callable[[], Tensor], params: Sequence[Parameter],
                   eps: float = 1e-6) -> float:
    """Max relative error between tape gradients and central differences.

    The error per entry is ``|analytic - numeric| / max(1, |numeric|)``.
    ``loss_fn`` must be deterministic (freeze all noise before calling).
    """
    value_and_grad(loss_fn, params)
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = loss_fn().item()
            flat[k] = orig - eps
            down = loss_fn().item()
            flat[k] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise FloatingPointError("non-finite loss during finite differencing")
            num = (up - down) / (2 * eps)
            worst = max(worst, abs(ga.reshape(-1)[k] - num) / max(1.0, abs(num)))
    return worst


# ---------------------------------------------------------------------------
# checkpoints


def save_parameters(directory, params: Iterable[Parameter]) -> None:
    """Write each parameter as an NAFM matrix plus a JSON manifest.

    Values are stored as float32, so reloaded parameters are rounded.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = []
    for k, p in enumerate(params):
        fname = f"param_{k:03d}.nafm"
        write_matrix(directory / fname, p.data.reshape(1, -1) if p.ndim < 2 else p.data.reshape(p.shape[0], -1))
        manifest.append({"name": p.name, "shape": list(p.shape), "file": fname})
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_parameters(directory, params: Iterable[Parameter]) -> None:
    """Load values saved by :func:`save_parameters` into matching parameters by name."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    by_name = {m["name"]: m for m in manifest}
    for p in params:
        entry = by_name.get(p.name)
        if entry is None:
            raise KeyError(f"parameter {p.name!r} missing from checkpoint")
        if tuple(entry["shape"]) != p.shape:
            raise ShapeError(f"{p.name}: checkpoint shape {entry['shape']} != {list(p.shape)}")
        p.data = read_matrix(directory / entry["file"]).astype(np.float64).reshape(p.shape)
        p.zero_grad()
