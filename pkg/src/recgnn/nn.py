"""Dense NN building blocks with explicit forward/backward functions.

Everything is float64 and functional: layers read parameters from a
ParameterSet, backward passes accumulate into a gradient ParameterSet of
the same layout, and the optimizer mutates only its own state. There is no
expression-graph autodiff; each operation records exactly the cache its
hand-written backward needs, which keeps the whole training path auditable
and fast for the small fixed architecture used here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class ParameterSet:
    """Named float64 tensors packed into one flat contiguous vector.

    Registration order is the canonical iteration order; `flat` concatenates
    the tensors in that order and every named view shares its memory, so
    vectorized whole-model updates (Adam, clipping) and per-layer access
    stay consistent by construction.
    """

    def __init__(self) -> None:
        self._order: list[str] = []
        self._shapes: dict[str, tuple[int, ...]] = {}
        self._layout: list[tuple[str, int, int, tuple[int, ...]]] = []
        self._offsets: dict[str, int] = {}
        self._views: dict[str, np.ndarray] = {}
        self._meta_cache: dict = {}
        self.flat = np.zeros(0, dtype=np.float64)
        self._finalized = False

    def add(self, name: str, shape: tuple[int, ...]) -> None:
        if self._finalized:
            raise RuntimeError("ParameterSet is finalized")
        if name in self._shapes:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._order.append(name)
        self._shapes[name] = tuple(int(s) for s in shape)

    def _build_views(self) -> None:
        flat = self.flat
        self._views = {
            name: flat[off:off + size].reshape(shape)
            for name, off, size, shape in self._layout
        }

    def finalize(self) -> "ParameterSet":
        if self._finalized:
            raise RuntimeError("ParameterSet is already finalized")
        total = 0
        for name in self._order:
            shape = self._shapes[name]
            size = int(math.prod(shape)) if shape else 1
            self._layout.append((name, total, size, shape))
            self._offsets[name] = total
            total += size
        self.flat = np.zeros(total, dtype=np.float64)
        self._build_views()
        self._finalized = True
        return self

    def offset(self, name: str) -> int:
        return self._offsets[name]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._order)

    def shape(self, name: str) -> tuple[int, ...]:
        return self._shapes[name]

    def __getitem__(self, name: str) -> np.ndarray:
        return self._views[name]

    def __contains__(self, name: str) -> bool:
        return name in self._shapes

    def __len__(self) -> int:
        return len(self._order)

    @property
    def size(self) -> int:
        return int(self.flat.size)

    def zeros_like(self) -> "ParameterSet":
        other = ParameterSet.__new__(ParameterSet)
        other._order = self._order
        other._shapes = self._shapes
        other._layout = self._layout
        other._offsets = self._offsets
        other._meta_cache = self._meta_cache  # metas depend only on the layout
        other.flat = np.zeros_like(self.flat)
        other._build_views()
        other._finalized = True
        return other

    def copy(self) -> "ParameterSet":
        other = self.zeros_like()
        other.flat[:] = self.flat
        return other

    def load_flat(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if values.size != self.flat.size:
            raise ValueError("flat size mismatch")
        self.flat[:] = values


def glorot_uniform(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    fan_in, fan_out = shape
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_glorot(params: ParameterSet, rng: np.random.Generator) -> ParameterSet:
    """Fill matrices with Glorot-uniform values, leave vectors (biases) zero."""
    for name in params.names:
        view = params[name]
        if view.ndim == 2:
            view[...] = glorot_uniform(view.shape, rng)
        else:
            view[...] = 0.0
    return params


# ---------------------------------------------------------------------------
# one-hidden-layer perceptron


@dataclass(frozen=True)
class MlpSpec:
    """One hidden layer of width hidden_factor * in_dim, ReLU, dropout after."""

    in_dim: int
    out_dim: int
    hidden_factor: int = 4
    dropout: float = 0.0

    def __post_init__(self) -> None:
        if self.hidden_factor < 1:
            raise ValueError("hidden_factor must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def hidden(self) -> int:
        return self.in_dim * self.hidden_factor


def mlp_param_shapes(prefix: str, spec: MlpSpec) -> list[tuple[str, tuple[int, ...]]]:
    return [
        (f"{prefix}.W1", (spec.in_dim, spec.hidden)),
        (f"{prefix}.b1", (spec.hidden,)),
        (f"{prefix}.W2", (spec.hidden, spec.out_dim)),
        (f"{prefix}.b2", (spec.out_dim,)),
    ]


def dropout_multiplier(rng: np.random.Generator, p: float, shape) -> np.ndarray | None:
    """Inverted-dropout multiplier: 0 with probability p, else 1/(1-p)."""
    if p <= 0.0:
        return None
    keep = rng.random(shape) >= p
    return keep.astype(np.float64) * (1.0 / (1.0 - p))


@lru_cache(maxsize=None)
def _mlp_names(prefix: str) -> tuple[str, ...]:
    return (f"{prefix}.W1", f"{prefix}.b1", f"{prefix}.W2", f"{prefix}.b2")


def _mlp_meta(params: ParameterSet, prefix: str) -> np.ndarray:
    """Offset table handed to the kernels: dims plus flat offsets."""
    meta = params._meta_cache.get(prefix)
    if meta is None:
        names = _mlp_names(prefix)
        in_dim, hidden = params.shape(names[0])
        out_dim = params.shape(names[2])[1]
        meta = np.array([in_dim, hidden, out_dim,
                         *(params.offset(n) for n in names)], dtype=np.intp)
        params._meta_cache[prefix] = meta
    return meta


def mlp_forward(K, params: ParameterSet, prefix: str, x, dropmul=None, need_cache=False):
    """Apply the perceptron rowwise; returns (y, cache)."""
    meta = _mlp_meta(params, prefix)
    if x.shape[1] != meta[0]:
        raise ValueError(f"{prefix}: input width {x.shape[1]} != expected {int(meta[0])}")
    y, hdrop, mfac = K.mlp_forward(x, params.flat, meta, dropmul, need_cache)
    return y, (x, hdrop, mfac)


def mlp_backward(K, params: ParameterSet, grads: ParameterSet, prefix: str,
                 dy, cache, need_dx=True):
    x, hdrop, mfac = cache
    return K.mlp_backward(dy, x, hdrop, mfac, params.flat, grads.flat,
                          _mlp_meta(params, prefix), need_dx)


# ---------------------------------------------------------------------------
# gated recurrent cell

_GRU_FIELDS = ("Wr", "Ur", "br", "Wz", "Uz", "bz", "Wn", "Un", "bni", "bnh")


def gru_param_shapes(prefix: str, dim: int) -> list[tuple[str, tuple[int, ...]]]:
    shapes = []
    for name in _GRU_FIELDS:
        shape = (dim, dim) if name[0] in "WU" else (dim,)
        shapes.append((f"{prefix}.{name}", shape))
    return shapes


@lru_cache(maxsize=None)
def _gru_names(prefix: str) -> tuple[str, ...]:
    return tuple(f"{prefix}.{f}" for f in _GRU_FIELDS)


def _gru_meta(params: ParameterSet, prefix: str) -> np.ndarray:
    meta = params._meta_cache.get(prefix)
    if meta is None:
        names = _gru_names(prefix)
        d = params.shape(names[0])[0]
        meta = np.array([d, *(params.offset(n) for n in names)], dtype=np.intp)
        params._meta_cache[prefix] = meta
    return meta


def gru_forward(K, params: ParameterSet, prefix: str, xm, h, need_cache=False):
    """One GRU step. xm is the cell input, h the carried state; both (n, d).

    r = sig(Wr xm + Ur h + br), z = sig(Wz xm + Uz h + bz),
    c = tanh(Wn xm + r * (Un h + bnh) + bni), h' = (1-z) * c + z * h.
    """
    if xm.shape != h.shape:
        raise ValueError(f"{prefix}: input {xm.shape} and state {h.shape} differ")
    hnew, r, zg, c, a = K.gru_forward(xm, h, params.flat, _gru_meta(params, prefix), need_cache)
    return hnew, (xm, h, r, zg, c, a)


def gru_backward(K, params: ParameterSet, grads: ParameterSet, prefix: str, dh_new, cache):
    xm, h, r, zg, c, a = cache
    return K.gru_backward(dh_new, xm, h, r, zg, c, a, params.flat, grads.flat,
                          _gru_meta(params, prefix))


# ---------------------------------------------------------------------------
# losses


def weighted_cross_entropy(logits, labels, weights):
    """Per-node weighted negative log likelihood, averaged over nodes.

    loss = (1/n) * sum_v weights[y_v] * (-log softmax(logits_v)[y_v]);
    returns (loss, grad wrt logits).
    """
    weights = np.asarray(weights, dtype=np.float64)
    if (weights <= 0).any():
        raise ValueError("class weights must be strictly positive")
    labels = np.asarray(labels)
    n, num_classes = logits.shape
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError("label out of range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    expv = np.exp(shifted)
    probs = expv / expv.sum(axis=1, keepdims=True)
    idx = np.arange(n)
    logp = shifted[idx, labels] - np.log(expv.sum(axis=1))
    wv = weights[labels]
    loss = float(np.mean(-wv * logp))
    grad = probs
    grad[idx, labels] -= 1.0
    grad *= (wv / n)[:, None]
    return loss, grad


def l2_state_loss(final_embeddings, coefficient: float):
    """Mean squared embedding norm, scaled: coeff * (1/n) * sum_v ||h_v||^2."""
    if coefficient < 0:
        raise ValueError("coefficient must be >= 0")
    n = final_embeddings.shape[0]
    loss = coefficient * float(np.sum(final_embeddings * final_embeddings)) / n
    grad = (2.0 * coefficient / n) * final_embeddings
    return loss, grad


# ---------------------------------------------------------------------------
# optimization


@dataclass
class OptimizerState:
    """Adam moments plus reduce-on-plateau scheduler state."""

    m: np.ndarray
    v: np.ndarray
    step: int
    lr: float
    best_loss: float = math.inf
    stale_epochs: int = 0

    @classmethod
    def init(cls, params: ParameterSet, lr: float) -> "OptimizerState":
        return cls(np.zeros_like(params.flat), np.zeros_like(params.flat), 0, lr)


def adam_step(params: ParameterSet, grads: ParameterSet, state: OptimizerState,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              weight_decay: float = 0.0) -> None:
    """Bias-corrected Adam update over the flat parameter vector, in place."""
    g = grads.flat
    if weight_decay > 0.0:
        g = g + weight_decay * params.flat
    state.step += 1
    state.m *= beta1
    state.m += (1.0 - beta1) * g
    state.v *= beta2
    state.v += (1.0 - beta2) * np.square(g)
    mhat = state.m / (1.0 - beta1 ** state.step)
    vhat = state.v / (1.0 - beta2 ** state.step)
    params.flat -= state.lr * mhat / (np.sqrt(vhat) + eps)


def plateau_scheduler_step(state: OptimizerState, validation_loss: float,
                           factor: float = 0.7, patience: int = 20,
                           min_lr: float = 1e-5) -> None:
    """Decay lr by `factor` after `patience` epochs without strict improvement."""
    if not math.isfinite(validation_loss):
        raise ValueError("validation loss must be finite")
    if validation_loss < state.best_loss:
        state.best_loss = validation_loss
        state.stale_epochs = 0
        return
    state.stale_epochs += 1
    if state.stale_epochs >= patience:
        state.lr = max(state.lr * factor, min_lr)
        state.stale_epochs = 0


def clip_gradients(grads: ParameterSet, max_norm: float, max_value: float) -> ParameterSet:
    """Clip entries to [-max_value, max_value], then rescale to global norm <= max_norm."""
    if max_norm <= 0 or max_value <= 0:
        raise ValueError("clip thresholds must be positive")
    np.clip(grads.flat, -max_value, max_value, out=grads.flat)
    norm = float(np.linalg.norm(grads.flat))
    if norm > max_norm:
        grads.flat *= max_norm / norm
    return grads
