"""Differentiable predictors with hand-written backprop.

Parameters live in one flat float64 vector. Packing is layer-major, weights
before biases, with each weight matrix of shape ``(fan_in, fan_out)`` stored
row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, EmptyBatch
from .task_model import as_arrays

LINEAR = "linear"
MLP = "mlp"


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    layer_sizes: tuple
    activation: str = "relu"
    dropout_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if self.kind not in (LINEAR, MLP):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError(f"bad layer sizes {self.layer_sizes}")
        if self.kind == LINEAR and len(self.layer_sizes) != 2:
            raise ValueError("a linear model has exactly two layer sizes")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @classmethod
    def linear(cls, m: int) -> "ModelSpec":
        return cls(LINEAR, (m, 1))

    @classmethod
    def mlp(cls, m: int, hidden: int = 32, dropout_rate: float = 0.0, out: int = 1) -> "ModelSpec":
        return cls(MLP, (m, hidden, out), dropout_rate=dropout_rate)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    @property
    def hidden_sizes(self) -> tuple:
        return self.layer_sizes[1:-1]


@dataclass(frozen=True)
class FilmCoefficients:
    scale: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        scale = np.asarray(self.scale, dtype=float)
        shift = np.asarray(self.shift, dtype=float)
        if scale.shape != shift.shape or scale.ndim != 1:
            raise DimensionMismatch(f"scale {scale.shape} vs shift {shift.shape}")
        if not (np.all(np.isfinite(scale)) and np.all(np.isfinite(shift))):
            raise ValueError("non-finite FiLM coefficients")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "shift", shift)

    @classmethod
    def identity(cls, m: int) -> "FilmCoefficients":
        return cls(np.ones(m), np.zeros(m))


def unpack(spec: ModelSpec, params: np.ndarray) -> list:
    """Views ``[(W, b), ...]`` into the flat parameter vector."""
    params = np.asarray(params)
    if params.shape != (spec.n_params,):
        raise DimensionMismatch(f"expected {spec.n_params} parameters, got {params.shape}")
    layers = []
    i = 0
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        W = params[i:i + fan_in * fan_out].reshape(fan_in, fan_out)
        i += fan_in * fan_out
        b = params[i:i + fan_out]
        i += fan_out
        layers.append((W, b))
    return layers


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    params = np.zeros(spec.n_params)
    for W, _ in unpack(spec, params):
        bound = 1.0 / np.sqrt(W.shape[0])
        W[...] = rng.uniform(-bound, bound, size=W.shape)
    return params


def film_modulate(x: np.ndarray, coeffs: FilmCoefficients) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != coeffs.scale.size:
        raise DimensionMismatch(f"x has {x.shape[-1]} features, FiLM has {coeffs.scale.size}")
    return coeffs.scale * x + coeffs.shift


def _predict(layers, X, masks=None):
    """Forward pass; returns outputs and the per-layer inputs/pre-activations."""
    inputs, pres = [], []
    h = X
    last = len(layers) - 1
    for l, (W, b) in enumerate(layers):
        inputs.append(h)
        z = h @ W + b
        pres.append(z)
        if l < last:
            h = np.maximum(z, 0.0)
            if masks is not None:
                h = h * masks[l]
        else:
            h = z
    return h, inputs, pres


def _backprop(layers, inputs, pres, d_out, masks=None):
    """Gradients of a scalar w.r.t. every layer and the network input."""
    grads = [None] * len(layers)
    delta = d_out
    for l in range(len(layers) - 1, -1, -1):
        W, _ = layers[l]
        grads[l] = (inputs[l].T @ delta, delta.sum(axis=0))
        delta = delta @ W.T
        if l > 0:
            if masks is not None:
                delta = delta * masks[l - 1]
            delta = delta * (pres[l - 1] > 0)
    return grads, delta


def _flatten(grads) -> np.ndarray:
    return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])


def forward(spec: ModelSpec, params: np.ndarray, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.input_dim,):
        raise DimensionMismatch(f"expected {spec.input_dim} features, got {x.shape}")
    out, _, _ = _predict(unpack(spec, params), x[None, :])
    return float(out[0, 0])


def predict(spec: ModelSpec, params: np.ndarray, X: np.ndarray,
            coeffs: Optional[FilmCoefficients] = None) -> np.ndarray:
    """Batched inference forward pass (no dropout)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise DimensionMismatch(f"expected (n, {spec.input_dim}) inputs, got {X.shape}")
    if coeffs is not None:
        X = film_modulate(X, coeffs)
    out, _, _ = _predict(unpack(spec, params), X)
    return out[:, 0]


def predict_raw(spec: ModelSpec, params: np.ndarray, X: np.ndarray) -> np.ndarray:
    """All network outputs, shape (n, output_dim)."""
    out, _, _ = _predict(unpack(spec, params), np.asarray(X, dtype=float))
    return out


def vector_jacobian(spec: ModelSpec, params: np.ndarray, X: np.ndarray,
                    d_out: np.ndarray) -> np.ndarray:
    """Parameter gradient of ``sum(d_out * f(X))``."""
    layers = unpack(spec, params)
    _, inputs, pres = _predict(layers, np.asarray(X, dtype=float))
    grads, _ = _backprop(layers, inputs, pres, d_out)
    return _flatten(grads)


def dropout_masks(spec: ModelSpec, n_rows: int, rng: np.random.Generator) -> Optional[list]:
    """Inverted-dropout masks for every hidden layer, or None when disabled."""
    p = spec.dropout_rate
    if p == 0.0 or not spec.hidden_sizes:
        return None
    keep = 1.0 - p
    return [(rng.random((n_rows, h)) < keep) / keep for h in spec.hidden_sizes]


def _batch(batch) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(batch, tuple):
        X, y = batch
        X, y = np.asarray(X, dtype=float), np.asarray(y, dtype=float)
    else:
        X, y = as_arrays(batch)
    if len(y) == 0:
        raise EmptyBatch("empty batch")
    return X, y


def value_and_grad(spec, params, X, y, coeffs=None, masks=None):
    """Loss, parameter gradient and FiLM (scale, shift) gradients.

    The FiLM gradients are None when ``coeffs`` is None.
    """
    if len(y) == 0:
        raise EmptyBatch("empty batch")
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise DimensionMismatch(f"expected (n, {spec.input_dim}) inputs, got {X.shape}")
    Xm = film_modulate(X, coeffs) if coeffs is not None else X
    layers = unpack(spec, params)
    out, inputs, pres = _predict(layers, Xm, masks)
    resid = out[:, 0] - y
    n = len(y)
    loss = 0.5 * float(np.mean(resid ** 2))
    grads, d_in = _backprop(layers, inputs, pres, (resid / n)[:, None], masks)
    grad = _flatten(grads)
    if coeffs is None:
        return loss, grad, None, None
    return loss, grad, (d_in * X).sum(axis=0), d_in.sum(axis=0)


def loss_mse(spec: ModelSpec, params: np.ndarray, batch,
             coeffs: Optional[FilmCoefficients] = None) -> float:
    """Mean of ``0.5 * (y - f(x))**2`` over the batch."""
    X, y = _batch(batch)
    if X.shape[1] != spec.input_dim:
        raise DimensionMismatch(f"expected {spec.input_dim} features, got {X.shape[1]}")
    if coeffs is not None:
        X = film_modulate(X, coeffs)
    out, _, _ = _predict(unpack(spec, params), X)
    return 0.5 * float(np.mean((y - out[:, 0]) ** 2))


def grad_loss(spec: ModelSpec, params: np.ndarray, batch,
              coeffs: Optional[FilmCoefficients] = None) -> np.ndarray:
    X, y = _batch(batch)
    return value_and_grad(spec, params, X, y, coeffs)[1]


def finite_diff_grad(spec: ModelSpec, params: np.ndarray, batch,
                     coeffs: Optional[FilmCoefficients] = None, loss=None) -> np.ndarray:
    """Central differences with step ``1e-5 * max(1, |theta_d|)`` per coordinate.

    ``loss`` overrides the objective (a callable of the parameter vector).
    """
    if loss is None:
        X, y = _batch(batch)
        loss = lambda p: loss_mse(spec, p, (X, y), coeffs)  # noqa: E731
    params = np.asarray(params, dtype=float)
    g = np.zeros_like(params)
    for d in range(params.size):
        step = 1e-5 * max(1.0, abs(params[d]))
        up = params.copy()
        dn = params.copy()
        up[d] += step
        dn[d] -= step
        g[d] = (loss(up) - loss(dn)) / (2 * step)
    return g


# -- serialization -----------------------------------------------------------

def params_to_bytes(spec: ModelSpec, params: np.ndarray) -> bytes:
    """Layer-size header followed by little-endian float64 values."""
    params = np.asarray(params, dtype="<f8")
    if params.shape != (spec.n_params,):
        raise DimensionMismatch(f"expected {spec.n_params} parameters, got {params.shape}")
    sizes = spec.layer_sizes
    header = struct.pack(f"<I{len(sizes)}I", len(sizes), *sizes)
    return header + params.tobytes()


def params_from_bytes(blob: bytes) -> tuple[tuple, np.ndarray]:
    (count,) = struct.unpack_from("<I", blob, 0)
    sizes = struct.unpack_from(f"<{count}I", blob, 4)
    values = np.frombuffer(blob, dtype="<f8", offset=4 + 4 * count).astype(float)
    expected = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    if values.size != expected:
        raise DimensionMismatch(f"blob holds {values.size} values, layer sizes need {expected}")
    return tuple(sizes), values


