"""Minimal feed-forward network with exact reverse-mode gradients and Adam.

The network maps a feature vector to a single scalar. Weight matrices are
stored as ``(out, in)`` arrays, so a layer computes ``z = W @ a + b``. The
last layer always carries a bias, which is the constant term a quantile
model shifts to hit the requested level.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = 1

ACTIVATIONS = ("relu", "tanh")


class DimensionError(ValueError):
    """Raised when a feature vector does not match the network input."""


class NonFiniteGradientError(ValueError):
    """Raised when an optimizer step receives NaN or infinite gradients."""


@dataclass(frozen=True)
class NetworkShape:
    input_dim: int
    hidden_layers: tuple[int, ...] = ()
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if int(self.input_dim) < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if any(h < 1 for h in self.hidden_layers):
            raise ValueError(f"hidden widths must be >= 1, got {self.hidden_layers}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden_layers, 1]

    def with_input_dim(self, input_dim: int) -> NetworkShape:
        return NetworkShape(input_dim, self.hidden_layers, self.activation)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_layers": list(self.hidden_layers),
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> NetworkShape:
        return cls(int(d["input_dim"]), tuple(d.get("hidden_layers", ())), d.get("activation", "relu"))


@dataclass
class NetworkParams:
    """Weights and biases of a network; also used as the gradient layout."""

    shape: NetworkShape
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        sizes = self.shape.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("number of layers does not match shape")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i + 1], sizes[i]) or b.shape != (sizes[i + 1],):
                raise ValueError(
                    f"layer {i}: expected W{(sizes[i + 1], sizes[i])}, b{(sizes[i + 1],)}, "
                    f"got W{w.shape}, b{b.shape}"
                )

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> NetworkParams:
        return NetworkParams(
            self.shape, [w.copy() for w in self.weights], [b.copy() for b in self.biases]
        )

    def zeros_like(self) -> NetworkParams:
        return NetworkParams(
            self.shape, [np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases]
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "shape": self.shape.to_dict(),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> NetworkParams:
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported network format version {d.get('format_version')!r}")
        shape = NetworkShape.from_dict(d["shape"])
        sizes = shape.layer_sizes
        weights = [
            np.asarray(w, dtype=float).reshape(sizes[i + 1], sizes[i]) for i, w in enumerate(d["weights"])
        ]
        biases = [np.asarray(b, dtype=float).reshape(-1) for b in d["biases"]]
        return cls(shape, weights, biases)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> NetworkParams:
        return cls.from_dict(json.loads(text))


Gradient = NetworkParams


@dataclass
class AdamState:
    first_moment: NetworkParams
    second_moment: NetworkParams
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: NetworkParams, **kwargs) -> AdamState:
        return cls(params.zeros_like(), params.zeros_like(), **kwargs)


def init_params(shape: NetworkShape, seed: int) -> NetworkParams:
    """Uniform fan-in scaled weights in ``[-sqrt(6/fan_in), sqrt(6/fan_in)]``, zero biases."""
    rng = np.random.default_rng(seed)
    sizes = shape.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(shape, weights, biases)


def _activate(z, activation):
    if activation == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_grad(z, a, activation):
    if activation == "relu":
        # subgradient at 0 is 0
        return (z > 0.0).astype(float)
    return 1.0 - a * a


def _check_batch(params, X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != params.shape.input_dim:
        raise DimensionError(
            f"expected {params.shape.input_dim} features, got array of shape {np.shape(X)}"
        )
    return X


def forward_batch(params: NetworkParams, X, return_cache: bool = False):
    """Evaluate the network on rows of ``X``; returns shape ``(n,)``.

    With ``return_cache`` the per-layer pre-activations and activations are
    returned as well, for use by :func:`backward_batch`.
    """
    X = _check_batch(params, X)
    act = params.shape.activation
    a = X
    zs, acts = [], [X]
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        if i < last:
            a = _activate(z, act)
        else:
            a = z
        zs.append(z)
        acts.append(a)
    out = a[:, 0]
    if return_cache:
        return out, (zs, acts)
    return out


def backward_batch(params: NetworkParams, cache, upstream) -> Gradient:
    """Sum over the batch of ``upstream[i] * d g(x_i) / d theta``."""
    zs, acts = cache
    act = params.shape.activation
    delta = np.asarray(upstream, dtype=float).reshape(-1, 1)
    n_layers = len(params.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        gw[i] = delta.T @ acts[i]
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i]) * _activation_grad(zs[i - 1], acts[i], act)
    return NetworkParams(params.shape, gw, gb)


def forward(params: NetworkParams, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionError(f"expected a 1-d feature vector, got shape {x.shape}")
    return float(forward_batch(params, x)[0])


def backward(params: NetworkParams, x, upstream: float) -> Gradient:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionError(f"expected a 1-d feature vector, got shape {x.shape}")
    _, cache = forward_batch(params, x, return_cache=True)
    return backward_batch(params, cache, [upstream])


def adam_step(
    params: NetworkParams, state: AdamState, grad: Gradient, lr: float
) -> tuple[NetworkParams, AdamState]:
    """One bias-corrected Adam update. Inputs are left untouched."""
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if not grad.is_finite():
        raise NonFiniteGradientError(f"non-finite gradient at step {state.step_count + 1}")
    new_p = params.copy()
    new_state = AdamState(
        state.first_moment.copy(), state.second_moment.copy(),
        state.step_count, state.beta1, state.beta2, state.epsilon,
    )
    adam_update_(new_p, new_state, grad, lr)
    return new_p, new_state


def adam_update_(params: NetworkParams, state: AdamState, grad: Gradient, lr: float) -> None:
    """In-place variant of :func:`adam_step` for training loops (no finiteness check)."""
    state.step_count += 1
    t = state.step_count
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for p, m, v, g in zip(
        params.arrays(), state.first_moment.arrays(), state.second_moment.arrays(), grad.arrays()
    ):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (lr / bc1) * m / (np.sqrt(v / bc2) + eps)
