"""Small MLP with manual reverse-mode gradients (no autodiff framework).

Hidden layers are tanh, the output layer is linear.  Inputs may be a single
vector or a (batch, dim) matrix; gradients are accumulated over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DimensionMismatch(ValueError):
    pass


@dataclass
class MlpParams:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]   # per layer, shape (out, in)
    biases: list[np.ndarray]    # per layer, shape (out,)

    @classmethod
    def init(cls, layer_sizes, rng: np.random.Generator,
             final_scale: float = 0.01) -> "MlpParams":
        """Xavier-style init; the output layer is scaled down so a fresh
        policy starts near the midpoint of its action ranges."""
        sizes = tuple(int(s) for s in layer_sizes)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ValueError("layer_sizes needs >= 2 positive entries")
        weights, biases = [], []
        for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
            scale = np.sqrt(2.0 / (n_in + n_out))
            if i == len(sizes) - 2:
                scale *= final_scale
            weights.append(rng.normal(0.0, scale, size=(n_out, n_in)))
            biases.append(np.zeros(n_out))
        return cls(sizes, weights, biases)

    def copy(self) -> "MlpParams":
        return MlpParams(self.layer_sizes,
                         [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])

    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


@dataclass
class MlpGrads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, params: MlpParams) -> "MlpGrads":
        return cls([np.zeros_like(w) for w in params.weights],
                   [np.zeros_like(b) for b in params.biases])

    def sq_norm(self) -> float:
        return (sum(float(np.sum(w * w)) for w in self.weights)
                + sum(float(np.sum(b * b)) for b in self.biases))

    def scale(self, factor: float) -> None:
        for w in self.weights:
            w *= factor
        for b in self.biases:
            b *= factor


def apply_grads(params: MlpParams, grads: MlpGrads, step: float) -> None:
    """In-place params += step * grads (step < 0 descends)."""
    for w, g in zip(params.weights, grads.weights):
        w += step * g
    for b, g in zip(params.biases, grads.biases):
        b += step * g


def _check_input(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.layer_sizes[0]:
        raise DimensionMismatch(
            f"input dim {x.shape[-1]} != first layer {params.layer_sizes[0]}")
    return x


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = _check_input(params, x)
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i != last:
            h = np.tanh(h)
    return h


def _forward_cache(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    x = _check_input(params, x)
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i != last:
            h = np.tanh(h)
        acts.append(h)
    return h, acts


def mlp_gradient(params: MlpParams, x: np.ndarray,
                 upstream: np.ndarray) -> tuple[MlpGrads, np.ndarray]:
    """Exact reverse-mode derivatives of sum(upstream * forward(x)).

    Accepts a single sample or a batch; batch gradients are summed.
    Returns (parameter gradients, gradient w.r.t. the input).
    """
    single = np.asarray(x, dtype=float).ndim == 1
    _, acts = _forward_cache(params, np.atleast_2d(x))
    up = np.atleast_2d(np.asarray(upstream, dtype=float))
    if up.shape[-1] != params.layer_sizes[-1]:
        raise DimensionMismatch(
            f"upstream dim {up.shape[-1]} != output layer {params.layer_sizes[-1]}")
    if up.shape[0] != acts[-1].shape[0]:
        raise DimensionMismatch("batch size mismatch between input and upstream")

    grads = MlpGrads.zeros_like(params)
    delta = up
    for i in reversed(range(len(params.weights))):
        a_prev = acts[i]
        grads.weights[i][...] = delta.T @ a_prev
        grads.biases[i][...] = delta.sum(axis=0)
        delta = delta @ params.weights[i]
        if i > 0:
            delta = delta * (1.0 - acts[i] ** 2)  # tanh' of the cached output
    dinput = delta[0] if single else delta
    return grads, dinput
