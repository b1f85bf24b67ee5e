"""Movement trend correlation: sign-correlation graph convolution followed by
cross-stock self-attention within each day."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from stockode.numerics import Parameter, Tensor, as_tensor, layer_norm, relu, softmax, swapaxes
from stockode.numerics import init


def sign_correlation(returns: np.ndarray) -> np.ndarray:
    """Per-day outer product of return signs, shape (w, N, N). sign(0) = 0."""
    s = np.sign(np.asarray(returns, dtype=np.float64))
    return s[:, :, None] * s[:, None, :]


@dataclass
class AttentionLayer:
    W_q: Parameter
    W_k: Parameter
    W_v: Parameter
    ln_gamma: Parameter
    ln_beta: Parameter

    def parameters(self) -> list:
        return [self.W_q, self.W_k, self.W_v, self.ln_gamma, self.ln_beta]


@dataclass
class TrendWeights:
    W_upsilon: Parameter  # (d_e, d)
    W_x: Parameter  # (d_e, d)
    layers: list

    @classmethod
    def create(cls, d_e: int, d: int, n_layers: int, rng, prefix: str = "trend") -> "TrendWeights":
        layers = [
            AttentionLayer(init.dense(f"{prefix}.att{i}.W_q", d, d, rng),
                           init.dense(f"{prefix}.att{i}.W_k", d, d, rng),
                           init.dense(f"{prefix}.att{i}.W_v", d, d, rng),
                           init.ones(f"{prefix}.att{i}.ln_gamma", d),
                           init.zeros(f"{prefix}.att{i}.ln_beta", d))
            for i in range(n_layers)
        ]
        return cls(init.dense(f"{prefix}.W_upsilon", d_e, d, rng),
                   init.dense(f"{prefix}.W_x", d_e, d, rng), layers)

    def parameters(self) -> list:
        out = [self.W_upsilon, self.W_x]
        for layer in self.layers:
            out.extend(layer.parameters())
        return out


@dataclass
class TrendOutput:
    P: Tensor  # (N, w, d)
    omega: np.ndarray  # (w, N, N) attention scores of the last layer
    H: Tensor  # (w, N, d) explicit aggregation


def explicit_aggregate(X, upsilon, weights: TrendWeights) -> Tensor:
    """H = Upsilon X W_upsilon + X W_x, evaluated per day slice."""
    X = as_tensor(X)
    return (as_tensor(upsilon) @ X) @ weights.W_upsilon + X @ weights.W_x


def attention_layer(H: Tensor, layer: AttentionLayer, mix: bool = True):
    d = H.shape[-1]
    V = H @ layer.W_v
    if mix:
        scores = softmax((H @ layer.W_q) @ swapaxes(H @ layer.W_k, -1, -2), axis=-1)
        mixed = scores @ V
        omega = scores.data
    else:
        mixed = V
        n = H.shape[-2]
        omega = np.broadcast_to(np.eye(n), H.shape[:-2] + (n, n)).copy()
    return relu(layer_norm(mixed * (1.0 / np.sqrt(d)), layer.ln_gamma, layer.ln_beta)), omega


def implicit_aggregate(H: Tensor, weights: TrendWeights, mix: bool = True) -> TrendOutput:
    out, omega = H, None
    for layer in weights.layers:
        out, omega = attention_layer(out, layer, mix)
    return TrendOutput(swapaxes(out, 0, 1), omega, H)


def trend_forward(X, returns: np.ndarray, weights: TrendWeights, interactions: bool = True) -> TrendOutput:
    """Full block. ``interactions=False`` zeroes the sign correlation and
    replaces attention with the identity (no cross-stock mixing)."""
    ups = sign_correlation(returns)
    if not interactions:
        ups = np.zeros_like(ups)
    return implicit_aggregate(explicit_aggregate(X, ups, weights), weights, mix=interactions)
