"""Decomposed parameter generation, cross/spatial graph convolution, fusion.

Per-node convolution weights are generated from the combined embeddings via
shared kernels, so the learnable parameter count per (gate, branch, layer) is
d_e*d_i*d_o + d_e*d_o, independent of the node count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .errors import ContractError, ShapeError
from .tensor import Tensor

ACTIVATIONS = ("identity", "relu")


@dataclass
class DecompKernels:
    """Shared kernels: weights d_e x d_i x d_o and bias d_e x d_o."""

    k_weights: Tensor
    k_bias: Tensor

    def __post_init__(self):
        if self.k_weights.ndim != 3 or self.k_bias.ndim != 2:
            raise ShapeError("kernels must be (d_e, d_i, d_o) and (d_e, d_o)")
        if (self.k_weights.shape[0] != self.k_bias.shape[0]
                or self.k_weights.shape[2] != self.k_bias.shape[1]):
            raise ShapeError(
                f"kernel shapes disagree: {self.k_weights.shape} vs {self.k_bias.shape}")

    @property
    def d_in(self) -> int:
        return self.k_weights.shape[1]

    @property
    def d_out(self) -> int:
        return self.k_weights.shape[2]

    def parameter_count(self) -> int:
        return self.k_weights.size + self.k_bias.size


def kernel_parameter_count(d_e: int, d_i: int, d_o: int) -> int:
    """Closed-form learnable count per (gate, branch, layer)."""
    return d_e * d_i * d_o + d_e * d_o


def generate_params(e_t: Tensor, kernels: DecompKernels) -> tuple[Tensor, Tensor]:
    """Per-node weights W[n] = sum_e E^t[n,e] K[e] and matching biases."""
    if e_t.ndim != 2 or e_t.shape[1] != kernels.k_weights.shape[0]:
        raise ShapeError(
            f"embedding {e_t.shape} incompatible with kernels {kernels.k_weights.shape}")
    w = tt.weights_from_embedding(e_t, kernels.k_weights)
    b = tt.matmul(e_t, kernels.k_bias)
    return w, b


def _activate(x: Tensor, activation: str) -> Tensor:
    if activation not in ACTIVATIONS:
        raise ContractError(f"activation must be one of {ACTIVATIONS}")
    return tt.relu(x) if activation == "relu" else x


_EYE_CACHE: dict[int, np.ndarray] = {}


def _eye(n: int) -> np.ndarray:
    if n not in _EYE_CACHE:
        _EYE_CACHE[n] = np.eye(n)
    return _EYE_CACHE[n]


def with_self_loop(a: Tensor) -> Tensor:
    """A + I on the trailing square axes."""
    if a.shape[-1] != a.shape[-2]:
        raise ShapeError(f"self loop needs a square matrix, got {a.shape}")
    return tt.add(a, tt.constant(_eye(a.shape[-1])))


def cross_propagate(a_c_hat: Tensor, h_in: Tensor) -> Tensor:
    """Message passing (A_C + I) @ H over the flattened tau*N node axis."""
    tau, n = h_in.shape[-3], h_in.shape[-2]
    if a_c_hat.shape[-1] != tau * n or a_c_hat.shape[-2] != tau * n:
        raise ShapeError(
            f"cross graph {a_c_hat.shape} does not match input {h_in.shape}")
    flat = tt.reshape(h_in, h_in.shape[:-3] + (tau * n, h_in.shape[-1]))
    return tt.reshape(tt.matmul(a_c_hat, flat), h_in.shape)


def node_affine(prop: Tensor, w: Tensor, b: Tensor,
                activation: str = "identity") -> Tensor:
    """Per-node weights and bias after propagation, then the activation."""
    return _activate(tt.node_linear(prop, w, b), activation)


def cross_conv_propagated(a_c_hat: Tensor, h_in: Tensor, w: Tensor, b: Tensor,
                          activation: str = "identity") -> Tensor:
    """Cross convolution given an adjacency with the self loop already added."""
    return node_affine(cross_propagate(a_c_hat, h_in), w, b, activation)


def cross_graph_conv(a_c: Tensor, h_in: Tensor, w: Tensor, b: Tensor,
                     activation: str = "identity") -> Tensor:
    """(A_C + I) propagation over tau*N stacked nodes, then per-node affine.

    ``h_in`` is (..., tau, N, d_i); node n's weight applies at each of its tau
    block positions. Returns (..., tau, N, d_o).
    """
    tau, n = h_in.shape[-3], h_in.shape[-2]
    if a_c.shape[-1] != tau * n or a_c.shape[-2] != tau * n:
        raise ShapeError(f"cross graph {a_c.shape} does not match input {h_in.shape}")
    return cross_conv_propagated(with_self_loop(a_c), h_in, w, b, activation)


def spatial_propagate(a_s_hat: Tensor, h_in: Tensor) -> Tensor:
    """Message passing (A_S + I) @ H on the node axis."""
    n = h_in.shape[-2]
    if a_s_hat.shape != (n, n):
        raise ShapeError(
            f"spatial graph {a_s_hat.shape} does not match input {h_in.shape}")
    return tt.matmul(a_s_hat, h_in)


def spatial_conv_propagated(a_s_hat: Tensor, h_in: Tensor, w: Tensor, b: Tensor,
                            activation: str = "identity") -> Tensor:
    """Spatial convolution given an adjacency with the self loop already added."""
    return node_affine(spatial_propagate(a_s_hat, h_in), w, b, activation)


def spatial_graph_conv(a_s: Tensor, h_in: Tensor, w: Tensor, b: Tensor,
                       activation: str = "identity") -> Tensor:
    """Cross convolution specialized to tau = 1 with the spatial graph."""
    n = h_in.shape[-2]
    if a_s.shape != (n, n):
        raise ShapeError(f"spatial graph {a_s.shape} does not match input {h_in.shape}")
    return spatial_conv_propagated(with_self_loop(a_s), h_in, w, b, activation)


def fuse_outputs(h_c_out: Tensor, h_s_out: Tensor, fusion_w: Tensor,
                 fusion_b: Tensor) -> Tensor:
    """Mean-pool the tau axis, concat with the spatial output, apply linear."""
    if h_c_out.shape[-2:] != h_s_out.shape[-2:] or h_c_out.shape[:-3] != h_s_out.shape[:-2]:
        raise ShapeError(
            f"fusion inputs disagree: {h_c_out.shape} vs {h_s_out.shape}")
    pooled = tt.mean(h_c_out, axes=(-3,))
    stacked = tt.concat([pooled, h_s_out], axis=-1)
    return tt.linear(stacked, fusion_w, fusion_b)
