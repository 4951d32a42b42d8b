"""Dynamic cross graph construction.

Per time step t: a spatial graph from combined node+time embeddings, tau
diagonal temporal-connection graphs scaled by the selector weights, and a
directed block-upper-triangular fusion of the two. Spatial graphs are shared
across a batch; temporal graphs carry a leading batch axis because they
depend on per-sample selection weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .errors import ContractError, ShapeError
from .tensor import Tensor

Array = np.ndarray


@dataclass
class EmbeddingSet:
    """Learnable node (N x d_e) and time (T x d_e) embeddings."""

    e_n: Tensor
    e_t: Tensor

    def __post_init__(self):
        if self.e_n.ndim != 2 or self.e_t.ndim != 2:
            raise ShapeError("embeddings must be 2-D")
        if self.e_n.shape[1] != self.e_t.shape[1]:
            raise ShapeError(
                f"embedding dims differ: {self.e_n.shape} vs {self.e_t.shape}")

    @property
    def n_nodes(self) -> int:
        return self.e_n.shape[0]

    @property
    def n_steps(self) -> int:
        return self.e_t.shape[0]

    @property
    def dim(self) -> int:
        return self.e_n.shape[1]


@dataclass
class CrossGraph:
    """Fused adjacency for one time step plus its constituents."""

    a_s: Tensor        # N x N spatial graph
    a_t: Tensor        # (..., tau, N, N) diagonal temporal graphs
    a_c: Tensor        # (..., tau*N, tau*N) fused cross graph
    t: int
    sel_indices: Array


def init_embeddings(n_nodes: int, n_steps: int, dim: int,
                    rng: np.random.Generator) -> EmbeddingSet:
    """Seeded i.i.d. uniform [-0.5, 0.5] scaled by 1/sqrt(dim)."""
    scale = 1.0 / np.sqrt(dim)
    e_n = rng.uniform(-0.5, 0.5, size=(n_nodes, dim)) * scale
    e_t = rng.uniform(-0.5, 0.5, size=(n_steps, dim)) * scale
    return EmbeddingSet(e_n=tt.parameter(e_n, name="embeddings.e_n"),
                        e_t=tt.parameter(e_t, name="embeddings.e_t"))


def embed_time_step(emb: EmbeddingSet, t: int) -> Tensor:
    """E^t = E_N + E_T[t], broadcast over the node axis."""
    if not 0 <= t < emb.n_steps:
        raise ContractError(f"time step {t} out of range [0, {emb.n_steps})")
    return tt.add(emb.e_n, tt.index_axis(emb.e_t, 0, t))


def spatial_graph(e_t: Tensor) -> Tensor:
    """Row-wise softmax of the embedding Gram matrix."""
    gram = tt.matmul(e_t, tt.transpose(e_t, (1, 0)))
    return tt.softmax_rows(gram)


def temporal_connection_graphs(a_s: Tensor, w_sel_t: Tensor,
                               sel_indices: Array) -> Tensor:
    """Diagonal graphs diag(D_S * w_i), one per selected time step.

    ``w_sel_t`` holds tau weights aligned with the ascending ``sel_indices``;
    a leading batch axis is allowed. Returns (..., tau, N, N).
    """
    sel_indices = np.asarray(sel_indices)
    tau = sel_indices.shape[-1]
    if w_sel_t.shape[-1] != tau:
        raise ContractError(
            f"{w_sel_t.shape[-1]} weights for {tau} selected indices")
    d_s = tt.diag_part(a_s)                                   # (N,)
    n = d_s.shape[0]
    w = tt.reshape(w_sel_t, w_sel_t.shape + (1,))             # (..., tau, 1)
    values = tt.mul(w, tt.reshape(d_s, (1, n)))               # (..., tau, N)
    return tt.diag_embed(values)


def fuse_cross_graph(a_s: Tensor, a_t: Tensor, sel_indices: Array) -> Tensor:
    """Directed block fusion: diagonal blocks A_S + A_T,t_k, upper blocks A_T,t_l.

    Everything strictly below the block diagonal is exactly zero.
    """
    sel_indices = np.asarray(sel_indices)
    tau = sel_indices.shape[-1]
    if not np.all(np.diff(sel_indices.reshape(-1, tau), axis=-1) > 0):
        raise ContractError("selected indices must be strictly ascending")
    n = a_s.shape[0]
    if a_t.shape[-3:] != (tau, n, n):
        raise ShapeError(f"temporal graphs shaped {a_t.shape}, expected (..., {tau}, {n}, {n})")
    lead = a_t.shape[:-3]
    out = np.zeros(lead + (tau * n, tau * n))
    a_s_d = a_s.data
    a_t_d = a_t.data
    for k in range(tau):
        out[..., k * n:(k + 1) * n, k * n:(k + 1) * n] = a_s_d
        for l in range(k, tau):
            out[..., k * n:(k + 1) * n, l * n:(l + 1) * n] += a_t_d[..., l, :, :]

    def bw(g):
        g_as = np.zeros((n, n))
        g_at = np.zeros(lead + (tau, n, n))
        for k in range(tau):
            diag_block = g[..., k * n:(k + 1) * n, k * n:(k + 1) * n]
            g_as += diag_block.reshape((-1, n, n)).sum(axis=0)
            for l in range(k, tau):
                g_at[..., l, :, :] += g[..., k * n:(k + 1) * n, l * n:(l + 1) * n]
        return g_as, g_at

    return tt._emit("fuse_cross_graph", (a_s, a_t), out, bw)


def build_cross_graph(emb: EmbeddingSet, t: int, w_sel_t: Tensor,
                      sel_indices: Array, a_s: Tensor | None = None) -> CrossGraph:
    """Construct the full CrossGraph for step t (A_S may be precomputed)."""
    if a_s is None:
        a_s = spatial_graph(embed_time_step(emb, t))
    a_t = temporal_connection_graphs(a_s, w_sel_t, sel_indices)
    a_c = fuse_cross_graph(a_s, a_t, sel_indices)
    return CrossGraph(a_s=a_s, a_t=a_t, a_c=a_c, t=t,
                      sel_indices=np.asarray(sel_indices))


def static_spatial_graph(emb: EmbeddingSet) -> Tensor:
    """Ablation variant: softmax(E_N E_N^T), shared by all time steps."""
    return spatial_graph(emb.e_n)


def identity_temporal_graphs(lead: tuple[int, ...], tau: int, n: int) -> Tensor:
    """Ablation variant: identity matrices in place of learned A_T."""
    eye = np.broadcast_to(np.eye(n), lead + (tau, n, n)).copy()
    return tt.constant(eye)
