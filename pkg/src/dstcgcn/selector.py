"""FFT-based attentive time-step selection.

Pipeline: temporal normalization -> feature enrichment -> frequency-domain
attention scoring -> top-tau selection -> gathering of selected raw features.

Array layout follows the per-sample convention N x T x C; every function also
accepts an extra leading batch axis (B x N x T x C) and then returns batched
outputs. Scores and weights are differentiable tensors so gradients reach the
query/key projections; selected indices are discrete and treated as constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spectral as sp
from . import tensor as tt
from .errors import ContractError, ShapeError
from .tensor import Tensor

Array = np.ndarray

WEIGHT_MODES = ("softmax", "raw")
SELECT_MODES = ("fft", "random", "latest")

TN_EPS = 1e-8


@dataclass
class SelectorParams:
    """Query/key projections (input_dim -> d_h) plus mode and tau settings."""

    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    b_k: Tensor
    d_F: int
    tau: int

    def __post_init__(self):
        d_h = self.w_q.shape[1]
        if not 1 <= self.d_F <= sp.max_modes(d_h):
            raise ContractError(
                f"d_F={self.d_F} out of range [1, {sp.max_modes(d_h)}] for d_h={d_h}")
        if self.tau < 1:
            raise ContractError(f"tau must be >= 1, got {self.tau}")

    @property
    def d_h(self) -> int:
        return self.w_q.shape[1]

    @property
    def input_dim(self) -> int:
        return self.w_q.shape[0]


@dataclass
class SelectorOutput:
    """Selected indices, their weights, raw scores, and gathered features."""

    i_sel: Array          # (..., T, tau) int, each row strictly increasing
    w_sel: Tensor         # (..., T, tau)
    m_agg: Tensor | None  # (..., T, T); None for random/latest selection
    x_sel: Array          # (..., N, T, tau, C)


def temporal_normalize(x: Array) -> Array:
    """Standardize each node/channel series over the window's time axis.

    Uses the population std, epsilon-clamped, on the T axis of (..., N, T, C).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-2] < 2:
        raise ContractError(f"temporal normalization needs T >= 2, got {x.shape[-2]}")
    mean = x.mean(axis=-2, keepdims=True)
    std = np.maximum(x.std(axis=-2, keepdims=True), TN_EPS)
    return (x - mean) / std


def enrich(x: Array, x_norm: Array) -> Array:
    """Concat(original, normalized) along the channel axis."""
    x = np.asarray(x, dtype=np.float64)
    x_norm = np.asarray(x_norm, dtype=np.float64)
    if x.shape != x_norm.shape:
        raise ShapeError(f"enrich shapes differ: {x.shape} vs {x_norm.shape}")
    return np.concatenate([x, x_norm], axis=-1)


def attention_scores(x_enriched: Array, params: SelectorParams) -> Tensor:
    """Pairwise time-step relevance scores M_agg of shape (..., T, T).

    For each pair (i, j) the projected queries/keys are transformed with the
    truncated real FFT, multiplied elementwise against the conjugate, inverted,
    and mean-aggregated over the node and feature axes.
    """
    x = tt.constant(x_enriched)
    if x.shape[-1] != params.input_dim:
        raise ShapeError(
            f"selector input dim {x.shape[-1]} != projection dim {params.input_dim}")
    q = tt.linear(x, params.w_q, params.b_q)   # (..., N, T, d_h)
    k = tt.linear(x, params.w_k, params.b_k)
    q_re, q_im = sp.rfft_t(q, params.d_F)      # (..., N, T, d_F)
    k_re, k_im = sp.rfft_t(k, params.d_F)
    t_len = q.shape[-2]
    d_h = q.shape[-1]
    rows = []
    for i in range(t_len):
        qi_re = tt.index_axis(q_re, -2, i)
        qi_im = tt.index_axis(q_im, -2, i)
        shape1 = qi_re.shape[:-1] + (1, params.d_F)
        qi_re = tt.reshape(qi_re, shape1)
        qi_im = tt.reshape(qi_im, shape1)
        h_re, h_im = sp.hadamard_conj_t(qi_re, qi_im, k_re, k_im)
        m_ij = sp.irfft_t(h_re, h_im, d_h)     # (..., N, T, d_h)
        row = tt.mean(m_ij, axes=(-3, -1))     # (..., T)
        rows.append(tt.reshape(row, row.shape[:-1] + (1, t_len)))
    return tt.concat(rows, axis=-2)


def select_top_tau(m_agg, tau: int, weight_mode: str = "softmax"):
    """Top-tau columns per row, ties toward the smaller index, sorted ascending.

    Returns (i_sel, w_sel): integer indices and the matching weights, either
    softmax-normalized over the tau raw scores (default) or passed through raw.
    """
    if weight_mode not in WEIGHT_MODES:
        raise ContractError(f"weight_mode must be one of {WEIGHT_MODES}")
    m = m_agg if isinstance(m_agg, Tensor) else tt.constant(m_agg)
    t_len = m.shape[-1]
    if not 1 <= tau <= t_len:
        raise ContractError(f"tau={tau} out of range [1, {t_len}]")
    order = np.argsort(-m.data, axis=-1, kind="stable")
    i_sel = np.sort(order[..., :tau], axis=-1).astype(np.int64)
    w_raw = tt.gather_last(m, i_sel)
    w_sel = tt.softmax_rows(w_raw) if weight_mode == "softmax" else w_raw
    return i_sel, w_sel


def gather_selected(x: Array, i_sel: Array) -> Array:
    """x_sel[..., n, t, k, c] = x[..., n, i_sel[..., t, k], c]."""
    x = np.asarray(x, dtype=np.float64)
    i_sel = np.asarray(i_sel, dtype=np.int64)
    t_len = x.shape[-2]
    if np.any(i_sel < 0) or np.any(i_sel >= t_len):
        raise ContractError(f"selected indices out of range [0, {t_len})")
    if i_sel.ndim == 2:
        if x.ndim != 3:
            raise ShapeError(f"per-sample gather needs N x T x C input, got {x.shape}")
        return x[:, i_sel, :]
    if i_sel.ndim == 3 and x.ndim == 4:
        b, n, _, c = x.shape
        tau = i_sel.shape[-1]
        idx = i_sel.reshape(b, 1, t_len * tau, 1)
        out = np.take_along_axis(x, idx, axis=2)
        return out.reshape(b, n, t_len, tau, c)
    raise ShapeError(f"incompatible gather shapes {x.shape} and {i_sel.shape}")


def _uniform_weights(i_sel: Array) -> Tensor:
    return tt.constant(np.full(i_sel.shape, 1.0 / i_sel.shape[-1]))


def _random_indices(shape_lead: tuple[int, ...], t_len: int, tau: int,
                    rng: np.random.Generator) -> Array:
    flat = int(np.prod(shape_lead)) if shape_lead else 1
    rows = np.stack([np.sort(rng.permutation(t_len)[:tau]) for _ in range(flat)])
    return rows.reshape(shape_lead + (tau,)).astype(np.int64)


def _latest_indices(shape_lead: tuple[int, ...], t_len: int, tau: int) -> Array:
    rows = []
    for i in range(t_len):
        start = min(max(0, i - tau + 1), t_len - tau)
        rows.append(np.arange(start, start + tau))
    block = np.stack(rows)
    return np.broadcast_to(block, shape_lead[:-1] + block.shape).copy().astype(np.int64)


def run_selector(x: Array, params: SelectorParams, mode: str = "fft",
                 use_tn: bool = True, weight_mode: str = "softmax",
                 rng: np.random.Generator | None = None) -> SelectorOutput:
    """Full selection pass over a window (or a batch of windows).

    ``mode`` 'fft' is the attentive selector; 'random' and 'latest' are the
    ablation selectors (uniform weights, no score matrix).
    """
    if mode not in SELECT_MODES:
        raise ContractError(f"mode must be one of {SELECT_MODES}")
    x = np.asarray(x, dtype=np.float64)
    t_len = x.shape[-2]
    tau = params.tau
    if tau > t_len:
        raise ContractError(f"tau={tau} exceeds window length {t_len}")
    if mode == "fft":
        feats = enrich(x, temporal_normalize(x)) if use_tn else x
        m_agg = attention_scores(feats, params)
        i_sel, w_sel = select_top_tau(m_agg, tau, weight_mode)
    else:
        lead = x.shape[:-3] + (t_len,)
        if mode == "random":
            if rng is None:
                raise ContractError("random selection needs an rng")
            i_sel = _random_indices(lead, t_len, tau, rng)
        else:
            i_sel = _latest_indices(lead, t_len, tau)
        w_sel = _uniform_weights(i_sel)
        m_agg = None
    return SelectorOutput(i_sel=i_sel, w_sel=w_sel, m_agg=m_agg,
                          x_sel=gather_selected(x, i_sel))
