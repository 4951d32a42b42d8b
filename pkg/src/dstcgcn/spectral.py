"""Real-input FFT, inverse, and frequency-mode truncation.

Conventions (frozen so oracles stay bit-stable): unnormalized forward
transform, 1/d_h on the inverse. Truncation keeps the d_F lowest-frequency
modes. Power-of-two lengths go through an iterative radix-2 kernel that is
vectorized over leading axes; other lengths fall back to a direct
O(d_h * d_F) transform.

The module has two layers: a vector API working on ``SpectrumVec`` values
(the contract surface used by oracles), and array helpers plus differentiable
tensor ops built on the same kernels for the attentive selector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .errors import ContractError

Array = np.ndarray

_MAT_CACHE: dict[tuple[int, int], tuple[Array, Array, Array, Array]] = {}


def max_modes(d_h: int) -> int:
    """Number of distinct modes in the spectrum of a real signal of length d_h."""
    return d_h // 2 + 1


@dataclass
class SpectrumVec:
    """Truncated spectrum of a real vector: (re, im) pairs plus source length."""

    modes: Array  # (d_F, 2) float64
    source_len: int

    def __post_init__(self):
        self.modes = np.ascontiguousarray(np.asarray(self.modes, dtype=np.float64))
        if self.modes.ndim != 2 or self.modes.shape[1] != 2:
            raise ContractError(f"modes must be (d_F, 2), got {self.modes.shape}")
        if not 1 <= self.num_modes <= max_modes(self.source_len):
            raise ContractError(
                f"mode count {self.num_modes} out of range for length {self.source_len}")

    @property
    def num_modes(self) -> int:
        return self.modes.shape[0]

    @property
    def re(self) -> Array:
        return self.modes[:, 0]

    @property
    def im(self) -> Array:
        return self.modes[:, 1]


def _bit_reverse_indices(n: int) -> Array:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def _fft_pow2(z: Array) -> Array:
    """Iterative radix-2 DIT FFT along the last axis (length must be 2^k)."""
    n = z.shape[-1]
    a = z[..., _bit_reverse_indices(n)].astype(np.complex128)
    m = 2
    while m <= n:
        half = m // 2
        w = np.exp(-2j * np.pi * np.arange(half) / m)
        blocks = a.reshape(a.shape[:-1] + (n // m, m))
        even = blocks[..., :half].copy()
        odd = blocks[..., half:] * w
        blocks[..., :half] = even + odd
        blocks[..., half:] = even - odd
        m *= 2
    return a


def _mats(d_h: int, d_F: int) -> tuple[Array, Array, Array, Array]:
    """Analysis (C, S) and synthesis (A, B) coefficient matrices.

    re = x @ C.T, im = -(x @ S.T); irfft(re, im) = re @ A + im @ B.
    """
    key = (d_h, d_F)
    if key not in _MAT_CACHE:
        k = np.arange(d_F)[:, None]
        m = np.arange(d_h)[None, :]
        ang = 2.0 * np.pi * k * m / d_h
        c = np.cos(ang)
        s = np.sin(ang)
        weight = np.full(d_F, 2.0)
        weight[0] = 1.0
        if d_h % 2 == 0 and d_F == max_modes(d_h):
            weight[-1] = 1.0
        a = (weight[:, None] * c) / d_h
        b = -(weight[:, None] * s) / d_h
        _MAT_CACHE[key] = (c, s, a, b)
    return _MAT_CACHE[key]


def rfft_array(x: Array, d_F: int) -> tuple[Array, Array]:
    """First d_F forward-DFT coefficients of real input along the last axis."""
    x = np.asarray(x, dtype=np.float64)
    d_h = x.shape[-1]
    if not 1 <= d_F <= max_modes(d_h):
        raise ContractError(f"d_F={d_F} out of range [1, {max_modes(d_h)}] for d_h={d_h}")
    if d_h >= 2 and d_h & (d_h - 1) == 0:
        spec = _fft_pow2(x)[..., :d_F]
        return np.ascontiguousarray(spec.real), np.ascontiguousarray(spec.imag)
    c, s, _, _ = _mats(d_h, d_F)
    return x @ c.T, -(x @ s.T)


def irfft_array(re: Array, im: Array, out_len: int) -> Array:
    """Inverse real DFT (1/out_len normalization); truncated modes are zero."""
    re = np.asarray(re, dtype=np.float64)
    im = np.asarray(im, dtype=np.float64)
    if re.shape != im.shape:
        raise ContractError(f"re/im shapes differ: {re.shape} vs {im.shape}")
    d_F = re.shape[-1]
    if not 1 <= d_F <= max_modes(out_len):
        raise ContractError(f"{d_F} modes invalid for output length {out_len}")
    if out_len >= 2 and out_len & (out_len - 1) == 0:
        full = np.zeros(re.shape[:-1] + (out_len,), dtype=np.complex128)
        full[..., :d_F] = re + 1j * im
        # Hermitian mirror of k = 1 .. out_len/2 - 1 (Nyquist maps to itself)
        mirror = np.conj(full[..., 1:out_len // 2])
        full[..., out_len // 2 + 1:] = mirror[..., ::-1]
        # inverse via conjugation trick: ifft(s) = conj(fft(conj(s))) / n
        y = np.conj(_fft_pow2(np.conj(full))) / out_len
        return np.ascontiguousarray(y.real)
    _, _, a, b = _mats(out_len, d_F)
    return re @ a + im @ b


def rfft(x, d_F: int) -> SpectrumVec:
    """Spectrum of a real 1-D vector, truncated to the d_F lowest modes."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise ContractError(f"rfft needs a 1-D vector, got shape {x.shape}")
    re, im = rfft_array(x, d_F)
    return SpectrumVec(np.stack([re, im], axis=1), source_len=x.size)


def irfft(s: SpectrumVec, out_len: int) -> Array:
    """Real inverse of ``s``; requires out_len to match the source length."""
    if s.source_len != out_len:
        raise ContractError(f"source length {s.source_len} != requested {out_len}")
    return irfft_array(s.re, s.im, out_len)


def hadamard_conj(a: SpectrumVec, b: SpectrumVec) -> SpectrumVec:
    """Elementwise a * conj(b)."""
    if a.num_modes != b.num_modes:
        raise ContractError(f"mode counts differ: {a.num_modes} vs {b.num_modes}")
    if a.source_len != b.source_len:
        raise ContractError(f"source lengths differ: {a.source_len} vs {b.source_len}")
    re = a.re * b.re + a.im * b.im
    im = a.im * b.re - a.re * b.im
    return SpectrumVec(np.stack([re, im], axis=1), source_len=a.source_len)


# ---------------------------------------------------------------------------
# differentiable wrappers (the selector's gradient path)
# ---------------------------------------------------------------------------

def rfft_t(x: tt.Tensor, d_F: int) -> tuple[tt.Tensor, tt.Tensor]:
    """Differentiable rfft along the last axis; returns (re, im) tensors."""
    d_h = x.shape[-1]
    re, im = rfft_array(x.data, d_F)
    c, s, _, _ = _mats(d_h, d_F)

    def bw(g_re, g_im):
        return (g_re @ c - g_im @ s,)

    return tt._emit_multi("rfft", (x,), (re, im), bw)


def irfft_t(re: tt.Tensor, im: tt.Tensor, out_len: int) -> tt.Tensor:
    """Differentiable inverse real DFT along the last axis."""
    out = irfft_array(re.data, im.data, out_len)
    d_F = re.shape[-1]
    _, _, a, b = _mats(out_len, d_F)

    def bw(g):
        return g @ a.T, g @ b.T

    return tt._emit("irfft", (re, im), out, bw)


def hadamard_conj_t(a_re, a_im, b_re, b_im) -> tuple[tt.Tensor, tt.Tensor]:
    """Differentiable elementwise a * conj(b) on (re, im) tensor pairs."""
    re = tt.add(tt.mul(a_re, b_re), tt.mul(a_im, b_im))
    im = tt.sub(tt.mul(a_im, b_re), tt.mul(a_re, b_im))
    return re, im
