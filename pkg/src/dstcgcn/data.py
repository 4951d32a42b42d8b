"""Dataset ingestion, preprocessing, windowing, and the synthetic generator.

The pipeline is a pure function of (file bytes or seed, config): loading,
interpolation, chronological splitting, z-score fitting on the training
segment only, and sliding-window batching. ``synth_generate`` provides a
seeded desk-scale stand-in for real traffic data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import ContractError, DataError, ParseError

Array = np.ndarray

STD_EPS = 1e-8


@dataclass
class RawSeries:
    """T_total x N x C series; missing entries are NaN until interpolated."""

    values: Array
    node_ids: list[str]
    step_minutes: int = 5

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 2:
            self.values = self.values[:, :, None]
        t, n, c = self.values.shape
        if t < 1 or n < 1 or c < 1:
            raise DataError(f"series needs positive extents, got {self.values.shape}")
        if len(self.node_ids) != n:
            raise DataError(f"{len(self.node_ids)} node ids for {n} columns")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.values.shape[1]

    @property
    def n_channels(self) -> int:
        return self.values.shape[2]


@dataclass
class NormStats:
    """Per-node/channel z-score statistics (population convention)."""

    mean: Array
    std: Array

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if np.any(self.std < STD_EPS):
            raise ContractError("std entries must be clamped to >= epsilon")


@dataclass
class WindowBatch:
    """Aligned input windows (B x T x N x C) and targets (B x H x N x F)."""

    inputs: Array
    targets: Array
    window_start_indices: Array = field(default_factory=lambda: np.zeros(0, np.int64))


def load_csv(path) -> RawSeries:
    """Read a dataset file: header of node ids, one row per 5-minute step.

    Empty cells and the literal "NaN" mark missing entries.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    lines = [ln for ln in lines if ln.strip() != ""]
    if not lines:
        raise ParseError(f"{path}: empty file")
    header = [c.strip() for c in lines[0].split(",")]
    if not header or header == [""]:
        raise ParseError(f"{path}: header has zero columns")
    n = len(header)
    if len(lines) == 1:
        raise ParseError(f"{path}: no data rows")
    rows = []
    for lineno, ln in enumerate(lines[1:], start=2):
        cells = [c.strip() for c in ln.split(",")]
        if len(cells) != n:
            raise ParseError(
                f"{path}:{lineno}: expected {n} cells, got {len(cells)}")
        row = np.empty(n)
        for j, cell in enumerate(cells):
            if cell == "" or cell.lower() == "nan":
                row[j] = np.nan
            else:
                try:
                    row[j] = float(cell)
                except ValueError as exc:
                    raise ParseError(f"{path}:{lineno}: bad number {cell!r}") from exc
        rows.append(row)
    return RawSeries(np.stack(rows), node_ids=header)


def save_csv(series: RawSeries, path) -> None:
    """Write a RawSeries (channel 0) in the load_csv format, full precision."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(series.node_ids) + "\n")
        for row in series.values[:, :, 0]:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def interpolate_missing(r: RawSeries) -> RawSeries:
    """Linear interpolation of interior gaps; edges take the nearest value."""
    values = r.values.copy()
    t_idx = np.arange(r.n_steps, dtype=np.float64)
    for n in range(r.n_nodes):
        for c in range(r.n_channels):
            col = values[:, n, c]
            mask = np.isfinite(col)
            if mask.all():
                continue
            if not mask.any():
                raise DataError(f"node {r.node_ids[n]} channel {c} is fully missing")
            values[:, n, c] = np.interp(t_idx, t_idx[mask], col[mask])
    return RawSeries(values, node_ids=list(r.node_ids), step_minutes=r.step_minutes)


def fit_zscore(train_values: Array) -> NormStats:
    """Population mean/std per node/channel over the training time axis."""
    train_values = np.asarray(train_values, dtype=np.float64)
    if train_values.shape[0] < 1:
        raise DataError("cannot fit z-score statistics on an empty segment")
    mean = train_values.mean(axis=0)
    std = train_values.std(axis=0)
    return NormStats(mean=mean, std=np.maximum(std, STD_EPS))


def apply_zscore(values: Array, stats: NormStats) -> Array:
    return (values - stats.mean) / stats.std


def invert_zscore(values: Array, stats: NormStats) -> Array:
    return values * stats.std + stats.mean


def chronological_split(r: RawSeries, ratios: Sequence[float],
                        min_segment: int | None = None) -> tuple[RawSeries, ...]:
    """Contiguous ordered segments with boundaries at floor(cum_ratio * T)."""
    ratios = np.asarray(ratios, dtype=np.float64)
    if np.any(ratios <= 0):
        raise ContractError(f"split ratios must be positive, got {ratios.tolist()}")
    ratios = ratios / ratios.sum()
    t_total = r.n_steps
    bounds = [0] + [int(np.floor(c * t_total)) for c in np.cumsum(ratios)]
    bounds[-1] = t_total
    segments = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if min_segment is not None and hi - lo < min_segment:
            raise DataError(
                f"segment too short for windowing: {hi - lo} < {min_segment}")
        segments.append(RawSeries(r.values[lo:hi].copy(), node_ids=list(r.node_ids),
                                  step_minutes=r.step_minutes))
    return tuple(segments)


def split_offsets(t_total: int, ratios: Sequence[float]) -> list[int]:
    """Absolute start index of each split segment."""
    ratios = np.asarray(ratios, dtype=np.float64)
    ratios = ratios / ratios.sum()
    return [0] + [int(np.floor(c * t_total)) for c in np.cumsum(ratios)[:-1]]


def window_count(length: int, t_in: int, horizon: int) -> int:
    return length - t_in - horizon + 1


def window_dataset(segment: Array, t_in: int, horizon: int, batch_size: int,
                   shuffle_seed: int | None = None,
                   start_offset: int = 0) -> Iterator[WindowBatch]:
    """Yield contiguous, non-leaking windows in batches.

    ``shuffle_seed`` set -> training order (seeded shuffle); None -> original
    order. ``start_offset`` makes window_start_indices absolute.
    """
    segment = np.asarray(segment, dtype=np.float64)
    length = segment.shape[0]
    n_win = window_count(length, t_in, horizon)
    if n_win < 1:
        raise DataError(
            f"segment too short for windowing: {length} < {t_in + horizon}")
    if batch_size < 1:
        raise ContractError("batch_size must be >= 1")
    order = np.arange(n_win)
    if shuffle_seed is not None:
        np.random.default_rng(shuffle_seed).shuffle(order)
    for lo in range(0, n_win, batch_size):
        starts = order[lo:lo + batch_size]
        inputs = np.stack([segment[s:s + t_in] for s in starts])
        targets = np.stack([segment[s + t_in:s + t_in + horizon] for s in starts])
        yield WindowBatch(inputs=inputs, targets=targets,
                          window_start_indices=starts + start_offset)


@dataclass
class SynthConfig:
    """Knobs of the synthetic traffic generator (all seed-deterministic)."""

    base: float = 100.0
    amplitude: float = 5.0      # scales the per-node diurnal amplitude
    noise: float = 10.0         # AR(1) innovation standard deviation
    ar: float = 0.95            # AR(1) coefficient
    coupling: float = 0.4       # fraction of a neighbor's signal mixed in
    lag: int | None = None      # fixed coupling lag; None -> per-node in {1,2,3}
    period: int = 288           # 24h at 5-minute steps


def synth_generate(n_nodes: int, n_steps: int, seed: int,
                   config: SynthConfig | None = None) -> RawSeries:
    """Diurnal sinusoids + lagged spatial coupling + AR(1) noise.

    Each node n has its own amplitude/phase; node n also receives
    ``coupling`` times the (sinusoid + noise) signal of a randomly chosen
    other node, delayed by the coupling lag. Fully determined by the seed.
    """
    if n_nodes < 2:
        raise ContractError(f"synthetic generator needs >= 2 nodes, got {n_nodes}")
    if n_steps < 600:
        raise ContractError(f"synthetic generator needs >= 600 steps, got {n_steps}")
    cfg = config or SynthConfig()
    rng = np.random.default_rng(seed)
    amps = cfg.amplitude * rng.uniform(20.0, 50.0, size=n_nodes)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_nodes)
    sources = np.array([rng.choice([m for m in range(n_nodes) if m != n])
                        for n in range(n_nodes)])
    if cfg.lag is None:
        lags = rng.integers(1, 4, size=n_nodes)
    else:
        lags = np.full(n_nodes, int(cfg.lag))
    max_lag = int(lags.max())

    t = np.arange(-max_lag, n_steps, dtype=np.float64)
    sin_part = cfg.base + amps[None, :] * np.sin(
        2.0 * np.pi * t[:, None] / cfg.period + phases[None, :])
    noise = np.zeros((t.size, n_nodes))
    if cfg.noise > 0:
        innov = rng.normal(scale=cfg.noise, size=(t.size, n_nodes))
        for i in range(1, t.size):
            noise[i] = cfg.ar * noise[i - 1] + innov[i]
    own = sin_part + noise

    values = own[max_lag:].copy()
    if cfg.coupling != 0.0:
        for n in range(n_nodes):
            lag = int(lags[n])
            src = own[max_lag - lag:t.size - lag, sources[n]]
            values[:, n] += cfg.coupling * src
    node_ids = [f"node{n:03d}" for n in range(n_nodes)]
    return RawSeries(values, node_ids=node_ids)
