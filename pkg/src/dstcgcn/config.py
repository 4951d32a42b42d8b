"""Flat key=value run configuration, presets, and the data pipeline glue.

Config files hold one ``key = value`` per line ('#' comments allowed); CLI
overrides take the same ``key=value`` form and win over file entries. Unknown
keys are rejected. Preset names expand to the published hyperparameter
choices; explicit model.* keys override the preset they sit on top of.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import data as dio
from .errors import ConfigError
from .model import Ablation, HyperParams
from .training import TrainConfig

SEED_ENV_VAR = "DSTCGCN_SEED"

# name -> (default, help)
CONFIG_KEYS: dict[str, tuple[str, str]] = {
    "data.path": ("", "CSV dataset path; empty uses the synthetic generator"),
    "data.synthetic.nodes": ("15", "synthetic generator: node count"),
    "data.synthetic.steps": ("4000", "synthetic generator: time steps"),
    "data.synthetic.base": ("100.0", "synthetic generator: base level"),
    "data.synthetic.amplitude": ("5.0", "synthetic generator: diurnal amplitude scale"),
    "data.synthetic.noise": ("10.0", "synthetic generator: AR(1) innovation std"),
    "data.synthetic.ar": ("0.95", "synthetic generator: AR(1) coefficient"),
    "data.synthetic.coupling": ("0.4", "synthetic generator: neighbor coupling"),
    "data.synthetic.lag": ("", "synthetic generator: fixed coupling lag; empty -> per-node 1..3"),
    "split.ratios": ("6:2:2", "chronological train:val:test ratios"),
    "model.preset": ("tiny", "preset name: tiny, pems03/04/07/08, metr-la, pems-bay"),
    "model.d_e": ("", "node/time embedding dimension (overrides preset)"),
    "model.d_h": ("", "selector hidden dimension (overrides preset)"),
    "model.d_f": ("", "retained frequency modes; empty -> all modes"),
    "model.tau": ("", "selected time steps per step (overrides preset)"),
    "model.d_hid": ("", "GRU hidden units (overrides preset)"),
    "model.layers": ("", "graph convolution layers (overrides preset)"),
    "model.t_in": ("", "input window length (overrides preset)"),
    "model.horizon": ("", "forecast horizon (overrides preset)"),
    "train.lr": ("0.003", "Adam learning rate"),
    "train.batch_size": ("64", "windows per optimizer step"),
    "train.epochs": ("100", "training epochs"),
    "train.clip_norm": ("", "global gradient-norm clip; empty -> off"),
    "selector.weight_mode": ("softmax", "selection weights: softmax or raw"),
    "ablation.selector": ("fft", "time-step selection: fft, random, or latest"),
    "ablation.temporal_norm": ("on", "enrich scoring input with normalized series"),
    "ablation.dynamic_spatial": ("on", "per-step spatial graphs (off -> one static graph)"),
    "ablation.dynamic_temporal": ("on", "learned temporal graphs (off -> identity)"),
    "ablation.cross_graphs": ("on", "cross branch (off -> spatial branch only)"),
    "eval.mape_threshold": ("0.001", "|truth| cutoff for the MAPE mask"),
    "eval.period": ("288", "historical-average profile period in steps"),
    "seed": ("", f"RNG seed; empty -> ${SEED_ENV_VAR} or 0"),
    "out.dir": ("out", "artifact output directory"),
}

PRESETS: dict[str, dict[str, int]] = {
    "tiny": {"d_e": 4, "d_h": 8, "layers": 1, "d_hid": 16, "tau": 2},
    "pems03": {"d_e": 12, "d_h": 32, "layers": 1, "d_hid": 64, "tau": 3},
    "pems04": {"d_e": 10, "d_h": 16, "layers": 2, "d_hid": 64, "tau": 3},
    "pems07": {"d_e": 6, "d_h": 32, "layers": 1, "d_hid": 32, "tau": 3},
    "pems08": {"d_e": 12, "d_h": 8, "layers": 2, "d_hid": 64, "tau": 3},
    "metr-la": {"d_e": 10, "d_h": 32, "layers": 2, "d_hid": 64, "tau": 2},
    "pems-bay": {"d_e": 8, "d_h": 16, "layers": 2, "d_hid": 32, "tau": 3},
}

_BOOL = {"on": True, "true": True, "1": True,
         "off": False, "false": False, "0": False}


def config_help_lines() -> list[str]:
    width = max(len(k) for k in CONFIG_KEYS)
    lines = ["config keys (key=value; defaults in brackets):"]
    for key, (default, doc) in CONFIG_KEYS.items():
        shown = default if default != "" else "(empty)"
        lines.append(f"  {key.ljust(width)}  {doc} [{shown}]")
    return lines


class RunConfig:
    """Resolved flat configuration with typed accessors."""

    def __init__(self, entries: dict[str, str] | None = None):
        self.entries = {k: d for k, (d, _) in CONFIG_KEYS.items()}
        for key, value in (entries or {}).items():
            self.set(key, value)

    def set(self, key: str, value: str) -> None:
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key: {key}")
        self.entries[key] = value.strip()

    def get(self, key: str) -> str:
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key: {key}")
        return self.entries[key]

    def _int(self, key: str) -> int:
        try:
            return int(self.get(key))
        except ValueError as exc:
            raise ConfigError(f"{key}: expected an integer, got {self.get(key)!r}") from exc

    def _float(self, key: str) -> float:
        try:
            return float(self.get(key))
        except ValueError as exc:
            raise ConfigError(f"{key}: expected a number, got {self.get(key)!r}") from exc

    def _bool(self, key: str) -> bool:
        raw = self.get(key).lower()
        if raw not in _BOOL:
            raise ConfigError(f"{key}: expected on/off, got {self.get(key)!r}")
        return _BOOL[raw]

    # typed views -----------------------------------------------------------
    @property
    def seed(self) -> int:
        raw = self.get("seed")
        if raw == "":
            raw = os.environ.get(SEED_ENV_VAR, "0")
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"seed: expected an integer, got {raw!r}") from exc

    @property
    def out_dir(self) -> str:
        return self.get("out.dir")

    def ratios(self) -> tuple[float, ...]:
        raw = self.get("split.ratios")
        try:
            parts = tuple(float(p) for p in raw.split(":"))
        except ValueError as exc:
            raise ConfigError(f"split.ratios: bad value {raw!r}") from exc
        if len(parts) != 3 or any(p <= 0 for p in parts):
            raise ConfigError(f"split.ratios: need three positive parts, got {raw!r}")
        return parts

    def hyper(self) -> HyperParams:
        preset = self.get("model.preset")
        if preset not in PRESETS:
            raise ConfigError(
                f"model.preset: unknown preset {preset!r} (choices: {sorted(PRESETS)})")
        values = dict(PRESETS[preset])
        values.setdefault("t_in", 12)
        values.setdefault("horizon", 12)
        for field in ("d_e", "d_h", "tau", "d_hid", "layers", "t_in", "horizon"):
            raw = self.get(f"model.{field}")
            if raw != "":
                values[field] = self._int(f"model.{field}")
        d_f = None
        if self.get("model.d_f") != "":
            d_f = self._int("model.d_f")
        return HyperParams(d_e=values["d_e"], d_h=values["d_h"], d_f=d_f,
                           tau=values["tau"], d_hid=values["d_hid"],
                           layers=values["layers"], t_in=values["t_in"],
                           horizon=values["horizon"])

    def ablation(self) -> Ablation:
        return Ablation(
            selector=self.get("ablation.selector"),
            temporal_norm=self._bool("ablation.temporal_norm"),
            dynamic_spatial=self._bool("ablation.dynamic_spatial"),
            dynamic_temporal=self._bool("ablation.dynamic_temporal"),
            cross_graphs=self._bool("ablation.cross_graphs"))

    def weight_mode(self) -> str:
        return self.get("selector.weight_mode")

    def train_config(self) -> TrainConfig:
        clip = self.get("train.clip_norm")
        return TrainConfig(
            lr=self._float("train.lr"),
            batch_size=self._int("train.batch_size"),
            epochs=self._int("train.epochs"),
            seed=self.seed,
            clip_norm=None if clip == "" else float(clip))

    def synth_config(self) -> dio.SynthConfig:
        lag = self.get("data.synthetic.lag")
        return dio.SynthConfig(
            base=self._float("data.synthetic.base"),
            amplitude=self._float("data.synthetic.amplitude"),
            noise=self._float("data.synthetic.noise"),
            ar=self._float("data.synthetic.ar"),
            coupling=self._float("data.synthetic.coupling"),
            lag=None if lag == "" else int(lag))

    def mape_threshold(self) -> float:
        return self._float("eval.mape_threshold")

    def period(self) -> int:
        return self._int("eval.period")

    def echo(self) -> dict[str, str]:
        return dict(self.entries)


def parse_config_file(path) -> dict[str, str]:
    entries: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            key, value = line.split("=", 1)
            entries[key.strip()] = value.strip()
    return entries


def load_run_config(path=None, overrides=None) -> RunConfig:
    cfg = RunConfig(parse_config_file(path) if path else None)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), value.strip())
    return cfg


# ---------------------------------------------------------------------------
# pipeline assembly shared by the CLI commands
# ---------------------------------------------------------------------------

@dataclass
class Pipeline:
    """Everything a command needs: raw series, normalized splits, stats."""

    raw: dio.RawSeries
    splits: tuple[np.ndarray, np.ndarray, np.ndarray]  # normalized segments
    offsets: list[int]
    stats: dio.NormStats


def build_raw(cfg: RunConfig) -> dio.RawSeries:
    path = cfg.get("data.path")
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"data.path: no such file {path!r}")
        raw = dio.load_csv(path)
    else:
        raw = dio.synth_generate(
            n_nodes=cfg._int("data.synthetic.nodes"),
            n_steps=cfg._int("data.synthetic.steps"),
            seed=cfg.seed, config=cfg.synth_config())
    return dio.interpolate_missing(raw)


def build_pipeline(cfg: RunConfig) -> Pipeline:
    raw = build_raw(cfg)
    hp = cfg.hyper()
    segments = dio.chronological_split(raw, cfg.ratios(),
                                       min_segment=hp.t_in + hp.horizon)
    stats = dio.fit_zscore(segments[0].values)
    normalized = tuple(dio.apply_zscore(s.values, stats) for s in segments)
    offsets = dio.split_offsets(raw.n_steps, cfg.ratios())
    return Pipeline(raw=raw, splits=normalized, offsets=offsets, stats=stats)
