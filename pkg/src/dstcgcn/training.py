"""Adam optimization loop, model selection, checkpointing, baselines.

Training is fully reproducible from (seed, config, data): the shuffle order,
the ablation selector's random stream, and every parameter update are
deterministic functions of the seed. Checkpoints are self-describing text
files whose floats round-trip bitwise via repr.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import data as dio, model as mdl, tensor as tt
from .errors import CheckpointError, ContractError, NonFiniteError
from .model import MetricsReport, ModelParams

Array = np.ndarray

CKPT_MAGIC = "DSTCGCN-CKPT v1"
LOG_HEADER = "epoch,train_l1,val_l1,seconds"


@dataclass
class TrainConfig:
    """Optimizer and loop settings (model hyperparameters live in RunConfig)."""

    lr: float = 0.003
    batch_size: int = 64
    epochs: int = 100
    seed: int = 0
    clip_norm: float | None = None  # off unless configured

    def __post_init__(self):
        if self.lr <= 0:
            raise ContractError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ContractError("batch_size and epochs must be >= 1")


@dataclass
class AdamState:
    """First/second moment estimates per registered parameter."""

    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)
    t: int = 0


@dataclass
class EpochLog:
    epoch: int
    train_l1: float
    val_l1: float
    seconds: float

    def as_csv_row(self) -> str:
        return f"{self.epoch},{self.train_l1!r},{self.val_l1!r},{self.seconds:.3f}"


@dataclass
class Checkpoint:
    """Best-model snapshot: parameter map, Adam state, and bookkeeping."""

    config: dict[str, str]
    params: dict[str, Array]
    adam_m: dict[str, Array]
    adam_v: dict[str, Array]
    adam_t: int
    epoch: int
    best_val_l1: float


def adam_step(registry: dict[str, tt.Tensor], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              clip_norm: float | None = None) -> None:
    """Bias-corrected Adam update, applied in registry order."""
    for name, p in registry.items():
        if p.grad is None:
            raise ContractError(f"parameter {name} has no gradient")
    if clip_norm is not None:
        total = np.sqrt(sum(float((p.grad * p.grad).sum())
                            for p in registry.values()))
        if total > clip_norm:
            scale = clip_norm / total
            for p in registry.values():
                p.grad = p.grad * scale
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, p in registry.items():
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        m_hat = state.m[name] / c1
        v_hat = state.v[name] / c2
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)


def _epoch_loss(params: ModelParams, segment: Array, batch_size: int,
                rng: np.random.Generator | None) -> float:
    """Mean L1 over all windows of a segment, without recording gradients."""
    hp = params.hyper
    total, count = 0.0, 0
    with tt.no_grad():
        for batch in dio.window_dataset(segment, hp.t_in, hp.horizon, batch_size):
            pred = mdl.forward(params, batch.inputs, rng=rng)
            loss = mdl.l1_loss(pred, batch.targets)
            b = batch.inputs.shape[0]
            total += loss.item() * b
            count += b
    return total / count


def train(params: ModelParams, train_segment: Array, val_segment: Array,
          cfg: TrainConfig,
          config_echo: dict[str, str] | None = None,
          progress=None) -> tuple[Checkpoint, list[EpochLog]]:
    """Optimize ``params``; keep the epoch whose validation L1 is lowest.

    Both segments are normalized T x N x C arrays. Returns the best
    checkpoint and the per-epoch log. A NonFiniteError from the forward or
    backward pass aborts with epoch/batch context attached.
    """
    hp = params.hyper
    sel_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5e1ec7]))
    state = AdamState()
    best: Checkpoint | None = None
    logs: list[EpochLog] = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        total, count = 0.0, 0
        batches = dio.window_dataset(train_segment, hp.t_in, hp.horizon,
                                     cfg.batch_size,
                                     shuffle_seed=cfg.seed * 100003 + epoch)
        for i, batch in enumerate(batches):
            try:
                with tt.Tape():
                    params.zero_grads()
                    pred = mdl.forward(params, batch.inputs, rng=sel_rng)
                    loss = mdl.l1_loss(pred, batch.targets)
                    tt.backward(loss)
            except NonFiniteError as exc:
                raise NonFiniteError(
                    f"epoch {epoch} batch {i}: {exc}") from exc
            adam_step(params.parameters(), state, cfg.lr,
                      clip_norm=cfg.clip_norm)
            b = batch.inputs.shape[0]
            total += loss.item() * b
            count += b
        train_l1 = total / count
        val_l1 = _epoch_loss(params, val_segment, cfg.batch_size, sel_rng)
        seconds = time.perf_counter() - t0
        logs.append(EpochLog(epoch, train_l1, val_l1, seconds))
        if progress is not None:
            progress(logs[-1])
        if best is None or val_l1 < best.best_val_l1:
            best = Checkpoint(
                config=dict(config_echo or {}),
                params={k: t.data.copy() for k, t in params.parameters().items()},
                adam_m={k: v.copy() for k, v in state.m.items()},
                adam_v={k: v.copy() for k, v in state.v.items()},
                adam_t=state.t, epoch=epoch, best_val_l1=val_l1)
    return best, logs


# ---------------------------------------------------------------------------
# checkpoint serialization (versioned text, bitwise round-trip via repr)
# ---------------------------------------------------------------------------

def _write_array_block(fh, section: str, name: str, arr: Array) -> None:
    fh.write(f"[{section}]\n")
    fh.write(f"name={name}\n")
    fh.write("shape=" + ",".join(str(s) for s in arr.shape) + "\n")
    fh.write("data=" + ",".join(repr(float(v)) for v in arr.reshape(-1)) + "\n")


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CKPT_MAGIC + "\n")
        fh.write("[config]\n")
        for k in sorted(ckpt.config):
            fh.write(f"{k}={ckpt.config[k]}\n")
        fh.write("[meta]\n")
        fh.write(f"epoch={ckpt.epoch}\n")
        fh.write(f"best_val_l1={ckpt.best_val_l1!r}\n")
        fh.write(f"adam_t={ckpt.adam_t}\n")
        for name, arr in ckpt.params.items():
            _write_array_block(fh, "param", name, arr)
        for name, arr in ckpt.adam_m.items():
            _write_array_block(fh, "adam_m", name, arr)
        for name, arr in ckpt.adam_v.items():
            _write_array_block(fh, "adam_v", name, arr)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: missing magic line '{CKPT_MAGIC}'")
    config: dict[str, str] = {}
    meta: dict[str, str] = {}
    arrays = {"param": {}, "adam_m": {}, "adam_v": {}}
    section = None
    buf: dict[str, str] = {}

    def flush():
        if section in arrays and buf:
            shape = tuple(int(s) for s in buf["shape"].split(",") if s != "")
            flat = np.array([float(v) for v in buf["data"].split(",")]
                            if buf["data"] else [], dtype=np.float64)
            arrays[section][buf["name"]] = flat.reshape(shape)

    for ln in lines[1:]:
        if ln.startswith("[") and ln.endswith("]"):
            flush()
            section = ln[1:-1]
            buf = {}
            continue
        if "=" not in ln:
            raise CheckpointError(f"{path}: malformed line {ln!r}")
        key, val = ln.split("=", 1)
        if section == "config":
            config[key] = val
        elif section == "meta":
            meta[key] = val
        elif section in arrays:
            buf[key] = val
        else:
            raise CheckpointError(f"{path}: line outside any section: {ln!r}")
    flush()
    try:
        return Checkpoint(config=config, params=arrays["param"],
                          adam_m=arrays["adam_m"], adam_v=arrays["adam_v"],
                          adam_t=int(meta["adam_t"]), epoch=int(meta["epoch"]),
                          best_val_l1=float(meta["best_val_l1"]))
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: incomplete checkpoint: {exc}") from exc


def restore_params(params: ModelParams, ckpt: Checkpoint) -> None:
    """Load checkpoint values into a freshly built ModelParams."""
    have = set(ckpt.params)
    want = set(params.parameters())
    if have != want:
        missing = sorted(want - have)
        extra = sorted(have - want)
        raise CheckpointError(
            f"checkpoint/model parameter mismatch (missing {missing}, extra {extra})")
    try:
        params.set_values(ckpt.params)
    except Exception as exc:
        raise CheckpointError(str(exc)) from exc


# ---------------------------------------------------------------------------
# evaluation and reference baselines
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    overall: MetricsReport
    per_horizon: list[MetricsReport]
    n_windows: int


def predict_segment(params: ModelParams, segment: Array, batch_size: int,
                    rng: np.random.Generator | None = None) -> tuple[Array, Array]:
    """Ordered predictions and targets over every window of a segment."""
    hp = params.hyper
    preds, truths = [], []
    with tt.no_grad():
        for batch in dio.window_dataset(segment, hp.t_in, hp.horizon, batch_size):
            preds.append(mdl.forward(params, batch.inputs, rng=rng).data)
            truths.append(batch.targets)
    return np.concatenate(preds), np.concatenate(truths)


def evaluate(params: ModelParams, segment: Array, stats: dio.NormStats,
             batch_size: int = 64, mape_threshold: float = mdl.MAPE_THRESHOLD,
             rng: np.random.Generator | None = None) -> EvalReport:
    """De-normalized metrics, overall and per horizon step."""
    pred, truth = predict_segment(params, segment, batch_size, rng)
    pred = dio.invert_zscore(pred, stats)
    truth = dio.invert_zscore(truth, stats)
    return EvalReport(
        overall=mdl.metrics(pred, truth, mape_threshold),
        per_horizon=mdl.metrics_per_horizon(pred, truth, mape_threshold),
        n_windows=pred.shape[0])


def historical_average_profile(train_raw: Array, period: int) -> Array:
    """Per-node mean by position-in-period over the training segment."""
    length = train_raw.shape[0]
    profile = np.zeros((period,) + train_raw.shape[1:])
    for pos in range(period):
        rows = train_raw[pos::period]
        profile[pos] = rows.mean(axis=0) if rows.shape[0] else train_raw.mean(axis=0)
    return profile


def baseline_reports(raw: Array, test_offset: int, t_in: int, horizon: int,
                     period: int = 288,
                     mape_threshold: float = mdl.MAPE_THRESHOLD
                     ) -> dict[str, MetricsReport]:
    """Historical-average and last-value-persistence metrics on the test split.

    ``raw`` is the full de-normalized T x N x C series; windows mirror the
    model's test windows exactly.
    """
    train_raw = raw[:test_offset]
    test_raw = raw[test_offset:]
    profile = historical_average_profile(train_raw, period)
    n_win = dio.window_count(test_raw.shape[0], t_in, horizon)
    truths, ha_preds, p_preds = [], [], []
    for s in range(n_win):
        target_abs = test_offset + s + t_in + np.arange(horizon)
        truths.append(test_raw[s + t_in:s + t_in + horizon])
        ha_preds.append(profile[target_abs % period])
        p_preds.append(np.broadcast_to(test_raw[s + t_in - 1],
                                       (horizon,) + raw.shape[1:]).copy())
    truth = np.stack(truths)
    return {
        "historical_average": mdl.metrics(np.stack(ha_preds), truth, mape_threshold),
        "persistence": mdl.metrics(np.stack(p_preds), truth, mape_threshold),
    }
