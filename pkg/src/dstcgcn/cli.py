"""Command-line interface: synth, train, eval, inspect.

Every command takes ``--config FILE`` plus repeatable ``-o key=value``
overrides; all numeric dumps are CSV at full decimal precision so downstream
plotting is lossless. Exit codes: 0 success, 2 configuration error,
3 non-finite abort during training.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import data as dio, graphs, model as mdl, selector, tensor as tt, training
from .config import (RunConfig, build_pipeline, build_raw, config_help_lines,
                     load_run_config)
from .errors import CheckpointError, ConfigError, ContractError, NonFiniteError, ParseError
from .model import ModelParams

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONFINITE = 3


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


def _write_csv(path, header: str, rows: list[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(row + "\n")


def _write_matrix(path, mat: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in np.atleast_2d(mat):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _build_params(cfg: RunConfig, n_nodes: int, n_channels: int) -> ModelParams:
    return ModelParams(
        n_nodes=n_nodes, n_channels=n_channels, out_channels=n_channels,
        hyper=cfg.hyper(), ablation=cfg.ablation(),
        weight_mode=cfg.weight_mode(), seed=cfg.seed)


def cmd_synth(cfg: RunConfig) -> int:
    raw = build_raw(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "synthetic.csv")
    dio.save_csv(raw, path)
    values = raw.values
    print(f"wrote {path}: {raw.n_steps} steps x {raw.n_nodes} nodes")
    print(f"mean={values.mean():.4f} std={values.std():.4f} "
          f"min={values.min():.4f} max={values.max():.4f}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    pipe = build_pipeline(cfg)
    train_seg, val_seg, _ = pipe.splits
    params = _build_params(cfg, pipe.raw.n_nodes, pipe.raw.n_channels)
    os.makedirs(cfg.out_dir, exist_ok=True)

    def progress(row: training.EpochLog):
        print(f"epoch {row.epoch}: train_l1={row.train_l1:.6f} "
              f"val_l1={row.val_l1:.6f} ({row.seconds:.1f}s)", flush=True)

    best, logs = training.train(params, train_seg, val_seg, cfg.train_config(),
                                config_echo=cfg.echo(), progress=progress)
    ckpt_path = os.path.join(cfg.out_dir, "checkpoint.txt")
    training.save_checkpoint(best, ckpt_path)
    _write_csv(os.path.join(cfg.out_dir, "train_log.csv"), training.LOG_HEADER,
               [row.as_csv_row() for row in logs])
    print(f"best epoch {best.epoch} val_l1={best.best_val_l1:.6f} -> {ckpt_path}")
    return EXIT_OK


def _restored_params(cfg: RunConfig, pipe, checkpoint_path: str) -> ModelParams:
    params = _build_params(cfg, pipe.raw.n_nodes, pipe.raw.n_channels)
    ckpt = training.load_checkpoint(checkpoint_path)
    training.restore_params(params, ckpt)
    return params


def cmd_eval(cfg: RunConfig, checkpoint_path: str) -> int:
    pipe = build_pipeline(cfg)
    params = _restored_params(cfg, pipe, checkpoint_path)
    rng = np.random.default_rng(cfg.seed)
    report = training.evaluate(params, pipe.splits[2], pipe.stats,
                               batch_size=cfg.train_config().batch_size,
                               mape_threshold=cfg.mape_threshold(), rng=rng)
    hp = params.hyper
    base = training.baseline_reports(pipe.raw.values, pipe.offsets[2],
                                     hp.t_in, hp.horizon, period=cfg.period(),
                                     mape_threshold=cfg.mape_threshold())
    os.makedirs(cfg.out_dir, exist_ok=True)
    _write_csv(os.path.join(cfg.out_dir, "metrics.csv"), "mae,rmse,mape",
               [f"{_fmt(report.overall.mae)},{_fmt(report.overall.rmse)},"
                f"{_fmt(report.overall.mape)}"])
    _write_csv(os.path.join(cfg.out_dir, "per_horizon.csv"), "horizon,mae,rmse,mape",
               [f"{h + 1},{_fmt(m.mae)},{_fmt(m.rmse)},{_fmt(m.mape)}"
                for h, m in enumerate(report.per_horizon)])
    _write_csv(os.path.join(cfg.out_dir, "baselines.csv"), "baseline,mae,rmse,mape",
               [f"{name},{_fmt(m.mae)},{_fmt(m.rmse)},{_fmt(m.mape)}"
                for name, m in base.items()])
    lines = [
        f"test windows: {report.n_windows}",
        f"model:              MAE={report.overall.mae:.6f} RMSE={report.overall.rmse:.6f} "
        f"MAPE={'n/a' if report.overall.mape is None else f'{report.overall.mape:.4f}%'}",
    ]
    for name, m in base.items():
        lines.append(f"{name + ':':<19} MAE={m.mae:.6f} RMSE={m.rmse:.6f} "
                     f"MAPE={'n/a' if m.mape is None else f'{m.mape:.4f}%'}")
    summary = "\n".join(lines)
    with open(os.path.join(cfg.out_dir, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(summary + "\n")
    print(summary)
    return EXIT_OK


def cmd_inspect(cfg: RunConfig, checkpoint_path: str, sample_index: int) -> int:
    pipe = build_pipeline(cfg)
    params = _restored_params(cfg, pipe, checkpoint_path)
    if not params.uses_selector_scores():
        raise ConfigError("inspect needs ablation.selector=fft and cross graphs on")
    hp = params.hyper
    test_seg = pipe.splits[2]
    n_windows = dio.window_count(test_seg.shape[0], hp.t_in, hp.horizon)
    if not 0 <= sample_index < n_windows:
        raise ConfigError(
            f"sample index {sample_index} out of range [0, {n_windows})")
    window = test_seg[sample_index:sample_index + hp.t_in]  # T x N x C
    inputs = window[None, ...]

    os.makedirs(cfg.out_dir, exist_ok=True)
    with tt.no_grad():
        sel_out = mdl.selector_pass(params, inputs)
        for t in range(hp.t_in):
            if params.ablation.dynamic_spatial:
                a_s = graphs.spatial_graph(graphs.embed_time_step(params.embeddings, t))
            else:
                a_s = graphs.static_spatial_graph(params.embeddings)
            _write_matrix(os.path.join(cfg.out_dir, f"spatial_graph_t{t:02d}.csv"),
                          a_s.data)
    _write_matrix(os.path.join(cfg.out_dir, "attention_scores.csv"),
                  sel_out.m_agg.data[0])
    with open(os.path.join(cfg.out_dir, "selected_indices.csv"), "w",
              encoding="utf-8") as fh:
        for row in sel_out.i_sel[0]:
            fh.write(",".join(str(int(v)) for v in row) + "\n")
    _write_matrix(os.path.join(cfg.out_dir, "selected_weights.csv"),
                  sel_out.w_sel.data[0])
    print(f"wrote {hp.t_in + 3} files to {cfg.out_dir}")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    epilog = "\n".join(config_help_lines())
    parser = argparse.ArgumentParser(
        prog="dstcgcn",
        description="Traffic forecasting with dynamic spatial-temporal cross graphs.",
        epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="FILE", default=None,
                       help="flat key=value config file")
        p.add_argument("-o", "--set", metavar="KEY=VALUE", action="append",
                       default=[], dest="overrides",
                       help="override a config key (repeatable)")

    p_synth = sub.add_parser("synth", help="write a synthetic dataset CSV",
                             epilog=epilog,
                             formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p_synth)
    p_train = sub.add_parser("train", help="train and checkpoint the best model",
                             epilog=epilog,
                             formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p_train)
    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on the test split",
                            epilog=epilog,
                            formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True, metavar="FILE")
    p_inspect = sub.add_parser("inspect",
                               help="dump attention scores and spatial graphs",
                               epilog=epilog,
                               formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p_inspect)
    p_inspect.add_argument("--checkpoint", required=True, metavar="FILE")
    p_inspect.add_argument("--sample", type=int, default=0, metavar="INDEX",
                           help="test-split window index to analyze")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config, args.overrides)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint)
        if args.command == "inspect":
            return cmd_inspect(cfg, args.checkpoint, args.sample)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, ParseError, CheckpointError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as exc:
        print(f"non-finite abort: {exc}", file=sys.stderr)
        return EXIT_NONFINITE


if __name__ == "__main__":
    sys.exit(main())
