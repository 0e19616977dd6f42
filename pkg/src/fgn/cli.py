"""Command-line front end: synth | train | eval | ablate | bench.

Run configuration is a JSON document with ``model``, ``train``, ``data``
sections plus top-level ``seed`` and ``horizons``; unknown keys anywhere
are hard errors. Flags override file values; FGN_SEED overrides both.
All outputs land under --out with fixed filenames (checkpoint.fgn,
trace.json, report.json, report.txt).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .data import TARGET_COLUMN, load_csv, make_windows, save_csv, synth_gait
from .errors import CheckpointError, ConfigError, DataError, DivergenceError, FgnError
from .metrics import DEFAULT_HORIZONS, bench_inference, evaluate, render_ablation, run_ablation
from .models import ModelConfig, build_model
from .tensor import Tensor
from .training import (TrainRunConfig, load_checkpoint, save_checkpoint,
                       split_validation, train_restarts)

CHECKPOINT_NAME = "checkpoint.fgn"
TRACE_NAME = "trace.json"
REPORT_JSON = "report.json"
REPORT_TEXT = "report.txt"

_DATA_KEYS = {"path", "feature_columns", "target_column", "stride", "split",
              "include_target_history", "label_len"}
_TOP_KEYS = {"model", "train", "data", "seed", "horizons", "out_dir"}


def _check_keys(d: dict, allowed: set, where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def load_run_config(path) -> dict:
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    _check_keys(doc, _TOP_KEYS, "run config")
    _check_keys(doc.get("data", {}), _DATA_KEYS, "data section")
    _check_keys(doc.get("train", {}), set(TrainRunConfig.__dataclass_fields__),
                "train section")
    # model section validated by ModelConfig.from_dict
    return doc


def _resolve_seed(doc: dict, args) -> int:
    env = os.environ.get("FGN_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"FGN_SEED must be an integer, got {env!r}") from None
    if getattr(args, "seed", None) is not None:
        return args.seed
    return int(doc.get("seed", 0))


def _load_windows(doc: dict, model_cfg: ModelConfig, data_path=None):
    data = dict(doc.get("data", {}))
    path = data_path or data.get("path")
    if path is None:
        raise ConfigError("no data path: set data.path in the config or pass --data")
    table = load_csv(path, schema=data.get("feature_columns"))
    return make_windows(
        table,
        lookback=model_cfg.lookback,
        label_len=data.get("label_len", model_cfg.label_len),
        horizon=model_cfg.horizon,
        stride=int(data.get("stride", 1)),
        split=float(data.get("split", 0.8)),
        feature_names=data.get("feature_columns"),
        target_name=data.get("target_column", TARGET_COLUMN),
        include_target_history=bool(data.get("include_target_history", True)),
    )


# -- subcommands -------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.cycles < 1:
        raise ConfigError(f"--cycles must be >= 1, got {args.cycles}")
    table = synth_gait(args.cycles, noise_std=args.noise, seed=args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_csv(table, args.out)
    print(f"wrote {args.out}: {len(table)} rows, {len(table.channel_names)} channels")
    return 0


def cmd_train(args) -> int:
    doc = load_run_config(args.config)
    seed = _resolve_seed(doc, args)
    model_dict = dict(doc.get("model", {}))
    if args.horizon is not None:
        if args.horizon < 1:
            raise ConfigError(f"--horizon must be >= 1, got {args.horizon}")
        model_dict["horizon"] = args.horizon
    if args.variant is not None:
        model_dict["variant"] = args.variant
    if args.ablation is not None:
        model_dict["ablation"] = args.ablation
    cfg = ModelConfig.from_dict(model_dict)

    data = _load_windows(doc, cfg, args.data)
    cfg.target_channel = data.target_channel
    tr, val = split_validation(data.train)
    run_cfg = TrainRunConfig(**{**doc.get("train", {}), "seed": seed})
    result, summary = train_restarts(cfg, tr, val, run_cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.model, cfg, out / CHECKPOINT_NAME)
    (out / TRACE_NAME).write_text(json.dumps(
        {"trace": result.trace, "best_epoch": result.best_epoch,
         "restart_summary": summary, "seed": seed}, indent=2))
    report = evaluate(result.model, data.test, data.stats)
    (out / REPORT_JSON).write_text(json.dumps(
        {"metrics": report.to_dict(), "variant": cfg.variant,
         "ablation": cfg.ablation, "seed": seed}, indent=2))
    (out / REPORT_TEXT).write_text(
        report.row(f"{cfg.variant}/{cfg.ablation}") + "\n"
        f"(MAPE is a fraction; relative errors guarded at {1e-2} deg)\n")
    print(report.row(cfg.variant))
    return 0


def cmd_eval(args) -> int:
    model, cfg = load_checkpoint(args.checkpoint)
    doc = load_run_config(args.config) if args.config else {}
    data = _load_windows(doc, cfg, args.data)
    report = evaluate(model, data.test, data.stats)
    line = report.row(f"{cfg.variant}/{cfg.ablation}")
    print(line)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / REPORT_JSON).write_text(json.dumps(
            {"metrics": report.to_dict(), "variant": cfg.variant,
             "ablation": cfg.ablation}, indent=2))
        (out / REPORT_TEXT).write_text(line + "\n")
    return 0


def cmd_ablate(args) -> int:
    doc = load_run_config(args.config)
    seed = _resolve_seed(doc, args)
    cfg = ModelConfig.from_dict(dict(doc.get("model", {})))
    data_sec = doc.get("data", {})
    if "path" not in data_sec:
        raise ConfigError("ablate needs data.path in the config")
    table = load_csv(data_sec["path"])
    horizons = doc.get("horizons", list(DEFAULT_HORIZONS))
    run_cfg = TrainRunConfig(**{**doc.get("train", {}), "seed": seed})
    rows = run_ablation(cfg, table, horizons=horizons, run_config=run_cfg,
                        stride=int(data_sec.get("stride", 1)))
    text = render_ablation(rows)
    print(text)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / REPORT_JSON).write_text(json.dumps({"rows": rows, "seed": seed}, indent=2))
    (out / REPORT_TEXT).write_text(text + "\n")
    return 0


def cmd_bench(args) -> int:
    model, cfg = load_checkpoint(args.checkpoint)
    rng = np.random.default_rng(0)
    enc = Tensor(rng.standard_normal((args.batch, cfg.lookback, cfg.input_dim))
                 .astype(np.float32))
    dec_len = cfg.label_len + cfg.horizon
    dec = Tensor(rng.standard_normal((args.batch, dec_len, cfg.input_dim))
                 .astype(np.float32))
    stats = bench_inference(model, enc, dec, n_trials=args.trials)
    print(f"inference ms per forward (batch {args.batch}): "
          f"mean {stats['mean']:.3f}  p50 {stats['p50']:.3f}  p95 {stats['p95']:.3f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / REPORT_JSON).write_text(json.dumps(
            {"variant": cfg.variant, "timing_ms": stats, "batch": args.batch}, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fgn", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic gait-style CSV")
    s.add_argument("--out", required=True)
    s.add_argument("--cycles", type=int, default=10)
    s.add_argument("--noise", type=float, default=0.05)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a model and report test metrics")
    s.add_argument("--config", required=True)
    s.add_argument("--data", default=None)
    s.add_argument("--horizon", type=int, default=None)
    s.add_argument("--variant", default=None)
    s.add_argument("--ablation", default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="run the variant-by-horizon ablation grid")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("bench", help="time inference for a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--batch", type=int, default=1)
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, CheckpointError, DivergenceError, FgnError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
