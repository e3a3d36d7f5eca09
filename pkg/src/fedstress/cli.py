"""Command-line front end.

Subcommands: gen-data, extract-features, pretrain, run, sweep-epsilon,
evaluate. Exit codes: 0 success, 2 configuration error, 3 data error,
4 runtime failure. Every subcommand writes only inside its --out
directory, and checkpoints land via write-to-temp-then-rename so a failed
run never leaves a partial checkpoint behind.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, config_to_dict, load_config
from .data import binarize_dataset, load_dataset_csv, write_dataset_csv, generate_cohort
from .errors import ConfigError, DataError, InsufficientDataError
from .hrv import PpgSignal, features_from_ppg
from .pipeline import (TrainedArtifact, _atomic_write_text, evaluate_model,
                       load_checkpoint, pretrain_only, render_report, run_mode,
                       sweep_epsilon, write_roc_csv)

logger = logging.getLogger(__name__)

DEFAULT_EPSILONS = "0.5,1,off"
DEFAULT_WINDOW_S = 120.0


def _load_experiment_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "mode", None) is not None:
        cfg = replace(cfg, mode=args.mode)
    return cfg


def _parse_epsilons(text: str) -> list:
    out = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if token == "off":
            out.append("off")
            continue
        try:
            eps = float(token)
        except ValueError:
            raise ConfigError(f"bad epsilon {token!r}; use numbers or 'off'")
        if not eps > 0:
            raise ConfigError(f"epsilon must be positive, got {eps}")
        out.append(eps)
    if not out:
        raise ConfigError("empty epsilon list")
    return out


# -- subcommand bodies ---------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _load_experiment_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.data.pretrain_csv or cfg.data.finetune_csv:
        raise ConfigError("data sources are CSV paths; nothing to generate")
    for role, spec, name in (
        ("pretrain", cfg.data.pretrain_cohort, "pretrain.csv"),
        ("finetune", cfg.data.finetune_cohort, "finetune.csv"),
    ):
        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
        ds = generate_cohort(spec, role=role)
        write_dataset_csv(ds, out / name)
        logger.info("wrote %s (%d samples, %d users)", out / name, ds.n,
                    len(set(ds.user_ids.tolist())))
    return 0


def _read_raw_signal_csv(path: Path):
    """Raw schema: time_ms,ppg[,accel_x,accel_y,accel_z][,stress_level]."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        cols = [h.strip() for h in header]
        if cols[:2] != ["time_ms", "ppg"]:
            raise DataError(f"{path}: header must start with time_ms,ppg, got {cols[:2]}")
        has_accel = cols[2:5] == ["accel_x", "accel_y", "accel_z"]
        label_idx = cols.index("stress_level") if "stress_level" in cols else None
        times, ppg, accel, labels = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                times.append(float(row[0]))
                ppg.append(float(row[1]))
                if has_accel:
                    accel.append([float(row[2]), float(row[3]), float(row[4])])
                if label_idx is not None:
                    cell = row[label_idx].strip()
                    labels.append(int(cell) if cell else None)
                else:
                    labels.append(None)
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    if len(times) < 3:
        raise DataError(f"{path}: too few samples ({len(times)})")
    times = np.asarray(times)
    steps = np.diff(times)
    if np.any(steps <= 0):
        raise DataError(f"{path}: time_ms must be strictly increasing")
    fs = 1000.0 / float(np.median(steps))
    accel_mag = None
    if has_accel:
        a = np.asarray(accel)
        accel_mag = np.sqrt((a * a).sum(axis=1))
    return times, np.asarray(ppg), accel_mag, labels, fs


def cmd_extract_features(args) -> int:
    src = Path(args.input)
    if not src.exists():
        raise DataError(f"input file not found: {src}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    times, ppg, accel_mag, labels, fs = _read_raw_signal_csv(src)
    window_ms = args.window_s * 1000.0

    prompts = [(t, lvl) for t, lvl in zip(times, labels) if lvl is not None]
    if not prompts:
        # No momentary labels: fall back to fixed consecutive windows. The
        # emitted rows have empty stress cells and are for inspection only.
        logger.warning("%s: no stress_level prompts; emitting fixed %gs windows",
                       src, args.window_s)
        edges = np.arange(times[0] + window_ms, times[-1] + 1e-9, window_ms)
        prompts = [(float(t), None) for t in edges]

    user_id = args.user_id or src.stem
    rows = []
    skipped = 0
    for prompt_t, level in prompts:
        mask = (times > prompt_t - window_ms) & (times <= prompt_t)
        if mask.sum() < 3:
            skipped += 1
            continue
        sig = PpgSignal(ppg[mask], fs)
        window_accel = accel_mag[mask] if accel_mag is not None else None
        try:
            feats = features_from_ppg(sig, accel=window_accel)
        except (InsufficientDataError, ConfigError):
            skipped += 1
            continue
        vector = feats.as_vector(include_br=args.include_br)
        if not np.all(np.isfinite(vector)):
            skipped += 1
            continue
        rows.append((user_id, int(prompt_t), vector, level))
    if skipped:
        logger.warning("%s: skipped %d windows with insufficient signal", src, skipped)
    if not rows:
        raise DataError(f"{src}: no usable feature windows")

    width = len(rows[0][2])
    dest = out / "features.csv"
    with open(dest, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "timestamp_ms",
                         *[f"f{i + 1}" for i in range(width)], "stress_level"])
        for uid, ts, vector, level in rows:
            writer.writerow([uid, ts, *[repr(float(v)) for v in vector],
                             "" if level is None else level])
    logger.info("wrote %s (%d rows)", dest, len(rows))
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load_experiment_config(args)
    artifact = pretrain_only(cfg)
    artifact.save(args.out)
    logger.info("pre-trained model saved under %s", args.out)
    return 0


def cmd_run(args) -> int:
    cfg = _load_experiment_config(args)
    artifact = run_mode(cfg)
    artifact.save(args.out)
    print(render_report([artifact.metrics]), end="")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_experiment_config(args)
    epsilons = _parse_epsilons(args.epsilons)
    results = sweep_epsilon(cfg, epsilons)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name in sorted(results):
        entry = results[name]
        if entry.roc_curve is not None:
            write_roc_csv(out / f"roc_{name}.csv", entry.roc_curve)
        row = dict(entry.metrics)
        row["mode"] = name
        rows.append(row)
    doc = {
        "config": config_to_dict(cfg),
        "settings": {name: results[name].metrics for name in sorted(results)},
    }
    _atomic_write_text(out / "metrics.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _atomic_write_text(out / "report.txt", render_report(rows))
    print(render_report(rows), end="")
    return 0


def cmd_evaluate(args) -> int:
    model, bounds = load_checkpoint(args.checkpoint)
    ds = load_dataset_csv(args.test_csv)
    labeled = binarize_dataset(ds)
    if labeled.feature_width != model.layer_dims[0]:
        raise DataError(
            f"{args.test_csv}: {labeled.feature_width} features per row, "
            f"model expects {model.layer_dims[0]}"
        )
    metrics, curve = evaluate_model(model, bounds.transform(labeled.features),
                                    labeled.labels)
    metrics["mode"] = "evaluate"
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write_text(out / "metrics.json",
                       json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    _atomic_write_text(out / "report.txt", render_report([metrics]))
    if curve is not None:
        write_roc_csv(out / "roc.csv", curve)
    print(render_report([metrics]), end="")
    return 0


# -- argument parsing ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedstress",
        description="Differentially private federated transfer learning "
                    "for stress detection.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for info, -vv for debug")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="JSON experiment config")
            p.add_argument("--seed", type=int, help="seed override (flag > config)")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("gen-data", help="write synthetic cohort CSVs")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("extract-features", help="raw PPG CSV -> feature CSV")
    p.add_argument("--input", required=True, help="raw signal CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--user-id", help="user id for emitted rows (default: file stem)")
    p.add_argument("--window-s", type=float, default=DEFAULT_WINDOW_S,
                   help="feature window length in seconds before each prompt")
    p.add_argument("--include-br", action="store_true",
                   help="emit the breathing-rate column (13 features)")
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("pretrain", help="pre-train and checkpoint the model")
    common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("run", help="run one experiment mode")
    common(p)
    p.add_argument("--mode", choices=("plain", "pretrained", "finetuned"),
                   help="mode override")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-epsilon", help="fine-tune across privacy budgets")
    common(p)
    p.add_argument("--epsilons", default=DEFAULT_EPSILONS,
                   help="comma list of budgets; 'off' disables the mechanism")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("evaluate", help="metrics from a checkpoint and a test CSV")
    p.add_argument("--checkpoint", required=True, help="model.ckpt path")
    p.add_argument("--test-csv", required=True, help="feature CSV to score")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING
    if args.verbose == 1:
        level = logging.INFO
    elif args.verbose >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return 2
    except DataError as exc:
        logger.error("data error: %s", exc)
        return 3
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        if args.verbose:
            logger.exception("runtime failure")
        else:
            logger.error("runtime failure: %s", exc)
        return 4


if __name__ == "__main__":
    sys.exit(main())
