"""Operator surface: gen / train / detect / risk / ablate subcommands.

Every subcommand reads a sectioned config file (see config.py), writes its
artifacts into a per-run output directory, and is idempotent in output
content for a fixed config + seed. Exit codes: 0 success, 2 config error,
3 numeric failure, 4 I/O failure. The only nondeterministic field anywhere
is ``wall_clock_seconds`` inside summary.json.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import detection as detect_mod
from . import linear_risk as risk_mod
from . import model as model_mod
from . import svgplot
from .config import ExperimentConfig, build_dataset, load_experiment_config
from .errors import (
    ConfigError,
    ContractError,
    DataFormatError,
    NumericError,
    SetupError,
    ShapeError,
)
from .seeding import derive_seed
from .training import TrialOutcome, apply_grid_point, run_grid, run_trial

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(cfg: ExperimentConfig, override: str | None) -> Path:
    out = Path(override) if override else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _float_or_none(value: float) -> float | None:
    return None if value is None or not math.isfinite(value) else float(value)


def cmd_gen(args: argparse.Namespace) -> int:
    cfg = load_experiment_config(args.config, args.seed)
    out = _out_dir(cfg, args.out)
    ds = build_dataset(cfg)
    data_mod.save_csv(ds, out / "dataset.csv")
    meta = {
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "n": ds.n,
        "feature_dim": ds.feature_dim,
        "pi_dim": ds.pi_dim,
        "num_classes": ds.num_classes,
        "split_sizes": {
            name: int(ds.split_indices(name).size) for name in data_mod.SPLIT_NAMES
        },
    }
    if ds.has_clean_labels:
        train_size = ds.split_indices(data_mod.SPLIT_TRAIN).size
        meta["realized_noise_rate"] = (
            ds.realized_noise_rate() if train_size else float(ds.is_wrong.mean())
        )
    data_mod.save_metadata(out / "dataset_meta.json", meta)
    print(f"wrote {out / 'dataset.csv'} ({ds.n} rows)")
    return EXIT_OK


def _dynamics_plot(out: Path, name: str, record) -> None:
    epochs = list(range(len(record)))
    svgplot.line_chart(
        out / f"{name}_dynamics.svg",
        "training dynamics",
        "epoch",
        "accuracy",
        [
            ("pred net, clean labels", epochs, record.pred_acc_clean),
            ("pred net, wrong labels", epochs, record.pred_acc_wrong),
            ("noise net, clean labels", epochs, record.noise_acc_clean),
            ("noise net, wrong labels", epochs, record.noise_acc_wrong),
            ("clean test", epochs, record.clean_test_acc),
            ("noisy val", epochs, record.noisy_val_acc),
        ],
        y_range=(0.0, 1.0),
    )


def _detection_outputs(out: Path, model, ds, methods: list[str]) -> dict[str, float]:
    aucs: dict[str, float] = {}
    for method in methods:
        if method == "gate" and not model.flags.use_gate:
            continue
        report = detect_mod.detect(model, ds, method)
        report.to_json(out / f"detection_{method}.json")
        svgplot.paired_histogram(
            out / f"detection_{method}_hist.svg",
            f"{method} score distribution (train split)",
            f"{method} score",
            report.bin_edges,
            report.clean_counts.tolist(),
            report.wrong_counts.tolist(),
            "clean labels",
            "wrong labels",
        )
        aucs[method] = report.auc
    return aucs


def _trial_doc(t: TrialOutcome) -> dict:
    return {
        "index": t.index,
        "params": t.params,
        "seed": t.seed,
        "status": t.status,
        "error": t.error,
        "best_epoch": t.best_epoch,
        "best_noisy_val_acc": _float_or_none(t.best_noisy_val_acc),
        "clean_test_at_best": _float_or_none(t.clean_test_at_best),
        "clean_test_final": _float_or_none(t.clean_test_final),
    }


def cmd_train(args: argparse.Namespace) -> int:
    started = time.monotonic()
    cfg = load_experiment_config(args.config, args.seed)
    out = _out_dir(cfg, args.out)
    ds = build_dataset(cfg)

    trials: list[TrialOutcome]
    if cfg.grid is not None:
        trials = run_grid(cfg.grid, ds, cfg.train, cfg.model, workers=args.workers)
        for t in trials:
            if t.record is not None:
                t.record.to_csv(out / f"trial_{t.index:03d}_record.csv")
        winners = [t for t in trials if t.status == "ok"]
        if not winners:
            raise NumericError("every grid trial failed")
        selected = winners[0]
        sel_cfg, sel_model_cfg = _apply_selected(cfg, selected)
        result, ds_used = run_trial(ds, sel_model_cfg, sel_cfg)
    else:
        result, ds_used = run_trial(ds, cfg.model, cfg.train)
        rec = result.record
        selected = TrialOutcome(
            index=0,
            params={},
            seed=cfg.train.seed,
            status="ok",
            best_epoch=result.best_epoch,
            best_noisy_val_acc=float(rec.noisy_val_acc[result.best_epoch]),
            clean_test_at_best=float(rec.clean_test_acc[result.best_epoch]),
            clean_test_final=float(rec.clean_test_acc[-1]),
            record=rec,
        )
        trials = [selected]
        result.record.to_csv(out / "trial_000_record.csv")

    chosen_model = result.best_model if cfg.train.early_stopping else result.final_model
    model_mod.save_checkpoint(chosen_model, out / "best_checkpoint.json")
    _dynamics_plot(out, "selected", result.record)
    aucs: dict[str, float] = {}
    if ds_used.has_clean_labels:
        aucs = _detection_outputs(out, chosen_model, ds_used, cfg.detection_methods)

    summary = {
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "seed_streams": {
            "data": derive_seed(cfg.seed, "data"),
            "split": derive_seed(cfg.seed, "split"),
            "train": derive_seed(cfg.seed, "train"),
        },
        "trials": [_trial_doc(t) for t in trials],
        "selected_trial": selected.index,
        "selected_epoch": selected.best_epoch if cfg.train.early_stopping else len(result.record) - 1,
        "early_stopping": cfg.train.early_stopping,
        "detection_auc": aucs,
        "wall_clock_seconds": round(time.monotonic() - started, 3),
    }
    _write_json(out / "summary.json", summary)
    print(
        f"selected trial {selected.index}: noisy_val={selected.best_noisy_val_acc:.4f} "
        f"clean_test={selected.clean_test_at_best:.4f} (epoch {selected.best_epoch})"
    )
    return EXIT_OK


def _apply_selected(cfg: ExperimentConfig, trial: TrialOutcome):
    sel_cfg, sel_model_cfg = apply_grid_point(cfg.train, cfg.model, trial.params)
    return replace(sel_cfg, seed=trial.seed), sel_model_cfg


def cmd_detect(args: argparse.Namespace) -> int:
    model = model_mod.load_checkpoint(args.checkpoint)
    ds = data_mod.load_csv(args.data)
    if not ds.has_clean_labels:
        raise ConfigError(
            "dataset has no clean_label column: detection AUC needs ground truth"
        )
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for method in methods:
        if method not in ("confidence", "gate"):
            raise ConfigError(f"unknown detection method {method!r}")
    aucs = _detection_outputs(out, model, ds, methods)
    for method, auc in aucs.items():
        print(f"{method} AUC: {auc:.4f}")
    return EXIT_OK


def cmd_risk(args: argparse.Namespace) -> int:
    cfg = load_experiment_config(args.config, args.seed)
    out = _out_dir(cfg, args.out)
    r = cfg.risk
    base_seed = derive_seed(cfg.seed, "risk")

    def one_row(setup_id: str, setup, fit_mask) -> list[str]:
        comparison = risk_mod.compare_risks(setup, fit_mask)
        mc_ols = mc_pi = None
        if r.resamples > 0:
            mc_ols = risk_mod.monte_carlo_risk(
                setup, risk_mod.ESTIMATOR_OLS, r.resamples, derive_seed(base_seed, setup_id, "ols")
            )
            mc_pi = risk_mod.monte_carlo_risk(
                setup,
                risk_mod.ESTIMATOR_PIDUAL,
                r.resamples,
                derive_seed(base_seed, setup_id, "pidual"),
                fit_mask=fit_mask,
            )
        return risk_mod.risk_row(setup_id, setup, comparison, mc_ols, mc_pi)

    rows = []
    sweep_points: list[float] = []
    if r.sweep == "none":
        setup = risk_mod.make_setup(
            r.n, r.d, r.m, r.n_clean, r.sigma, base_seed, r.coef_scale, r.pi_coef_scale
        )
        rows.append(one_row("base", setup, setup.clean_mask))
        sweep_points = [0.0]
    elif r.sweep == "corruption":
        setup = risk_mod.make_setup(
            r.n, r.d, r.m, r.n_clean, r.sigma, base_seed, r.coef_scale, r.pi_coef_scale
        )
        for value in r.sweep_values:
            flips = int(value)
            mask = risk_mod.corrupt_mask(
                setup.clean_mask, flips, derive_seed(base_seed, "corrupt", flips)
            )
            rows.append(one_row(f"corrupt_{flips}", setup, mask))
            sweep_points.append(flips)
    elif r.sweep == "n2":
        for value in r.sweep_values:
            n2 = int(value)
            setup = risk_mod.make_setup(
                r.n, r.d, r.m, r.n - n2, r.sigma, derive_seed(base_seed, "n2", n2),
                r.coef_scale, r.pi_coef_scale,
            )
            rows.append(one_row(f"n2_{n2}", setup, setup.clean_mask))
            sweep_points.append(n2)
    else:  # sigma sweep over a fixed design
        for value in r.sweep_values:
            setup = risk_mod.make_setup(
                r.n, r.d, r.m, r.n_clean, value, base_seed, r.coef_scale, r.pi_coef_scale
            )
            rows.append(one_row(f"sigma_{value:g}", setup, setup.clean_mask))
            sweep_points.append(value)

    risk_mod.write_risk_csv(out / "risk.csv", rows)
    cols = {name: i for i, name in enumerate(risk_mod.RISK_CSV_COLUMNS)}
    series = [
        ("OLS closed form", sweep_points, [float(row[cols["ols_total"]]) for row in rows]),
        ("gated closed form", sweep_points, [float(row[cols["pidual_total"]]) for row in rows]),
    ]
    if r.resamples > 0:
        series.append(
            ("OLS Monte Carlo", sweep_points, [float(row[cols["mc_ols"]]) for row in rows])
        )
        series.append(
            ("gated Monte Carlo", sweep_points, [float(row[cols["mc_pidual"]]) for row in rows])
        )
    svgplot.line_chart(
        out / "risk.svg", "expected risk on clean targets", r.sweep, "risk", series
    )
    print(f"wrote {out / 'risk.csv'} ({len(rows)} rows)")
    return EXIT_OK


ABLATION_VARIANTS = (
    ("cross_entropy", {"use_gate": False, "use_noise_net": False}, False),
    ("pidual_full", {}, False),
    ("no_gating", {"use_gate": False}, False),
    ("no_noise_net", {"use_noise_net": False}, False),
    ("gate_prob_space", {"gate_space": model_mod.GATE_SPACE_PROBABILITY}, False),
    ("only_random_pi", {}, True),
    ("noise_with_features", {"noise_input": model_mod.NOISE_INPUT_PI_AND_X}, False),
)


def run_ablation(cfg: ExperimentConfig, ds) -> list[dict]:
    """Train every ablation variant under a shared seed and protocol."""
    results = []
    for name, flag_over, strip in ABLATION_VARIANTS:
        model_cfg = replace(cfg.model, flags=replace(cfg.model.flags, **flag_over))
        variant_ds = data_mod.strip_pi(ds) if strip else ds
        result, _ = run_trial(variant_ds, model_cfg, cfg.train)
        rec = result.record
        results.append(
            {
                "variant": name,
                "best_epoch": result.best_epoch,
                "best_noisy_val_acc": float(rec.noisy_val_acc[result.best_epoch]),
                "clean_test_at_best": float(rec.clean_test_acc[result.best_epoch]),
                "clean_test_final": float(rec.clean_test_acc[-1]),
                "record": rec,
            }
        )
    results.sort(key=lambda r: (-r["clean_test_at_best"], r["variant"]))
    return results


def cmd_ablate(args: argparse.Namespace) -> int:
    started = time.monotonic()
    cfg = load_experiment_config(args.config, args.seed)
    out = _out_dir(cfg, args.out)
    ds = build_dataset(cfg)
    results = run_ablation(cfg, ds)

    with (out / "ablation.csv").open("w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ("rank", "variant", "best_epoch", "best_noisy_val_acc",
             "clean_test_at_best", "clean_test_final")
        )
        for rank, row in enumerate(results, start=1):
            writer.writerow(
                (
                    rank,
                    row["variant"],
                    row["best_epoch"],
                    repr(row["best_noisy_val_acc"]),
                    repr(row["clean_test_at_best"]),
                    repr(row["clean_test_final"]),
                )
            )
    for row in results:
        row["record"].to_csv(out / f"ablation_{row['variant']}_record.csv")
    summary = {
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "variants": [
            {k: v for k, v in row.items() if k != "record"} for row in results
        ],
        "wall_clock_seconds": round(time.monotonic() - started, 3),
    }
    _write_json(out / "summary.json", summary)
    for rank, row in enumerate(results, start=1):
        print(
            f"{rank}. {row['variant']}: clean_test={row['clean_test_at_best']:.4f} "
            f"(final {row['clean_test_final']:.4f})"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pidual",
        description="Noisy-label training with privileged information: data "
        "generation, gated dual-network training, wrong-label detection, and "
        "linear risk analysis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="override the top-level seed")
        p.add_argument("--workers", type=int, default=1, help="parallel trial workers")

    p_gen = sub.add_parser("gen", help="generate a dataset CSV + metadata sidecar")
    common(p_gen)
    p_gen.set_defaults(func=cmd_gen)

    p_train = sub.add_parser("train", help="train a single trial or a grid")
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_detect = sub.add_parser("detect", help="score wrong-label detection on a train split")
    p_detect.add_argument("--checkpoint", required=True)
    p_detect.add_argument("--data", required=True, help="dataset CSV with clean labels")
    p_detect.add_argument("--methods", default="confidence,gate")
    p_detect.add_argument("--out", required=True)
    p_detect.set_defaults(func=cmd_detect)

    p_risk = sub.add_parser("risk", help="closed-form vs Monte-Carlo risk comparison")
    common(p_risk)
    p_risk.set_defaults(func=cmd_risk)

    p_ablate = sub.add_parser("ablate", help="train all architecture ablations")
    common(p_ablate)
    p_ablate.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SetupError as exc:
        print(f"setup error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, ShapeError, ContractError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataFormatError, OSError) as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
