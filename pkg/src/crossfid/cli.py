"""Command-line interface: generate datasets, run the random-measurement
baselines, train the model, and evaluate it.

Exit codes: 0 ok, 2 configuration error, 3 resource limit, 4 numeric failure.
Every command writes its resolved configuration next to its outputs, and all
numeric output is locale-independent with 17 significant digits.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .circuits import BUILTIN_PROFILES, DeviceProfile, builtin_profile
from .datapipe import Dataset, build_dataset, compute_metrics, export_representations, fmt
from .errors import NumericError, ResourceLimitError
from .estimators import (
    CrossCorrelationFidelityEstimator,
    ShadowFidelityEstimator,
    dataset_prob_table_pairs,
    dataset_snapshot_pairs,
)
from .nn import load_checkpoint
from .model import FidelityModel, ModelConfig
from .training import (
    TrainConfig,
    predict_records,
    prepare_states,
    resolve_model_config,
    save_history,
    save_model,
    train_two_stage,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RESOURCE = 3
EXIT_NUMERIC = 4


class ConfigError(ValueError):
    pass


def _write_run_config(out_dir: Path, payload: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(out_dir / "run_config.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def _load_profile(spec: str, n_qubits: int) -> DeviceProfile:
    if spec in BUILTIN_PROFILES:
        return builtin_profile(spec, n_qubits)
    path = Path(spec)
    if not path.exists():
        raise ConfigError(
            f"--profile {spec!r} is neither a builtin ({', '.join(BUILTIN_PROFILES)}) "
            "nor an existing JSON file"
        )
    return DeviceProfile.load(path)


def _load_json_config(path: str | None, allowed: set[str]) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}; allowed: {sorted(allowed)}")
    return obj


# --------------------------------------------------------------------------
# gen


def _cmd_gen(args) -> int:
    if args.profile is None:
        raise ConfigError("--profile is required (builtin name or JSON path)")
    profile = _load_profile(args.profile, args.qubits)
    out_dir = Path(args.out)
    _write_run_config(
        out_dir,
        {
            "command": "gen",
            "qubits": args.qubits,
            "circuits": args.circuits,
            "levels": args.levels,
            "shots": args.shots,
            "layers": args.layers,
            "level_min": args.level_min,
            "level_max": args.level_max,
            "profile": args.profile,
            "seed": args.seed,
            "threads": args.threads,
        },
    )
    dataset = build_dataset(
        out_dir,
        n_qubits=args.qubits,
        n_circuits=args.circuits,
        noise_levels=args.levels,
        m_shots=args.shots,
        seed=args.seed,
        profile=profile,
        layers=args.layers,
        level_range=(args.level_min, args.level_max),
        threads=args.threads,
    )
    print(f"wrote {len(dataset.records)} records to {out_dir}")
    return EXIT_OK


# --------------------------------------------------------------------------
# baseline


def _cmd_baseline(args) -> int:
    dataset = Dataset(args.dataset)
    out_dir = Path(args.out)
    _write_run_config(
        out_dir,
        {
            "command": "baseline",
            "method": args.method,
            "dataset": str(args.dataset),
            "shots_override": args.shots_override,
            "settings": args.settings,
            "shots_per_setting": args.shots_per_setting,
            "include_diagonal": args.include_diagonal,
            "seed": args.seed,
        },
    )
    if args.method == "cs":
        pairs = dataset_snapshot_pairs(
            dataset, shots_override=args.shots_override, seed=args.seed
        )
        estimates = ShadowFidelityEstimator(
            include_diagonal=args.include_diagonal
        ).predict(pairs)
    elif args.method == "cc":
        pairs = dataset_prob_table_pairs(
            dataset,
            n_settings=args.settings,
            shots_per_setting=args.shots_per_setting,
            seed=args.seed,
        )
        estimates = CrossCorrelationFidelityEstimator().predict(pairs)
    else:
        raise ConfigError(f"unknown method {args.method!r}; choose cs or cc")
    labels = dataset.record_labels()
    with open(out_dir / "estimates.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["record_id", "label", "estimate"])
        for rec, label, est in zip(dataset.records, labels, estimates):
            writer.writerow([rec.record_id, fmt(label), fmt(est)])
    report = compute_metrics(estimates, labels)
    with open(out_dir / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=2, sort_keys=True)
    print(
        f"{args.method} baseline on {report.count} records: "
        f"mse={fmt(report.mse)} r2={fmt(report.r2)}"
    )
    return EXIT_OK


# --------------------------------------------------------------------------
# train

_TRAIN_CONFIG_KEYS = {
    "model",
    "lr_stage1",
    "lr_stage2",
    "epochs_measurement",
    "epochs_circuit",
    "epochs_finetune",
    "batch_size",
    "test_fraction",
    "seed",
    "freeze_branches",
    "record_subsample",
}

_STAGE_DIRS = {"measurement": "branch_mea", "circuit": "branch_circ", "finetune": "finetune"}
_STAGE_BY_FLAG = {"branch-mea": "measurement", "branch-circ": "circuit", "finetune": "finetune"}


def _merged_branch_model(out_dir: Path, config: TrainConfig, dataset: Dataset) -> FidelityModel:
    """Fine-tuning start point: branch weights from the stage-one checkpoints,
    fusion freshly initialized."""
    from .validation import child_rng

    states = prepare_states(dataset, include_noise_suffix=config.model.include_noise_suffix)
    model_config = resolve_model_config(config.model, states)
    model = FidelityModel(model_config, rng=child_rng(config.seed, 4))
    for stage, prefix in (("measurement", "measurement."), ("circuit", "circuit.")):
        ckpt_dir = out_dir / _STAGE_DIRS[stage]
        if not (ckpt_dir / "manifest.json").exists():
            raise ConfigError(
                f"missing checkpoint {ckpt_dir}; run --stage "
                f"{'branch-mea' if stage == 'measurement' else 'branch-circ'} first"
            )
        arrays, _ = load_checkpoint(ckpt_dir)
        model.load_state_arrays(
            {k: v for k, v in arrays.items() if k.startswith(prefix)}
        )
    return model


def _cmd_train(args) -> int:
    dataset = Dataset(args.dataset)
    raw = _load_json_config(args.config, _TRAIN_CONFIG_KEYS)
    if "model" not in raw:
        raw["model"] = {"n_qubits": dataset.n_qubits, "dim": 64}
    raw["model"].setdefault("n_qubits", dataset.n_qubits)
    config = TrainConfig.from_json(raw)
    if args.seed is not None:
        config.seed = args.seed
    out_dir = Path(args.out)
    _write_run_config(
        out_dir,
        {
            "command": "train",
            "dataset": str(args.dataset),
            "stage": args.stage,
            **config.to_json(),
        },
    )

    if args.stage == "all":
        stages = ("measurement", "circuit", "finetune")
        model, history = train_two_stage(dataset, config, stages=stages)
    else:
        stage = _STAGE_BY_FLAG[args.stage]
        model = _merged_branch_model(out_dir, config, dataset) if stage == "finetune" else None
        model, history = train_two_stage(dataset, config, stages=(stage,), model=model)
        stages = (stage,)

    for stage in stages:
        stage_dir = out_dir / _STAGE_DIRS[stage]
        rows = [h for h in history if h["stage"] == stage]
        mode = {"measurement": "measurement", "circuit": "circuit", "finetune": "fused"}[stage]
        save_model(stage_dir, model, extra={"stage": stage, "predict_mode": mode})
        save_history(stage_dir / "history.csv", rows)
    if "finetune" in stages:
        save_model(out_dir / "model", model, extra={"stage": "final", "predict_mode": "fused"})
    last = history[-1]
    print(
        f"trained stages {', '.join(stages)}: final test mse={fmt(last['test_mse'])} "
        f"r2={fmt(last['test_r2'])}"
    )
    return EXIT_OK


# --------------------------------------------------------------------------
# eval


def _cmd_eval(args) -> int:
    dataset = Dataset(args.dataset)
    arrays, manifest = load_checkpoint(args.model)
    config = ModelConfig.from_json(manifest["config"])
    model = FidelityModel(config, rng=0)
    model.load_state_arrays(arrays)
    mode = manifest.get("predict_mode", "fused")
    out_dir = Path(args.out)
    _write_run_config(
        out_dir,
        {
            "command": "eval",
            "model": str(args.model),
            "dataset": str(args.dataset),
            "emit_repr": bool(args.emit_repr),
            "predict_mode": mode,
        },
    )
    states = prepare_states(dataset, include_noise_suffix=config.include_noise_suffix)
    preds = predict_records(model, states, dataset.records, mode=mode)
    labels = dataset.record_labels()
    with open(out_dir / "predictions.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["record_id", "label", "prediction"])
        for rec, label, pred in zip(dataset.records, labels, preds):
            writer.writerow([rec.record_id, fmt(label), fmt(pred)])
    report = compute_metrics(preds, labels)
    with open(out_dir / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=2, sort_keys=True)
    if args.emit_repr:
        export_representations(model, dataset, out_dir / "representations.csv", mode=mode)
    print(f"eval on {report.count} records: mse={fmt(report.mse)} r2={fmt(report.r2)}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossfid",
        description="Cross-platform fidelity lab: data generation, baselines, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a dataset")
    gen.add_argument("--qubits", type=int, required=True)
    gen.add_argument("--circuits", type=int, required=True)
    gen.add_argument("--levels", type=int, required=True)
    gen.add_argument("--shots", type=int, default=200)
    gen.add_argument("--profile", type=str, default=None,
                     help="builtin profile name or DeviceProfile JSON path")
    gen.add_argument("--layers", type=int, default=4)
    gen.add_argument("--level-min", type=float, default=0.01)
    gen.add_argument("--level-max", type=float, default=0.1)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--threads", type=int, default=1)
    gen.add_argument("--out", type=str, required=True)
    gen.set_defaults(func=_cmd_gen)

    base = sub.add_parser("baseline", help="run a random-measurement baseline")
    base.add_argument("--method", type=str, required=True, help="cs or cc")
    base.add_argument("--dataset", type=str, required=True)
    base.add_argument("--shots-override", type=int, default=None)
    base.add_argument("--settings", type=int, default=100, help="cc: number of shared settings")
    base.add_argument("--shots-per-setting", type=int, default=None,
                      help="cc: shots per setting (omit for exact distributions)")
    base.add_argument("--include-diagonal", action="store_true",
                      help="cs: keep the m = m' self-overlap terms")
    base.add_argument("--seed", type=int, default=0)
    base.add_argument("--out", type=str, required=True)
    base.set_defaults(func=_cmd_baseline)

    train = sub.add_parser("train", help="train the fidelity model")
    train.add_argument("--dataset", type=str, required=True)
    train.add_argument("--config", type=str, default=None, help="TrainConfig JSON")
    train.add_argument("--stage", type=str, default="all",
                       choices=["all", "branch-mea", "branch-circ", "finetune"])
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--out", type=str, required=True)
    train.set_defaults(func=_cmd_train)

    ev = sub.add_parser("eval", help="evaluate a trained model")
    ev.add_argument("--model", type=str, required=True, help="checkpoint directory")
    ev.add_argument("--dataset", type=str, required=True)
    ev.add_argument("--emit-repr", action="store_true")
    ev.add_argument("--out", type=str, required=True)
    ev.set_defaults(func=_cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceLimitError as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (NumericError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
