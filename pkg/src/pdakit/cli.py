"""Command-line front end.

Subcommands: ``generate`` (synthetic task files), ``train`` (any variant,
per-epoch CSV report plus parameter snapshot), ``evaluate`` (metrics JSON),
``bound-report`` (error-gap bound terms), ``bench-etic`` (fast path versus
full-support reference) and ``bench-backends`` (compiled versus numpy
kernel).

Exit codes are a stable contract: 0 success, 2 config or usage error,
3 task validation or missing task file, 4 shape mismatch, 5 diagnostics that
need labels were requested on unlabeled data.

Configs are a single JSON document; unknown keys anywhere are rejected so
typos fail loudly.  ``--seed`` always overrides the config seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import _backend
from .bench import bench_backends, bench_etic
from .core import (
    LabelDistribution,
    PdakitError,
    RandomSource,
    TaskValidationError,
    empirical_label_distribution,
    require_valid_task,
)
from .evaluation import (
    UndefinedInputError,
    balanced_prediction_error,
    bound_report,
    class_conditional_a_distance,
    conditional_error_gap,
    model_error,
)
from .etic import EticConfig
from .io import (
    FileFormatError,
    canonical_json,
    load_snapshot,
    load_task,
    save_snapshot,
    write_features,
    write_metrics_json,
    write_task_manifest,
    write_train_report_csv,
)
from .model import forward, output_probs, predict
from .sampling import SamplingConfig, build_sampling_domain
from .synthetic import GaussianPdaConfig, generate_gaussian_pda
from .trainer import TrainConfig, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TASK = 3
EXIT_SHAPE = 4
EXIT_LABELS = 5


class ConfigError(PdakitError):
    pass


class ShapeMismatchError(PdakitError):
    pass


def _check_keys(section: dict, allowed, where: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {', '.join(unknown)}")


def _load_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found")
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file {path} is not valid JSON: {err}")
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(doc, {"seed", "out_dir", "generate", "train", "task"}, "config root")
    return doc


def _resolve_seed(doc: dict, args) -> int:
    if getattr(args, "seed", None) is not None:
        doc["seed"] = int(args.seed)
    return int(doc.get("seed", 0))


def _generate_config(doc: dict, seed: int) -> GaussianPdaConfig:
    if "generate" not in doc:
        raise ConfigError("config lacks a 'generate' section")
    sec = doc["generate"]
    allowed = {
        "num_classes", "num_target_classes", "feature_dim", "n_source",
        "n_target", "class_separation", "conditional_shift", "target_proportions",
    }
    _check_keys(sec, allowed, "generate")
    props = sec.get("target_proportions")
    try:
        return GaussianPdaConfig(
            num_classes=int(sec["num_classes"]),
            num_target_classes=int(sec["num_target_classes"]),
            feature_dim=int(sec["feature_dim"]),
            n_source=int(sec["n_source"]),
            n_target=int(sec["n_target"]),
            class_separation=float(sec["class_separation"]),
            conditional_shift=float(sec.get("conditional_shift", 0.0)),
            target_proportions=LabelDistribution(np.asarray(props, float)) if props else None,
            seed=seed,
        )
    except (KeyError, PdakitError, TypeError, ValueError) as err:
        key = f": {err}" if not isinstance(err, KeyError) else f": missing key {err}"
        raise ConfigError(f"invalid config: generate section{key}")


def _train_config(doc: dict, seed: int) -> TrainConfig:
    sec = doc.get("train", {})
    allowed = {
        "variant", "mu", "epochs", "warmup_epochs", "lr", "hidden1", "hidden2",
        "batch_size", "sampling", "etic",
    }
    _check_keys(sec, allowed, "train")
    samp = sec.get("sampling", {})
    _check_keys(samp, {"alpha", "n_c", "fixed_theta"}, "train.sampling")
    et = sec.get("etic", {})
    _check_keys(
        et,
        {"epsilon", "lambda2", "lambda1_scale", "max_iters", "tol", "kernel_floor", "gradient_mode"},
        "train.etic",
    )
    try:
        sampling = SamplingConfig(
            alpha=float(samp.get("alpha", 0.2)),
            n_c=None if samp.get("n_c") is None else int(samp["n_c"]),
            fixed_theta=None if samp.get("fixed_theta") is None else float(samp["fixed_theta"]),
        )
        etic = EticConfig(
            epsilon=float(et.get("epsilon", 1.0)),
            lambda2=float(et.get("lambda2", 1.0)),
            lambda1_scale=float(et.get("lambda1_scale", 4.0)),
            max_iters=int(et.get("max_iters", 100)),
            tol=float(et.get("tol", 1e-9)),
            kernel_floor=float(et.get("kernel_floor", 1e-30)),
            gradient_mode=str(et.get("gradient_mode", "envelope")),
        )
        return TrainConfig(
            mu=float(sec.get("mu", 1.0)),
            epochs=int(sec.get("epochs", 50)),
            warmup_epochs=int(sec.get("warmup_epochs", 100)),
            lr=float(sec.get("lr", 1e-3)),
            hidden1=int(sec.get("hidden1", 256)),
            hidden2=int(sec.get("hidden2", 256)),
            sampling=sampling,
            etic=etic,
            batch_size=None if sec.get("batch_size") is None else int(sec["batch_size"]),
            variant=str(sec.get("variant", "is2c")),
            seed=seed,
        )
    except (PdakitError, TypeError, ValueError) as err:
        raise ConfigError(f"invalid config: train section: {err}")


def cmd_generate(args) -> int:
    doc = _load_config(args.config)
    seed = _resolve_seed(doc, args)
    cfg = _generate_config(doc, seed)
    out_dir = Path(args.out or doc.get("out_dir", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    task = generate_gaussian_pda(cfg)
    write_features(out_dir / "source.feat", task.source)
    write_features(out_dir / "target.feat", task.target)
    provenance = {"command": "generate", "config": doc, "seed": seed}
    write_task_manifest(out_dir / "task.json", task, "source.feat", "target.feat", provenance)
    print(f"wrote {out_dir / 'task.json'}")
    return EXIT_OK


def _task_path(doc: dict, args, config_path) -> Path:
    if getattr(args, "task", None):
        return Path(args.task)
    task_sec = doc.get("task", {})
    _check_keys(task_sec, {"manifest"}, "task")
    if "manifest" not in task_sec:
        raise ConfigError("config lacks task.manifest and no --task was given")
    return Path(config_path).parent / task_sec["manifest"]


def cmd_train(args) -> int:
    doc = _load_config(args.config)
    seed = _resolve_seed(doc, args)
    cfg = _train_config(doc, seed)
    task = load_task(_task_path(doc, args, args.config))
    require_valid_task(task)
    out_dir = Path(args.out or doc.get("out_dir", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    params, report = train(task, cfg)
    provenance = {"command": "train", "config": doc, "seed": seed,
                  "backend": _backend.active_backend()}
    write_train_report_csv(out_dir / "report.csv", report, provenance,
                           include_timing=args.timing)
    save_snapshot(out_dir / "snapshot.bin", params, provenance)
    if report.final_target_accuracy is not None:
        print(f"final target accuracy: {report.final_target_accuracy:.4f}")
    print(f"wrote {out_dir / 'report.csv'} and {out_dir / 'snapshot.bin'}")
    return EXIT_OK


def _load_model_for_task(snapshot_path, task):
    params, prov = load_snapshot(snapshot_path)
    if params.input_dim != task.source.dim:
        raise ShapeMismatchError(
            f"snapshot expects {params.input_dim}-dim features, task provides {task.source.dim}"
        )
    return params, prov


def cmd_evaluate(args) -> int:
    task = load_task(args.task)
    params, _ = _load_model_for_task(args.snapshot, task)
    metrics = {}
    preds_t = predict(params, task.target.features)
    if task.target.labels is not None:
        metrics["target_accuracy"] = float(np.mean(preds_t == task.target.labels))
        metrics["model_error"] = model_error(preds_t, task.target.labels)
        metrics["balanced_prediction_error"] = balanced_prediction_error(
            preds_t, task.target.labels, task.num_classes
        )
        preds_s = predict(params, task.source.features)
        p_t_emp = empirical_label_distribution(task.target)
        metrics["conditional_error_gap"] = conditional_error_gap(
            preds_s, task.source.labels, preds_t, task.target.labels, p_t_emp, task.num_classes
        )
        shared = task.shared_classes or frozenset(int(j) for j in np.unique(task.target.labels))
        feats_s, _, _ = forward(params, task.source.features)
        feats_t, _, _ = forward(params, task.target.features)
        adist = class_conditional_a_distance(
            feats_s, task.source.labels, feats_t, task.target.labels, shared, seed=args.seed or 0
        )
        metrics["a_distance"] = adist.value
        metrics["a_distance_per_class"] = {str(k): v for k, v in adist.per_class.items()}
    if args.bound:
        metrics["bound"] = _bound_metrics(params, task, args.theta, args.seed or 0)
    provenance = {"command": "evaluate", "seed": args.seed or 0,
                  "theta": args.theta, "bound": bool(args.bound)}
    write_metrics_json(args.out, metrics, provenance)
    print(f"wrote {args.out}")
    return EXIT_OK


def _bound_metrics(params, task, theta: float, seed: int) -> dict:
    if task.target.labels is None:
        raise UndefinedInputError("bound report requires a labeled target")
    rng = RandomSource(seed)
    p_t_emp = empirical_label_distribution(task.target)
    domain = build_sampling_domain(
        task.source, p_t_emp, SamplingConfig(fixed_theta=theta), rng.spawn(0)
    )
    report = bound_report(
        lambda X: predict(params, X),
        lambda X: output_probs(params, X),
        task,
        domain,
        theta,
        rng.spawn(1),
    )
    return report.to_dict()


def cmd_bound_report(args) -> int:
    task = load_task(args.task)
    params, _ = _load_model_for_task(args.snapshot, task)
    metrics = _bound_metrics(params, task, args.theta, args.seed or 0)
    provenance = {"command": "bound-report", "seed": args.seed or 0, "theta": args.theta}
    write_metrics_json(args.out, metrics, provenance)
    print(f"wrote {args.out}")
    return EXIT_OK


def _write_bench_csv(path, result: dict, provenance: dict) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# pdakit benchmark\n")
        for line in canonical_json(provenance).splitlines():
            fh.write("# " + line + "\n")
        writer = csv.writer(fh)
        writer.writerow(["size", "path", "mean_time_per_iter", "std_time_per_iter",
                         "iterations", "repeats"])
        for row in result["rows"]:
            writer.writerow([row.size, row.path, repr(row.mean_time_per_iter),
                             repr(row.std_time_per_iter), row.iterations, row.repeats])
        for name, slope in sorted(result["slopes"].items()):
            writer.writerow(["slope", name, repr(slope), "", "", ""])
        for entry in result.get("agreement", []):
            writer.writerow(["agreement", entry["size"], repr(entry["fast"]),
                             repr(entry["reference"]), repr(entry["rel_diff"]), ""])


def _parse_sizes(text: str):
    sizes = [int(s) for s in text.split(",") if s.strip()]
    if not sizes or sorted(sizes) != sizes or min(sizes) < 4:
        raise ConfigError("sizes must be an ascending comma list with entries >= 4")
    return sizes


def cmd_bench_etic(args) -> int:
    sizes = _parse_sizes(args.sizes)
    check = _parse_sizes(args.check_sizes) if args.check_sizes else []
    result = bench_etic(sizes, repeats=args.repeats, iters=args.iters,
                        seed=args.seed or 0, check_sizes=check)
    provenance = {"command": "bench-etic", "sizes": sizes, "repeats": args.repeats,
                  "iters": args.iters, "seed": args.seed or 0,
                  "backend": _backend.active_backend()}
    _write_bench_csv(args.out, result, provenance)
    print(f"fast slope {result['slopes']['fast']:.3f}, "
          f"reference slope {result['slopes']['reference']:.3f}")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_bench_backends(args) -> int:
    sizes = _parse_sizes(args.sizes)
    result = bench_backends(sizes, repeats=args.repeats, iters=args.iters, seed=args.seed or 0)
    provenance = {"command": "bench-backends", "sizes": sizes, "repeats": args.repeats,
                  "iters": args.iters, "seed": args.seed or 0,
                  "backend": result["active"]}
    _write_bench_csv(args.out, result, provenance)
    for name, slope in sorted(result["slopes"].items()):
        print(f"{name} slope {slope:.3f}")
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pdakit", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write synthetic task files from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (overrides config out_dir)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a variant and write report + snapshot")
    p.add_argument("--config", required=True)
    p.add_argument("--task", help="task manifest (overrides config task.manifest)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--timing", action="store_true",
                   help="include wall-clock column (breaks byte-reproducibility)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="write metrics JSON for a snapshot on a task")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--theta", type=float)
    p.add_argument("--bound", action="store_true")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bound-report", help="write the error-gap bound terms as JSON")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_bound_report)

    p = sub.add_parser("bench-etic", help="time fast path vs full-support reference")
    p.add_argument("--sizes", default="128,256,512,1024")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--check-sizes", default="",
                   help="small sizes on which to cross-check values")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_bench_etic)

    p = sub.add_parser("bench-backends", help="time compiled vs numpy kernels")
    p.add_argument("--sizes", default="128,256,512,1024")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_bench_backends)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "bound", False) and args.theta is None:
        parser.error("--bound requires --theta")
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"invalid config: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (TaskValidationError, FileFormatError) as err:
        print(f"task error: {err}", file=sys.stderr)
        return EXIT_TASK
    except ShapeMismatchError as err:
        print(f"shape mismatch: {err}", file=sys.stderr)
        return EXIT_SHAPE
    except UndefinedInputError as err:
        print(f"label-dependent diagnostics unavailable: {err}", file=sys.stderr)
        return EXIT_LABELS
    except PdakitError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
