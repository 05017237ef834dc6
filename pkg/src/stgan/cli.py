"""Command-line entry point: render, train, eval-marginal, eval-joint, metrics, report.

Every option can also come from a YAML/JSON file passed with ``--config``;
explicit flags win over the file. Each command writes a ``run_manifest.json``
into its output directory.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__, metrics
from .errors import ConfigError, DataError, StganError

OUTPUT_ROOT_ENV = "STGAN_OUTPUT_ROOT"

# desk-sized forest used for marginal checks during training
DESK_FOREST = {"trees": 50, "max_depth": 20}


def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    try:
        data = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {p}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {p} must be a mapping")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge defaults < config file < explicit flags."""
    cfg = dict(defaults)
    file_cfg = _load_config(getattr(args, "config", None))
    unknown = set(file_cfg) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    cfg.update(file_cfg)
    for k in defaults:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def _out_dir(cfg: dict, command: str) -> Path:
    if cfg.get("out"):
        return Path(cfg["out"])
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "stgan_runs")) / command


def _write_manifest(out: Path, command: str, cfg: dict, artifacts, started: float, threads):
    from .report import write_json

    manifest = {
        "command": command,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": cfg.get("seed"),
        "artifacts": sorted(str(Path(a).relative_to(out)) if Path(a).is_relative_to(out) else str(a)
                            for a in artifacts),
        "version": __version__,
        "threads": threads,
        "wall_seconds": round(time.time() - started, 3),
    }
    write_json(out / "run_manifest.json", manifest)


def _forest_config(cfg: dict, threads: int):
    from .forest import ForestConfig

    depth = cfg.get("max_depth")
    return ForestConfig(int(cfg["trees"]), None if depth in (None, 0) else int(depth),
                        seed=int(cfg.get("seed") or 0), n_jobs=threads)


def _load_dataset(path, what: str):
    from .datasets import load_csv

    if not path:
        raise ConfigError(f"missing required path: {what}")
    return load_csv(path)


# -- commands ----------------------------------------------------------------

RENDER_DEFAULTS = {"preset": "rendered", "n_per_label": 400_000, "seed": 0, "out": None, "features": None}


def cmd_render(args, threads):
    from .datasets import RENDERED_SPECS, render_dataset, write_csv, write_manifest

    cfg = resolve(args, RENDER_DEFAULTS)
    if cfg["features"] is not None:
        specs = cfg["features"]
        if not isinstance(specs, dict):
            raise ConfigError("features: expected a mapping label -> list of distributions")
        for label, items in specs.items():
            for j, item in enumerate(items or []):
                try:
                    from .datasets import spec_from_dict

                    spec_from_dict(item)
                except ConfigError as exc:
                    raise ConfigError(f"features.{label}[{j}]: {exc}") from None
    elif cfg["preset"] == "rendered":
        specs = RENDERED_SPECS
    else:
        raise ConfigError(f"preset: no rendered distributions for {cfg['preset']!r}")
    n = int(cfg["n_per_label"])
    seed = int(cfg["seed"])
    out = _out_dir(cfg, "render")
    artifacts = []
    for i, name in ((1, "ds1"), (2, "ds2")):
        ds = render_dataset(specs, n, [seed, i])
        artifacts.append(write_csv(ds, out / f"{name}.csv"))
        artifacts.append(write_manifest(ds, out / f"{name}_manifest.txt", seed=[seed, i]))
    return out, cfg, artifacts


TRAIN_DEFAULTS = {"preset": "rendered", "label": None, "activation": None, "data": None, "ds2": None,
                  "minibatches": 25_000, "batch_size": None, "scale": 1.0, "desk": False,
                  "checkpoint_interval": 10, "eval_interval": None, "critic_steps": 1, "seed": 0,
                  "metric_samples": 5000, "bins": metrics.DEFAULT_BINS, "out": None, "figures": True}


def parse_preset(name: str):
    """``rendered`` or ``rendered-st-label0`` style names -> (base, activation, label)."""
    parts = name.split("-")
    base = parts[0]
    act, label = None, None
    for p in parts[1:]:
        if p in ("st", "smirnov"):
            act = "smirnov"
        elif p == "linear":
            act = "linear"
        elif p.startswith("label") and p[5:].isdigit():
            label = int(p[5:])
        else:
            raise ConfigError(f"preset: cannot parse {name!r}")
    if base not in ("rendered", "flows"):
        raise ConfigError(f"preset: unknown base {base!r}; expected 'rendered' or 'flows'")
    return base, act, label


def cmd_train(args, threads):
    from .evaluation import marginal_scores
    from .forest import ForestConfig
    from .report import write_json
    from .wgan import DESK_BATCH, DESK_SCALE, TrainSchedule, desk_preset, get_preset, train_label

    cfg = resolve(args, TRAIN_DEFAULTS)
    base, act, label = parse_preset(cfg["preset"])
    act = cfg["activation"] or act or "smirnov"
    label = cfg["label"] if cfg["label"] is not None else label
    if label not in (0, 1):
        raise ConfigError("label: give --label 0|1 or a preset such as rendered-st-label0")
    cfg.update(preset=base, activation=act, label=label)
    if cfg["desk"]:
        batch = int(cfg["batch_size"] or DESK_BATCH)
        gan = desk_preset(base, label, float(cfg["scale"]) if cfg["scale"] != 1.0 else DESK_SCALE, batch)
    else:
        batch = int(cfg["batch_size"] or 800)
        gan = get_preset(base, label, float(cfg["scale"]))
    cfg["batch_size"] = batch
    ds1 = _load_dataset(cfg["data"], "data (training CSV)")
    real = ds1.rows(label)
    if real.shape[0] == 0:
        raise DataError(f"{cfg['data']} has no rows with label {label}")
    interval = int(cfg["checkpoint_interval"])
    sched = TrainSchedule(batch, int(cfg["minibatches"]), interval, int(cfg["eval_interval"] or interval),
                          int(cfg["critic_steps"]), int(cfg["seed"]))
    out = _out_dir(cfg, "train")
    hook = None
    if cfg["ds2"]:
        ds2 = _load_dataset(cfg["ds2"], "ds2")
        fc = ForestConfig(DESK_FOREST["trees"], DESK_FOREST["max_depth"], n_jobs=threads)

        def hook(ckpt, samples):
            return marginal_scores(label, ckpt, ds1, ds2, fc, (int(cfg["seed"]), ckpt.tick), cfg["bins"], samples)

    store, trace = train_label(real, label, sched, activation=act, gan=gan, eval_hook=hook,
                               metric_samples=int(cfg["metric_samples"]), metric_bins=int(cfg["bins"]),
                               store_dir=out / "checkpoints")
    trace_path = out / "trace.csv"
    trace.to_csv(trace_path)
    artifacts = [trace_path, *sorted((out / "checkpoints").glob("*.stg"))]
    artifacts.append(write_json(out / "train_summary.json", {
        "label": label, "activation": act, "checkpoints": len(store), "batches_per_epoch": trace.batches_per_epoch,
        "aborted_tick": trace.aborted_tick, "generator_widths": list(gan.generator.hidden),
        "critic_widths": list(gan.critic.hidden), "generator_lr": gan.generator.lr, "critic_lr": gan.critic.lr}))
    if cfg["figures"]:
        from .plotting import plot_trace

        artifacts.append(plot_trace(trace, out / "trace.png", f"label {label}, {act}"))
    if trace.aborted_tick is not None:
        _write_manifest(out, "train", cfg, artifacts, args._started, threads)
        from .errors import TrainingError

        raise TrainingError("training aborted on a non-finite value; checkpoints kept", tick=trace.aborted_tick)
    return out, cfg, artifacts


MARGINAL_DEFAULTS = {"checkpoints": None, "label": None, "ds1": None, "ds2": None, "every": 1,
                     "trees": 300, "max_depth": 20, "seed": 0, "bins": metrics.DEFAULT_BINS, "out": None,
                     "figures": True, "window": None, "epsilon": 0.005}


def cmd_eval_marginal(args, threads):
    from .evaluation import emit_report, marginal_eval, stopping_check
    from .report import write_json
    from .wgan import CheckpointStore

    cfg = resolve(args, MARGINAL_DEFAULTS)
    if not cfg["checkpoints"]:
        raise ConfigError("missing required path: checkpoints")
    store = CheckpointStore.load(cfg["checkpoints"], lazy=True)
    label = cfg["label"] if cfg["label"] is not None else store.initial.label
    ds1 = _load_dataset(cfg["ds1"], "ds1")
    ds2 = _load_dataset(cfg["ds2"], "ds2")
    ckpts = store.selectable()[:: max(1, int(cfg["every"]))]
    trace = marginal_eval(int(label), ckpts, ds1, ds2, _forest_config(cfg, threads), int(cfg["seed"]),
                          int(cfg["bins"]))
    out = _out_dir(cfg, "eval-marginal")
    artifacts = emit_report(trace, out)
    window = int(cfg["window"] or 3)
    decision = stopping_check(trace, window, float(cfg["epsilon"]))
    artifacts.append(write_json(out / f"stopping_label{label}.json",
                                {"stop": decision.stop, "tick": decision.tick, "best_tick": decision.best_tick,
                                 "window": window, "epsilon": float(cfg["epsilon"])}))
    if cfg["figures"]:
        from .plotting import plot_marginal_trace

        artifacts.append(plot_marginal_trace(trace, out / f"marginal_label{label}.png"))
    return out, cfg, artifacts


JOINT_DEFAULTS = {"ckpt0": None, "ckpt1": None, "ds1": None, "ds2": None, "strategy": "uniform", "runs": 100,
                  "n0": None, "n1": None, "balanced": False, "scores0": None, "scores1": None, "trees": 300,
                  "max_depth": 20, "seed": 0, "out": None, "figures": True, "baseline_std": 0.5}


def _generators(source, label: int, ds1, cfg):
    """Checkpoint directory, or the stubs ``mean`` and ``replay``."""
    from .evaluation import ReplayGenerator
    from .wgan import CheckpointStore, MeanBaseline

    if source == "mean":
        return [MeanBaseline.from_data(ds1.rows(label), float(cfg["baseline_std"]))]
    if source == "replay":
        return [ReplayGenerator(ds1.rows(label))]
    if not source:
        raise ConfigError(f"missing required path: ckpt{label}")
    return CheckpointStore.load(source, lazy=True).selectable()


def _read_scores(path) -> dict | None:
    if not path:
        return None
    try:
        with open(path, newline="") as fh:
            return {int(r["tick"]): float(r["f1_ds2"]) for r in csv.DictReader(fh)}
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read marginal scores from {path}: {exc}") from None


def cmd_eval_joint(args, threads):
    from .evaluation import SelectionStrategy, emit_report, joint_eval

    cfg = resolve(args, JOINT_DEFAULTS)
    ds1 = _load_dataset(cfg["ds1"], "ds1")
    ds2 = _load_dataset(cfg["ds2"], "ds2")
    strategy = SelectionStrategy.parse(str(cfg["strategy"]))
    g0 = _generators(cfg["ckpt0"], 0, ds1, cfg)
    g1 = _generators(cfg["ckpt1"], 1, ds1, cfg)
    n0, n1 = cfg["n0"], cfg["n1"]
    if cfg["balanced"]:
        c0, c1 = ds1.counts()
        n0 = n1 = n0 or n1 or min(c0, c1)
    summary = joint_eval(g0, g1, strategy, int(cfg["runs"]), n0, n1, ds2, _forest_config(cfg, threads),
                         int(cfg["seed"]), ds1, _read_scores(cfg["scores0"]), _read_scores(cfg["scores1"]))
    out = _out_dir(cfg, "eval-joint")
    artifacts = emit_report(summary, out)
    if cfg["figures"]:
        from .plotting import plot_f1_histograms

        artifacts.append(plot_f1_histograms({strategy.name: summary}, out / f"joint_{strategy.name}_f1.png"))
    return out, cfg, artifacts


METRICS_DEFAULTS = {"real": None, "synthetic": None, "bins": metrics.DEFAULT_BINS, "label": None, "out": None,
                    "figures": True}


def cmd_metrics(args, threads):
    from .evaluation import emit_series
    from .report import write_json

    cfg = resolve(args, METRICS_DEFAULTS)
    real = _load_dataset(cfg["real"], "real")
    syn = _load_dataset(cfg["synthetic"], "synthetic")
    if real.d != syn.d:
        raise DataError("real and synthetic files have different feature counts")
    xr, xs = real.features, syn.features
    if cfg["label"] is not None:
        xr, xs = real.rows(int(cfg["label"])), syn.rows(int(cfg["label"]))
    if xr.shape[0] == 0 or xs.shape[0] == 0:
        raise DataError("metrics need at least one real and one synthetic row")
    bins = int(cfg["bins"])
    l1, jac = metrics.compare(xr, xs, bins)
    out = _out_dir(cfg, "metrics")
    artifacts = [write_json(out / "metrics.json", {"l1": l1, "jaccard": jac, "bins_per_dim": bins,
                                                   "real_rows": xr.shape[0], "synthetic_rows": xs.shape[0]})]
    artifacts += emit_series(xr, xs, out, bins=bins, names=list(real.feature_names))
    if cfg["figures"]:
        from .plotting import plot_flattened, plot_marginals

        grid = metrics.build_grid(xr, xs, bins)
        flat = metrics.flatten_sorted_series(metrics.build_histogram(xr, grid), metrics.build_histogram(xs, grid))
        artifacts.append(plot_flattened(flat, out / "flattened.png"))
        artifacts.append(plot_marginals(xr, xs, out / "marginals.png", list(real.feature_names)))
    print(json.dumps({"l1": l1, "jaccard": jac}))
    return out, cfg, artifacts


REPORT_DEFAULTS = {"runs_dir": None, "out": None}


def _read_trace(path):
    from .wgan import TRACE_COLUMNS, TrainTrace

    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(TRACE_COLUMNS) - set(rows[0]):
        raise DataError(f"{path} is not a training trace")
    trace = TrainTrace(records=[{k: float(r[k]) for k in TRACE_COLUMNS} for r in rows])
    summary = Path(path).with_name("train_summary.json")
    if summary.exists():
        trace.batches_per_epoch = json.loads(summary.read_text())["batches_per_epoch"]
    return trace


def _read_joint(path):
    from .evaluation import JointRun, JointRunSummary
    from .forest import report_from_confusion

    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    by_run: dict[int, dict] = {}
    ticks = {}
    for r in rows:
        run = int(r["run"])
        by_run.setdefault(run, {})[float(r["threshold"])] = tuple(int(r[k]) for k in ("tn", "fp", "fn", "tp"))
        ticks[run] = (int(r["tick0"]), int(r["tick1"]))
    name = Path(path).name.removeprefix("joint_").removesuffix("_f1_runs.csv")
    runs = [JointRun(k, *ticks[k], report_from_confusion(by_run[k])) for k in sorted(by_run)]
    return name, JointRunSummary(name, runs=runs)


def cmd_report(args, threads):
    """Collect traces and joint summaries under a directory into figures and one index."""
    from .plotting import plot_f1_histograms, plot_trace
    from .report import write_json

    cfg = resolve(args, REPORT_DEFAULTS)
    if not cfg["runs_dir"]:
        raise ConfigError("missing required path: runs_dir")
    root = Path(cfg["runs_dir"])
    if not root.is_dir():
        raise DataError(f"{root} is not a directory")
    out = _out_dir(cfg, "report")
    artifacts = []
    index = {"traces": [], "joint": []}
    for tp in sorted(root.rglob("trace.csv")):
        trace = _read_trace(tp)
        rel = tp.parent.relative_to(root)
        name = "_".join(rel.parts) or "trace"
        artifacts.append(plot_trace(trace, out / f"trace_{name}.png", str(rel)))
        last = trace.records[-1] if trace.records else {}
        index["traces"].append({"source": str(rel), "ticks": len(trace.records), "final_l1": last.get("l1"),
                                "final_jaccard": last.get("jaccard")})
    summaries = {}
    for jp in sorted(root.rglob("joint_*_f1_runs.csv")):
        name, summary = _read_joint(jp)
        key = f"{jp.parent.relative_to(root)}/{name}".lstrip("./")
        summaries[key] = summary
        index["joint"].append({"source": key, **summary.to_dict()})
    if summaries:
        artifacts.append(plot_f1_histograms(summaries, out / "joint_f1_histograms.png"))
    artifacts.append(write_json(out / "report_index.json", index))
    return out, cfg, artifacts


# -- parser ------------------------------------------------------------------

def _bool_flag(p, name, help_text):
    p.add_argument(f"--{name}", dest=name.replace("-", "_"), action=argparse.BooleanOptionalAction, default=None,
                   help=help_text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stgan", description="Smirnov-transform WGAN data synthesis toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--threads", type=int, default=1, help="worker cap for forests and BLAS")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML or JSON file with option values")
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ROOT_ENV}/<command>)")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("render", help="render the synthetic benchmark datasets DS1/DS2")
    common(p)
    p.add_argument("--preset")
    p.add_argument("--n-per-label", dest="n_per_label", type=int)

    p = sub.add_parser("train", help="train one label's WGAN and store its checkpoints")
    common(p)
    p.add_argument("--preset", help="rendered | flows, optionally like rendered-st-label0")
    p.add_argument("--label", type=int, choices=(0, 1))
    p.add_argument("--activation", choices=("smirnov", "linear"))
    p.add_argument("--data", help="training CSV (DS1)")
    p.add_argument("--ds2", help="test CSV; enables marginal F1 at eval ticks")
    p.add_argument("--minibatches", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--scale", type=float, help="multiply hidden widths")
    _bool_flag(p, "desk", "scaled widths, batch 128 and batch-scaled generator lr")
    p.add_argument("--checkpoint-interval", dest="checkpoint_interval", type=int)
    p.add_argument("--eval-interval", dest="eval_interval", type=int)
    p.add_argument("--critic-steps", dest="critic_steps", type=int)
    p.add_argument("--metric-samples", dest="metric_samples", type=int)
    p.add_argument("--bins", type=int)
    _bool_flag(p, "figures", "render PNG figures")

    p = sub.add_parser("eval-marginal", help="marginal macro-F1 along a checkpoint store")
    common(p)
    p.add_argument("--checkpoints")
    p.add_argument("--label", type=int, choices=(0, 1))
    p.add_argument("--ds1")
    p.add_argument("--ds2")
    p.add_argument("--every", type=int, help="evaluate every k-th checkpoint")
    p.add_argument("--trees", type=int)
    p.add_argument("--max-depth", dest="max_depth", type=int, help="0 for unlimited")
    p.add_argument("--bins", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--epsilon", type=float)
    _bool_flag(p, "figures", "render PNG figures")

    p = sub.add_parser("eval-joint", help="joint evaluation over repeated checkpoint draws")
    common(p)
    p.add_argument("--ckpt0", help="label-0 checkpoint directory, or 'mean' / 'replay'")
    p.add_argument("--ckpt1", help="label-1 checkpoint directory, or 'mean' / 'replay'")
    p.add_argument("--ds1")
    p.add_argument("--ds2")
    p.add_argument("--strategy", help="uniform | topK (e.g. top10)")
    p.add_argument("--runs", type=int)
    p.add_argument("--n0", type=int)
    p.add_argument("--n1", type=int)
    _bool_flag(p, "balanced", "generate equal row counts per label")
    p.add_argument("--scores0", help="marginal CSV ranking label-0 checkpoints (elitism)")
    p.add_argument("--scores1", help="marginal CSV ranking label-1 checkpoints (elitism)")
    p.add_argument("--trees", type=int)
    p.add_argument("--max-depth", dest="max_depth", type=int, help="0 for unlimited")
    p.add_argument("--baseline-std", dest="baseline_std", type=float,
                   help="mean baseline noise as a fraction of feature std")
    _bool_flag(p, "figures", "render PNG figures")

    p = sub.add_parser("metrics", help="L1 distance, Jaccard index and series for two CSVs")
    common(p)
    p.add_argument("--real")
    p.add_argument("--synthetic")
    p.add_argument("--bins", type=int)
    p.add_argument("--label", type=int, choices=(0, 1))
    _bool_flag(p, "figures", "render PNG figures")

    p = sub.add_parser("report", help="figures and an index for every run under a directory")
    common(p)
    p.add_argument("runs_dir", nargs="?")
    return parser


COMMANDS = {"render": cmd_render, "train": cmd_train, "eval-marginal": cmd_eval_marginal,
            "eval-joint": cmd_eval_joint, "metrics": cmd_metrics, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args._started = time.time()
    threads = max(1, args.threads)
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=threads):
            out, cfg, artifacts = COMMANDS[args.command](args, threads)
        _write_manifest(out, args.command, cfg, artifacts, args._started, threads)
    except StganError as exc:
        print(f"stgan {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"stgan {args.command}: I/O error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except FloatingPointError as exc:
        print(f"stgan {args.command}: numeric error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
