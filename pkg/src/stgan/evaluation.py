"""Nested classifier evaluation of generators.

Marginal evaluation scores one label's generator by mixing its synthetic
rows with the other label's real rows; joint evaluation trains on fully
synthetic data drawn from one checkpoint per label, repeated over runs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .datasets import LabeledDataset
from .errors import ContractError, DataError
from .forest import DEFAULT_THRESHOLD, LEAKAGE_NOTE, THRESHOLDS, ClassifierReport, ForestConfig, evaluate, rf_train
from .report import write_csv, write_json


# -- generator stubs ---------------------------------------------------------

@dataclass
class ReplayGenerator:
    """Returns real rows: a seeded permutation, resampled when more are asked for."""

    rows: np.ndarray
    tick: int = 0

    @property
    def n_features(self) -> int:
        return self.rows.shape[1]

    def generate(self, n: int, seed) -> np.ndarray:
        rng = np.random.default_rng(seed)
        m = self.rows.shape[0]
        idx = rng.permutation(m)[:n] if n <= m else rng.integers(0, m, n)
        return self.rows[idx]


@dataclass
class ConstantGenerator:
    value: np.ndarray
    tick: int = 0

    @property
    def n_features(self) -> int:
        return np.size(self.value)

    def generate(self, n: int, seed) -> np.ndarray:
        return np.tile(np.asarray(self.value, dtype=np.float64), (n, 1))


def _width(gen) -> int:
    return int(gen.n_features)


def _tick(gen, default: int) -> int:
    return int(getattr(gen, "tick", default))


# -- marginal evaluation -----------------------------------------------------

@dataclass
class MarginalTrace:
    label: int
    ticks: list[int] = field(default_factory=list)
    f1_ds1: list[float] = field(default_factory=list)
    f1_ds2: list[float] = field(default_factory=list)
    l1: list[float] = field(default_factory=list)
    jaccard: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.ticks)

    def score_of(self) -> dict[int, float]:
        return dict(zip(self.ticks, self.f1_ds2))

    def append(self, tick, scores: dict):
        self.ticks.append(int(tick))
        for k in ("f1_ds1", "f1_ds2", "l1", "jaccard"):
            getattr(self, k).append(float(scores[k]))


def marginal_scores(label: int, gen, ds1: LabeledDataset, ds2: LabeledDataset, cfg: ForestConfig,
                    seed, bins: int = metrics.DEFAULT_BINS, samples=None) -> dict:
    """Macro-F1 (default threshold) on DS1/DS2 of a forest trained on the mixed set."""
    if _width(gen) != ds1.d or ds2.d != ds1.d:
        raise ContractError("generator and dataset feature widths differ")
    n0, n1 = ds1.counts()
    if min(n0, n1, *ds2.counts()) == 0:
        raise DataError("marginal evaluation needs both labels in DS1 and DS2")
    ss = np.random.SeedSequence(seed)
    s_gen, s_forest = ss.spawn(2)
    n_label = n0 if label == 0 else n1
    real_label = ds1.rows(label)
    # precomputed samples are reused only at the real label count, so the mix stays as unbalanced as DS1
    if samples is not None and len(samples) == n_label:
        syn = np.asarray(samples, dtype=np.float64)
    else:
        syn = gen.generate(n_label, s_gen)
    other = ds1.rows(1 - label)
    parts = {label: syn, 1 - label: other}
    train = LabeledDataset.from_parts(parts, ds1.feature_names, "marginal mix")
    forest = rf_train(train, cfg.with_seed(int(s_forest.generate_state(1)[0])))
    l1, jac = metrics.compare(real_label, syn, bins)
    return {"f1_ds1": evaluate(forest, ds1).default.macro_f1, "f1_ds2": evaluate(forest, ds2).default.macro_f1,
            "l1": l1, "jaccard": jac}


def marginal_eval(label: int, checkpoints, ds1: LabeledDataset, ds2: LabeledDataset, cfg: ForestConfig,
                  seed=0, bins: int = metrics.DEFAULT_BINS) -> MarginalTrace:
    checkpoints = list(checkpoints)
    if not checkpoints:
        raise DataError("marginal evaluation needs at least one checkpoint")
    trace = MarginalTrace(label)
    for i, ck in enumerate(checkpoints):
        tick = _tick(ck, i)
        trace.append(tick, marginal_scores(label, ck, ds1, ds2, cfg, (seed, label, tick), bins))
    return trace


# -- checkpoint selection ----------------------------------------------------

@dataclass(frozen=True)
class SelectionStrategy:
    tag: str = "uniform_all"
    k: int = 10

    def __post_init__(self):
        if self.tag not in ("uniform_all", "elitism_topk"):
            raise ContractError(f"unknown selection strategy {self.tag!r}")
        if self.k < 1:
            raise ContractError("elitism k must be >= 1")

    @classmethod
    def parse(cls, text: str) -> "SelectionStrategy":
        t = text.strip().lower()
        if t in ("uniform", "uniform_all"):
            return cls("uniform_all")
        if t.startswith("top"):
            try:
                return cls("elitism_topk", int(t[3:] or 10))
            except ValueError:
                pass
        raise ContractError(f"cannot parse strategy {text!r}; use 'uniform' or 'topK'")

    @property
    def name(self) -> str:
        return "uniform" if self.tag == "uniform_all" else f"top{self.k}"

    def pool(self, checkpoints, scores: dict | None = None) -> list:
        """Candidate checkpoints: all of them, or the k best by marginal DS2 macro-F1."""
        if self.tag == "uniform_all":
            return list(checkpoints)
        if scores is None:
            raise ContractError("elitism needs marginal scores per checkpoint tick")
        scored = [c for i, c in enumerate(checkpoints) if _tick(c, i) in scores]
        if self.k > len(scored):
            raise ContractError(f"elitism k={self.k} exceeds the {len(scored)} scored checkpoints")
        # stable: equal scores keep checkpoint order
        order = sorted(range(len(scored)), key=lambda i: -scores[_tick(scored[i], i)])
        return [scored[i] for i in order[: self.k]]


# -- joint evaluation --------------------------------------------------------

@dataclass
class JointRun:
    run: int
    tick0: int
    tick1: int
    report: ClassifierReport


@dataclass
class JointRunSummary:
    strategy: str
    thresholds: tuple[float, ...] = THRESHOLDS
    runs: list[JointRun] = field(default_factory=list)
    n0: int = 0
    n1: int = 0

    def f1_matrix(self) -> np.ndarray:
        """Macro-F1 per run (rows) and threshold (columns)."""
        if not self.runs:
            return np.zeros((0, len(self.thresholds)))
        return np.array([r.report.macro_f1s() for r in self.runs])

    def default_f1(self) -> np.ndarray:
        j = list(self.thresholds).index(DEFAULT_THRESHOLD)
        return self.f1_matrix()[:, j]

    def iqr(self, threshold: float = DEFAULT_THRESHOLD) -> float:
        col = self.f1_matrix()[:, list(self.thresholds).index(threshold)]
        if col.size == 0:
            return float("nan")
        q1, q3 = np.percentile(col, [25, 75])
        return float(q3 - q1)

    def threshold_stats(self) -> list[dict]:
        m = self.f1_matrix()
        out = []
        for j, t in enumerate(self.thresholds):
            col = m[:, j]
            if col.size:
                q1, med, q3 = np.percentile(col, [25, 50, 75])
                out.append({"threshold": t, "mean": float(col.mean()), "median": float(med), "q1": float(q1),
                            "q3": float(q3), "iqr": float(q3 - q1), "min": float(col.min()),
                            "max": float(col.max())})
            else:
                out.append({"threshold": t, **{k: None for k in ("mean", "median", "q1", "q3", "iqr", "min", "max")}})
        return out

    def best_entries(self) -> dict:
        """Best run at the default threshold and best (run, threshold) pair overall."""
        if not self.runs:
            return {"default": None, "best": None}
        d = max(self.runs, key=lambda r: (r.report.default.macro_f1, -r.run))
        b = max(self.runs, key=lambda r: (r.report.best.macro_f1, -r.run))
        return {"default": {"run": d.run, **d.report.default.to_dict()},
                "best": {"run": b.run, **b.report.best.to_dict()}}

    def to_dict(self) -> dict:
        return {"strategy": self.strategy, "runs": len(self.runs), "n0": self.n0, "n1": self.n1,
                "thresholds": list(self.thresholds), "per_threshold": self.threshold_stats(),
                "best_over_runs": self.best_entries(), "notes": [LEAKAGE_NOTE]}


def joint_eval(ckpts_label0, ckpts_label1, strategy: SelectionStrategy, runs: int, n0: int | None,
               n1: int | None, ds2: LabeledDataset, cfg: ForestConfig, seed=0, ds1: LabeledDataset | None = None,
               scores0: dict | None = None, scores1: dict | None = None) -> JointRunSummary:
    """Train on fully synthetic data from one drawn checkpoint per label, ``runs`` times.

    ``n0``/``n1`` default to the per-label counts of ``ds1``; every run
    redraws checkpoints, generated rows and the forest seed.
    """
    if runs < 1:
        raise ContractError("runs must be >= 1")
    pool0 = strategy.pool(ckpts_label0, scores0)
    pool1 = strategy.pool(ckpts_label1, scores1)
    if not pool0 or not pool1:
        raise DataError("joint evaluation needs at least one checkpoint per label")
    if n0 is None or n1 is None:
        if ds1 is None:
            raise ContractError("n0/n1 default to DS1 label counts; pass ds1 or explicit counts")
        c0, c1 = ds1.counts()
        n0, n1 = n0 or c0, n1 or c1
    if n0 < 1 or n1 < 1:
        raise ContractError("n0 and n1 must be >= 1")
    for g in (*pool0, *pool1):
        if _width(g) != ds2.d:
            raise ContractError("checkpoint and DS2 feature widths differ")

    summary = JointRunSummary(strategy.name, THRESHOLDS, [], n0, n1)
    for r, ss in enumerate(np.random.SeedSequence(seed).spawn(runs)):
        s_draw, s_g0, s_g1, s_forest = ss.spawn(4)
        rng = np.random.default_rng(s_draw)
        i0 = int(rng.integers(len(pool0)))
        i1 = int(rng.integers(len(pool1)))
        g0, g1 = pool0[i0], pool1[i1]
        train = LabeledDataset.from_parts({0: g0.generate(n0, s_g0), 1: g1.generate(n1, s_g1)},
                                          ds2.feature_names, "synthetic")
        forest = rf_train(train, cfg.with_seed(int(s_forest.generate_state(1)[0])))
        summary.runs.append(JointRun(r, _tick(g0, i0), _tick(g1, i1), evaluate(forest, ds2)))
    return summary


# -- stopping rule -----------------------------------------------------------

@dataclass(frozen=True)
class StopDecision:
    stop: bool
    tick: int | None = None  # tick at which the rule fired
    best_tick: int | None = None  # best-so-far checkpoint

    def __bool__(self):
        return self.stop


def stopping_check(trace, window: int, epsilon: float) -> StopDecision:
    """Stop at the first t whose trailing-window max beats every earlier score by < epsilon."""
    if window < 1 or epsilon < 0:
        raise ContractError("window must be >= 1 and epsilon >= 0")
    if isinstance(trace, MarginalTrace):
        scores, ticks = np.asarray(trace.f1_ds2, dtype=float), list(trace.ticks)
    else:
        scores = np.asarray(trace, dtype=float)
        ticks = list(range(scores.size))
    for t in range(window, scores.size):
        earlier = scores[: t - window + 1].max()
        recent = scores[t - window + 1: t + 1].max()
        if recent - earlier < epsilon:
            best = int(np.argmax(scores[: t + 1]))
            return StopDecision(True, ticks[t], ticks[best])
    return StopDecision(False)


# -- file emission -----------------------------------------------------------

def emit_report(obj, directory, prefix: str = "") -> list[Path]:
    """Write CSV series plus JSON summary for a joint summary or marginal trace."""
    d = Path(directory)
    if isinstance(obj, JointRunSummary):
        rows = []
        for run in obj.runs:
            for e in run.report.entries:
                rows.append([run.run, e.threshold, e.macro_f1, e.tn, e.fp, e.fn, e.tp, run.tick0, run.tick1])
        name = prefix or f"joint_{obj.strategy}"
        return [write_csv(d / f"{name}_f1_runs.csv",
                          ("run", "threshold", "macro_f1", "tn", "fp", "fn", "tp", "tick0", "tick1"), rows),
                write_json(d / f"{name}_summary.json", obj.to_dict())]
    if isinstance(obj, MarginalTrace):
        name = prefix or f"marginal_label{obj.label}"
        rows = zip(obj.ticks, obj.f1_ds1, obj.f1_ds2, obj.l1, obj.jaccard)
        return [write_csv(d / f"{name}.csv", ("tick", "f1_ds1", "f1_ds2", "l1", "jaccard"), rows)]
    from .wgan import TrainTrace

    if isinstance(obj, TrainTrace):
        path = d / f"{prefix or 'trace'}.csv"
        obj.to_csv(path)
        return [path]
    raise ContractError(f"cannot emit a report for {type(obj).__name__}")


def emit_series(real, synthetic, directory, prefix: str = "", bins: int = metrics.DEFAULT_BINS,
                names=None) -> list[Path]:
    """Flattened sorted histogram series and per-feature KDE series of two samples."""
    d = Path(directory)
    real = np.atleast_2d(np.asarray(real, dtype=np.float64))
    syn = np.atleast_2d(np.asarray(synthetic, dtype=np.float64))
    grid = metrics.build_grid(real, syn, bins)
    flat = metrics.flatten_sorted_series(metrics.build_histogram(real, grid), metrics.build_histogram(syn, grid))
    out = [write_csv(d / f"{prefix}flattened.csv", ("rank", "real_count", "synthetic_count"), flat.tolist())]
    names = names or [f"x{j + 1}" for j in range(real.shape[1])]
    for j, name in enumerate(names):
        rows = []
        for source, col in (("real", real[:, j]), ("synthetic", syn[:, j])):
            bw = None if np.std(col) > 0 else 1e-3 * max(1.0, abs(float(col[0])))
            rows += [[source, x, y] for x, y in metrics.kde_series(col, bw)]
        out.append(write_csv(d / f"{prefix}kde_{name}.csv", ("source", "x", "density"), rows))
    return out
