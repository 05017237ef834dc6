"""Rendered benchmark data, CSV ingestion and labeled splits."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import ConfigError, ContractError, DataError, FormatError, SplitError
from .report import format_value

# canonical column names for the cryptomining flow corpus
FLOW_FEATURES = ("client_bytes", "server_rtt", "outbound_bytes_per_packet", "in_out_packet_ratio")

_PARAMS = {
    "normal": ("mu", "sigma"),
    "binomial": ("n", "p"),
    "exponential": ("scale",),
    "poisson": ("lam",),
    "discrete_uniform": ("lo", "hi"),
    "snedecor_f": ("nu1", "nu2"),
}
DISCRETE_KINDS = {"binomial", "poisson", "discrete_uniform"}


def _open_unit(rng: np.random.Generator, n: int) -> np.ndarray:
    # uniforms strictly inside (0, 1) so inversion never hits ppf(0) or ppf(1)
    return (rng.integers(0, 2 ** 53, size=n, dtype=np.int64) + 0.5) / 2.0 ** 53


@dataclass(frozen=True)
class FeatureSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _PARAMS:
            raise ConfigError(f"unknown distribution tag {self.kind!r}")
        want = set(_PARAMS[self.kind])
        if set(self.params) != want:
            raise ConfigError(f"{self.kind} needs parameters {sorted(want)}, got {sorted(self.params)}")
        p = self.params
        bad = {
            "normal": lambda: not p["sigma"] > 0,
            "binomial": lambda: not (0 <= p["p"] <= 1) or int(p["n"]) != p["n"] or p["n"] < 0,
            "exponential": lambda: not p["scale"] > 0,
            "poisson": lambda: not p["lam"] > 0,
            "discrete_uniform": lambda: int(p["lo"]) != p["lo"] or int(p["hi"]) != p["hi"] or p["lo"] > p["hi"],
            "snedecor_f": lambda: not (p["nu1"] > 0 and p["nu2"] > 0),
        }[self.kind]
        if bad():
            raise ConfigError(f"invalid parameters for {self.kind}: {p}")

    @property
    def is_discrete(self) -> bool:
        return self.kind in DISCRETE_KINDS

    def describe(self) -> str:
        args = ", ".join(f"{k}={self.params[k]}" for k in _PARAMS[self.kind])
        return f"{self.kind}({args})"

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        p = self.params
        if self.kind == "normal":
            return rng.normal(p["mu"], p["sigma"], size=n)
        if self.kind == "exponential":
            return rng.exponential(p["scale"], size=n)
        if self.kind == "binomial":
            return stats.binom.ppf(_open_unit(rng, n), int(p["n"]), p["p"]).astype(np.float64)
        if self.kind == "poisson":
            return stats.poisson.ppf(_open_unit(rng, n), p["lam"]).astype(np.float64)
        if self.kind == "discrete_uniform":
            return rng.integers(int(p["lo"]), int(p["hi"]) + 1, size=n).astype(np.float64)
        # F as a ratio of scaled chi-square draws
        num = rng.chisquare(p["nu1"], size=n) / p["nu1"]
        den = rng.chisquare(p["nu2"], size=n) / p["nu2"]
        return num / den


def normal(mu=0.0, sigma=1.0):
    return FeatureSpec("normal", {"mu": mu, "sigma": sigma})


def binomial(n, p):
    return FeatureSpec("binomial", {"n": n, "p": p})


def exponential(scale):
    return FeatureSpec("exponential", {"scale": scale})


def poisson(lam):
    return FeatureSpec("poisson", {"lam": lam})


def discrete_uniform(lo, hi):
    return FeatureSpec("discrete_uniform", {"lo": lo, "hi": hi})


def snedecor_f(nu1, nu2):
    return FeatureSpec("snedecor_f", {"nu1": nu1, "nu2": nu2})


RENDERED_SPECS: dict[int, list[FeatureSpec]] = {
    0: [normal(0.0, 1.0), binomial(15, 0.3), exponential(3.0), poisson(1.0)],
    1: [normal(0.0, 1.0), discrete_uniform(0, 15), snedecor_f(3, 3), poisson(2.0)],
}


def spec_from_dict(d: dict) -> FeatureSpec:
    if not isinstance(d, dict) or "kind" not in d:
        raise ConfigError(f"feature spec needs a 'kind' field: {d!r}")
    return FeatureSpec(d["kind"], {k: v for k, v in d.items() if k != "kind"})


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]
    provenance: str = ""

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels).astype(np.int8)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.size:
            raise ContractError("features must be n x d and labels length n")
        if x.shape[1] != len(self.feature_names):
            raise ContractError("feature name count does not match feature width")
        if not np.all(np.isfinite(x)):
            raise DataError("features must be finite")
        if not np.all((y == 0) | (y == 1)):
            raise DataError("labels must be 0 or 1")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n(self) -> int:
        return self.labels.size

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def counts(self) -> tuple[int, int]:
        return int(np.sum(self.labels == 0)), int(np.sum(self.labels == 1))

    def rows(self, label: int) -> np.ndarray:
        return self.features[self.labels == label]

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.features[idx], self.labels[idx], self.feature_names, self.provenance)

    @classmethod
    def from_parts(cls, parts: dict, feature_names, provenance: str = "") -> "LabeledDataset":
        """Stack per-label matrices (label 0 rows first)."""
        xs, ys = [], []
        for label in sorted(parts):
            m = np.asarray(parts[label], dtype=np.float64)
            xs.append(m)
            ys.append(np.full(m.shape[0], label, dtype=np.int8))
        return cls(np.vstack(xs), np.concatenate(ys), tuple(feature_names), provenance)


def render_dataset(specs_per_label: dict, n_per_label: int, seed, names=None) -> LabeledDataset:
    """Independent draws per feature and label from seeded child streams."""
    if n_per_label < 0:
        raise ConfigError("n_per_label must be non-negative")
    specs = {int(k): [s if isinstance(s, FeatureSpec) else spec_from_dict(s) for s in v]
             for k, v in specs_per_label.items()}
    widths = {len(v) for v in specs.values()}
    if len(widths) != 1:
        raise ConfigError("all labels must have the same number of features")
    d = widths.pop()
    parts = {}
    for label in sorted(specs):
        # one child stream per (label, feature), independent of the other labels' sizes
        streams = np.random.SeedSequence(seed, spawn_key=(label,)).spawn(d)
        cols = [s.sample(np.random.default_rng(ss), n_per_label) for s, ss in zip(specs[label], streams)]
        parts[label] = np.column_stack(cols) if cols else np.zeros((n_per_label, 0))
    names = tuple(names) if names else tuple(f"x{j + 1}" for j in range(d))
    desc = "; ".join(f"label {k}: " + ", ".join(s.describe() for s in specs[k]) for k in sorted(specs))
    return LabeledDataset.from_parts(parts, names, f"rendered seed={seed} n_per_label={n_per_label}; {desc}")


def render_preset(n_per_label: int, seed) -> LabeledDataset:
    return render_dataset(RENDERED_SPECS, n_per_label, seed)


def write_csv(ds: LabeledDataset, path) -> Path:
    from .report import _atomic_write

    lines = [",".join([*ds.feature_names, "label"])]
    for row, y in zip(ds.features.tolist(), ds.labels.tolist()):
        lines.append(",".join([*(format_value(v) for v in row), str(y)]))
    return _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def load_csv(path, schema=None) -> LabeledDataset:
    """Read a CSV whose last column is ``label``; ``schema`` optionally fixes feature names."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[-1].strip() != "label":
            raise FormatError(f"{path}: last header column must be 'label'", section="header")
        names = [h.strip() for h in header[:-1]]
        if schema is not None and list(schema) != names:
            raise FormatError(f"{path}: header {names} does not match schema {list(schema)}", section="header")
        xs, ys = [], []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}", section="row")
            try:
                vals = [float(v) for v in row[:-1]]
                lab = float(row[-1])
            except ValueError:
                raise FormatError(f"{path}:{line}: non-numeric field", section="row") from None
            if lab not in (0.0, 1.0):
                raise DataError(f"{path}:{line}: unknown label value {row[-1]!r}")
            if not all(math.isfinite(v) for v in vals):
                raise FormatError(f"{path}:{line}: non-finite feature value", section="row")
            xs.append(vals)
            ys.append(int(lab))
    x = np.array(xs, dtype=np.float64).reshape(len(xs), len(names))
    return LabeledDataset(x, np.array(ys, dtype=np.int8), tuple(names), f"csv {path.name}")


def split(ds: LabeledDataset, fraction: float, seed, stratified: bool = True):
    """Disjoint (first, second) split; ``first`` holds about ``fraction`` of the rows."""
    if not 0 < fraction < 1:
        raise SplitError("fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    if stratified:
        take = []
        for label in (0, 1):
            idx = np.flatnonzero(ds.labels == label)
            if idx.size == 0:
                continue
            if idx.size < 2:
                raise SplitError(f"label {label} has fewer than 2 rows; cannot stratify")
            k = int(round(fraction * idx.size))
            take.append(rng.permutation(idx)[:k])
        first = np.concatenate(take) if take else np.zeros(0, np.int64)
    else:
        first = rng.permutation(ds.n)[: int(round(fraction * ds.n))]
    mask = np.zeros(ds.n, bool)
    mask[first] = True
    return ds.subset(np.flatnonzero(mask)), ds.subset(np.flatnonzero(~mask))


def write_manifest(ds: LabeledDataset, path, seed=None, extra: dict | None = None) -> Path:
    from .report import _atomic_write

    n0, n1 = ds.counts()
    lines = [f"provenance: {ds.provenance}", f"seed: {seed}", f"rows: {ds.n}",
             f"label_counts: {n0} {n1}", f"features: {', '.join(ds.feature_names)}",
             "exponential parameter: scale (mean)"]
    lines += [f"{k}: {v}" for k, v in sorted((extra or {}).items())]
    return _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))
