"""Histogram-based fidelity metrics over a shared cube partition.

Both samples are binned on one uniform grid spanning their joint range;
the L1 distance sums absolute per-cube mass differences (range [0, 2]) and
the Jaccard index compares the sets of occupied cubes.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, GridError, MetricError

DEFAULT_BINS = 10
DEGENERATE_WIDTH = 1e-9
UPPER_WIDEN = 1e-9


@dataclass(frozen=True)
class GridSpec:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    bins: tuple[int, ...]

    def __post_init__(self):
        if not (len(self.lower) == len(self.upper) == len(self.bins)):
            raise GridError("grid bounds and bin counts must have equal length")
        for lo, hi, b in zip(self.lower, self.upper, self.bins):
            if not lo < hi:
                raise GridError(f"lower bound {lo} is not below upper bound {hi}")
            if b < 1:
                raise GridError("bin count must be at least 1")

    @property
    def ndim(self) -> int:
        return len(self.bins)

    @property
    def n_cubes(self) -> int:
        return int(np.prod(self.bins, dtype=np.int64))

    def cube_index(self, samples):
        """Flattened cube index per row, or -1 for rows outside the grid."""
        x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
        if x.shape[1] != self.ndim:
            raise ContractError(f"samples have {x.shape[1]} columns, grid has {self.ndim}")
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        nb = np.asarray(self.bins)
        pos = np.floor((x - lo) / (hi - lo) * nb).astype(np.int64)
        # the top edge belongs to the last bin
        pos = np.where(x == hi, nb - 1, pos)
        inside = np.all((x >= lo) & (x <= hi), axis=1)
        pos = np.clip(pos, 0, nb - 1)
        flat = np.ravel_multi_index(pos.T, tuple(self.bins)) if x.shape[0] else np.zeros(0, np.int64)
        return np.where(inside, flat, -1)


@dataclass(frozen=True)
class HistogramGrid:
    grid: GridSpec
    counts: dict  # cube index -> sample count, positive entries only
    n: int
    out_of_range: int

    @property
    def mass(self) -> dict:
        return {k: c / self.n for k, c in self.counts.items()}

    def support(self) -> set:
        return set(self.counts)


def build_grid(real_samples, synthetic_samples, bins_per_dim: int = DEFAULT_BINS) -> GridSpec:
    parts = [np.atleast_2d(np.asarray(s, dtype=np.float64)) for s in (real_samples, synthetic_samples)
             if s is not None and np.size(s)]
    if not parts:
        raise GridError("cannot build a grid from an empty sample union")
    if bins_per_dim < 1:
        raise GridError("bins_per_dim must be at least 1")
    union = np.vstack(parts)
    lo = union.min(axis=0)
    hi = union.max(axis=0)
    span = hi - lo
    bins = np.full(lo.size, bins_per_dim)
    degenerate = span == 0
    scale = np.maximum(np.abs(hi), 1.0)
    upper = np.where(degenerate, lo + DEGENERATE_WIDTH * scale, hi + UPPER_WIDEN * span)
    bins = np.where(degenerate, 1, bins)
    return GridSpec(tuple(map(float, lo)), tuple(map(float, upper)), tuple(map(int, bins)))


def build_histogram(samples, grid: GridSpec) -> HistogramGrid:
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    n = x.shape[0]
    idx = grid.cube_index(x)
    inside = idx[idx >= 0]
    keys, counts = np.unique(inside, return_counts=True)
    return HistogramGrid(grid, dict(zip(keys.tolist(), counts.tolist())), n, int(n - inside.size))


def _check_same_grid(a: HistogramGrid, b: HistogramGrid):
    if a.grid != b.grid:
        raise MetricError("histograms are defined on different grids")


def l1_distance(a: HistogramGrid, b: HistogramGrid) -> float:
    _check_same_grid(a, b)
    total = 0.0
    for k in sorted(a.support() | b.support()):
        total += abs(a.counts.get(k, 0) / a.n - b.counts.get(k, 0) / b.n)
    return total


def jaccard_index(a: HistogramGrid, b: HistogramGrid) -> float:
    _check_same_grid(a, b)
    sa, sb = a.support(), b.support()
    union = sa | sb
    if not union:
        warnings.warn("both supports are empty; Jaccard index defined as 1", RuntimeWarning)
        return 1.0
    return len(sa & sb) / len(union)


def compare(real, synthetic, bins_per_dim: int = DEFAULT_BINS) -> tuple[float, float]:
    """L1 distance and Jaccard index of two samples on their joint grid."""
    grid = build_grid(real, synthetic, bins_per_dim)
    hr = build_histogram(real, grid)
    hs = build_histogram(synthetic, grid)
    return l1_distance(hr, hs), jaccard_index(hr, hs)


def flatten_sorted_series(h_real: HistogramGrid, h_syn: HistogramGrid) -> np.ndarray:
    """Rows of ``(rank, real_count, syn_count)`` for every occupied cube.

    Cubes only the synthetic sample reaches come first, then real cubes by
    ascending real count. Ties keep cube-index order.
    """
    _check_same_grid(h_real, h_syn)
    syn_only = sorted(h_syn.support() - h_real.support(), key=lambda k: (h_syn.counts[k], k))
    real = sorted(h_real.support(), key=lambda k: (h_real.counts[k], k))
    rows = [(0, h_syn.counts[k]) for k in syn_only]
    rows += [(h_real.counts[k], h_syn.counts.get(k, 0)) for k in real]
    out = np.zeros((len(rows), 3), dtype=np.int64)
    if rows:
        out[:, 0] = np.arange(len(rows))
        out[:, 1:] = rows
    return out


def kde_series(samples, bandwidth: float | None = None, grid_points: int = 512) -> np.ndarray:
    """Gaussian KDE on a uniform grid spanning the sample range +- 3 bandwidths.

    Without an explicit bandwidth, Scott's rule is used.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise MetricError("KDE needs at least one sample")
    if bandwidth is None:
        sd = x.std(ddof=1) if x.size > 1 else 0.0
        if sd == 0:
            raise MetricError("zero-variance sample: pass an explicit bandwidth")
        bandwidth = sd * x.size ** (-1 / 5)
    if not bandwidth > 0:
        raise MetricError("bandwidth must be positive")
    lo, hi = x.min() - 3 * bandwidth, x.max() + 3 * bandwidth
    grid = np.linspace(lo, hi, grid_points)
    dens = np.zeros(grid_points)
    norm = 1.0 / (x.size * bandwidth * np.sqrt(2 * np.pi))
    for chunk in np.array_split(x, max(1, x.size // 4096)):
        u = (grid[:, None] - chunk[None, :]) / bandwidth
        dens += np.exp(-0.5 * u * u).sum(axis=1)
    return np.column_stack([grid, dens * norm])
