"""Empirical CDFs, generalized quantiles and the Smirnov output activation.

The activation maps a standard-normal pre-activation ``y`` to
``quantile(Phi(y))`` of a fitted sample, smoothed with a monotone cubic
Hermite interpolant so it can sit at the end of a network and pass
gradients.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import DomainError, FitError

DEFAULT_N_KNOTS = 1024
DEFAULT_CLIP = 6.0
DISCRETE_MAX_ATOMS = 64


@dataclass(frozen=True)
class EmpiricalCdf:
    sorted_values: np.ndarray

    @property
    def m(self) -> int:
        return self.sorted_values.size

    @property
    def levels(self) -> np.ndarray:
        # k/m for k = 1..m, computed the same way eval() divides
        return np.arange(1, self.m + 1) / self.m

    def eval(self, x):
        counts = np.searchsorted(self.sorted_values, x, side="right")
        return counts / self.m

    def quantile(self, p):
        return quantile(self, p)

    def atoms(self) -> np.ndarray:
        return np.unique(self.sorted_values)


def fit_ecdf(samples) -> EmpiricalCdf:
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise FitError("cannot fit an empirical CDF to an empty sample")
    bad = np.flatnonzero(~np.isfinite(x))
    if bad.size:
        raise DomainError(f"non-finite sample value at index {bad[0]}")
    values = np.sort(x, kind="stable")
    values.setflags(write=False)
    return EmpiricalCdf(values)


def _quantile_unchecked(ecdf: EmpiricalCdf, p):
    # first level k/m >= p; p <= 0 falls on the minimum
    idx = np.searchsorted(ecdf.levels, p, side="left")
    idx = np.minimum(idx, ecdf.m - 1)
    return ecdf.sorted_values[idx]


def quantile(ecdf: EmpiricalCdf, p):
    """Generalized inverse ``min{z : F(z) >= p}`` for ``0 < p <= 1``."""
    arr = np.asarray(p, dtype=np.float64)
    if np.any(~(arr > 0.0)) or np.any(arr > 1.0):
        raise DomainError("quantile level must lie in (0, 1]")
    out = _quantile_unchecked(ecdf, arr)
    return float(out) if np.ndim(out) == 0 else out


def std_normal_cdf(x):
    """Standard normal CDF via the complementary error function."""
    out = ndtr(np.asarray(x, dtype=np.float64))
    return float(out) if np.ndim(out) == 0 else out


def exact_smirnov(ecdf: EmpiricalCdf, y):
    """Uninterpolated composite ``quantile(Phi(y))``."""
    out = _quantile_unchecked(ecdf, ndtr(np.asarray(y, dtype=np.float64)))
    return float(out) if np.ndim(out) == 0 else out


def fritsch_carlson_slopes(xk: np.ndarray, yk: np.ndarray) -> np.ndarray:
    """Knot slopes for a monotone cubic Hermite interpolant of ``yk`` over ``xk``.

    End slopes are pinned to zero so the constant extension beyond the last
    knots stays C1.
    """
    h = np.diff(xk)
    delta = np.diff(yk) / h
    m = np.empty_like(yk)
    m[1:-1] = 0.5 * (delta[:-1] + delta[1:])
    m[1:-1][delta[:-1] * delta[1:] <= 0.0] = 0.0
    m[0] = m[-1] = 0.0
    for k in range(delta.size):
        if delta[k] == 0.0:
            m[k] = m[k + 1] = 0.0
            continue
        a = m[k] / delta[k]
        b = m[k + 1] / delta[k]
        r = a * a + b * b
        if r > 9.0:
            tau = 3.0 / np.sqrt(r)
            m[k] = tau * a * delta[k]
            m[k + 1] = tau * b * delta[k]
    return m


@dataclass(frozen=True)
class SmirnovActivation:
    knots_y: np.ndarray
    knots_x: np.ndarray
    slopes: np.ndarray
    atoms: np.ndarray | None = None
    degenerate: bool = False
    clip: float = DEFAULT_CLIP
    _h: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for arr in (self.knots_y, self.knots_x, self.slopes):
            arr.setflags(write=False)
        object.__setattr__(self, "_h", np.diff(self.knots_y))

    @property
    def clip_range(self) -> tuple[float, float]:
        return float(self.knots_y[0]), float(self.knots_y[-1])

    @property
    def is_discrete(self) -> bool:
        return self.atoms is not None

    def evaluate(self, y):
        """Return ``(value, derivative)`` arrays with the shape of ``y``."""
        y = np.asarray(y, dtype=np.float64)
        ky, kx, s = self.knots_y, self.knots_x, self.slopes
        i = np.clip(np.searchsorted(ky, y, side="right") - 1, 0, ky.size - 2)
        h = self._h[i]
        t = (y - ky[i]) / h
        inside = (y >= ky[0]) & (y <= ky[-1])
        t = np.where(inside, t, np.where(y < ky[0], 0.0, 1.0))
        t2 = t * t
        t3 = t2 * t
        x0, x1 = kx[i], kx[i + 1]
        m0, m1 = s[i] * h, s[i + 1] * h
        dx = x1 - x0
        # offset form keeps plateaus (dx = 0, zero slopes) exactly flat
        value = x0 + dx * (3 * t2 - 2 * t3) + m0 * (t3 - 2 * t2 + t) + m1 * (t3 - t2)
        value = np.clip(value, x0, x1)
        deriv = (dx * (6 * t - 6 * t2) + m0 * (3 * t2 - 4 * t + 1) + m1 * (3 * t2 - 2 * t)) / h
        deriv = np.maximum(deriv, 0.0)
        deriv = np.where(inside, deriv, 0.0)
        return value, deriv

    def __call__(self, y):
        return self.evaluate(y)[0]

    def snap(self, values):
        """Project values to the nearest training atom (no-op for continuous targets)."""
        if self.atoms is None:
            return np.asarray(values, dtype=np.float64)
        v = np.asarray(values, dtype=np.float64)
        a = self.atoms
        if a.size == 1:
            return np.full(v.shape, a[0])
        j = np.clip(np.searchsorted(a, v), 1, a.size - 1)
        left, right = a[j - 1], a[j]
        return np.where(v - left <= right - v, left, right)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["knot_y", "knot_x", "slope"])
            for row in zip(self.knots_y, self.knots_x, self.slopes):
                w.writerow([repr(float(v)) for v in row])


def activation_eval(act: SmirnovActivation, y):
    value, deriv = act.evaluate(y)
    if np.ndim(value) == 0:
        return float(value), float(deriv)
    return value, deriv


def _jump_locations(ecdf: EmpiricalCdf, clip: float) -> np.ndarray:
    from scipy.special import ndtri

    # the composite jumps from atom k to atom k+1 where Phi(y) crosses F(atom k)
    atoms = ecdf.atoms()
    cum = ecdf.eval(atoms[:-1])
    ys = ndtri(cum)
    return ys[(ys > -clip) & (ys < clip)]


def build_smirnov_activation(samples, n_knots: int = DEFAULT_N_KNOTS,
                             clip: float = DEFAULT_CLIP,
                             discrete_max_atoms: int = DISCRETE_MAX_ATOMS) -> SmirnovActivation:
    if n_knots < 4:
        raise DomainError("n_knots must be at least 4")
    if not clip > 0:
        raise DomainError("clip must be positive")
    ecdf = fit_ecdf(samples)
    atoms = ecdf.atoms()
    ky = np.linspace(-clip, clip, n_knots)
    if atoms.size == 1:
        warnings.warn("degenerate sample: Smirnov activation is constant", RuntimeWarning)
        kx = np.full(n_knots, atoms[0])
        return SmirnovActivation(ky, kx, np.zeros(n_knots), atoms=atoms, degenerate=True, clip=clip)

    discrete = atoms.size <= discrete_max_atoms
    if discrete:
        spacing = ky[1] - ky[0]
        jumps = _jump_locations(ecdf, clip)
        eps = 0.25 * spacing
        extra = np.concatenate([jumps - eps, jumps + eps])
        extra = extra[(extra > -clip) & (extra < clip)]
        ky = np.unique(np.concatenate([ky, extra]))
        # drop grid knots that crowd an inserted pair
        keep = np.ones(ky.size, bool)
        for j in jumps:
            near = (np.abs(ky - j) < eps * 1.5) & (np.abs(np.abs(ky - j) - eps) > 1e-12)
            keep &= ~near
        keep[0] = keep[-1] = True
        ky = ky[keep]
    kx = exact_smirnov(ecdf, ky)
    slopes = fritsch_carlson_slopes(ky, kx)
    return SmirnovActivation(ky, kx, slopes, atoms=atoms if discrete else None, clip=clip)
