"""Finite-difference oracles for network and Smirnov-activation gradients.

The oracle evaluates the loss with its own reference forward pass in
extended precision (``np.longdouble``), so it shares no code with
``Mlp.forward`` and its rounding noise sits well below the tolerance. It
uses the five-point central difference with step ``h``, exact for cubics
and so for the Smirnov interpolant inside one knot segment.

The interpolant is only C1 across knots and LeakyReLU has a kink at zero;
a stencil straddling one of those points is counted as ``straddled``
instead of being scored.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ecdf import SmirnovActivation
from .nn import BN_EPS, Mlp

XP = np.longdouble


@dataclass
class GradCheckResult:
    max_rel_error: float = 0.0
    checked: int = 0
    straddled: int = 0
    worst: tuple | None = None
    failures: list = field(default_factory=list)

    @property
    def straddle_fraction(self) -> float:
        total = self.checked + self.straddled
        return self.straddled / total if total else 0.0

    def merge(self, other: "GradCheckResult") -> "GradCheckResult":
        self.checked += other.checked
        self.straddled += other.straddled
        self.failures += other.failures
        if other.max_rel_error > self.max_rel_error:
            self.max_rel_error, self.worst = other.max_rel_error, other.worst
        return self


def rel_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b))


def hermite_reference(act: SmirnovActivation, y):
    """Knot-table evaluation in the standard Hermite basis; returns (value, segment)."""
    ky = act.knots_y.astype(XP)
    kx = act.knots_x.astype(XP)
    s = act.slopes.astype(XP)
    y = np.asarray(y, dtype=XP)
    seg = np.searchsorted(act.knots_y, y.astype(np.float64), side="right")
    i = np.clip(seg - 1, 0, ky.size - 2)
    h = ky[i + 1] - ky[i]
    t = np.clip((y - ky[i]) / h, 0, 1)
    t2, t3 = t * t, t * t * t
    val = ((2 * t3 - 3 * t2 + 1) * kx[i] + (t3 - 2 * t2 + t) * h * s[i]
           + (-2 * t3 + 3 * t2) * kx[i + 1] + (t3 - t2) * h * s[i + 1])
    return val, seg


def reference_forward(net: Mlp, params: dict, x, dropout_seed: int):
    """Train-mode forward of ``net``'s architecture in extended precision.

    Returns the output and a list of per-layer segment keys used to detect
    stencils that cross a kink or a knot.
    """
    cfg = net.config
    rng = np.random.default_rng(dropout_seed)
    a = np.asarray(x, dtype=XP)
    keys = []
    for i in range(cfg.n_layers):
        z = a @ params[f"W{i}"].T + params[f"b{i}"]
        if i < cfg.n_layers - 1:
            if cfg.batch_norm:
                mu = z.mean(axis=0)
                var = ((z - mu) ** 2).mean(axis=0)
                z = params[f"gamma{i}"] * (z - mu) / np.sqrt(var + XP(BN_EPS)) + params[f"beta{i}"]
            keys.append(z > 0)
            a = np.where(z > 0, z, XP(cfg.leaky_alpha) * z)
            if cfg.dropout_rate > 0:
                keep = 1.0 - cfg.dropout_rate
                # same draw order as Mlp.forward
                a = a * ((rng.random(a.shape) < keep) / keep)
        elif cfg.output_activation == "smirnov":
            cols, segs = zip(*(hermite_reference(act, z[:, j]) for j, act in enumerate(cfg.smirnov)))
            a = np.stack(cols, axis=1)
            keys.append(np.stack(segs, axis=1))
        else:
            a = z
    return a, keys


def check_network(net: Mlp, x, upstream, step: float = 1e-5, tol: float = 1e-4,
                  min_grad: float = 1e-6, dropout_seed: int = 0) -> GradCheckResult:
    """Compare ``net.backward`` with finite differences of
    ``sum(upstream * forward(x)) + l2 * sum(W**2)`` for every trainable entry."""
    saved = {k: v.copy() for k, v in net.params.items()}
    net.forward(x, train=True, rng=np.random.default_rng(dropout_seed))
    grads, _ = net.backward(upstream)
    net.params.update({k: v.copy() for k, v in saved.items()})

    base = {k: v.astype(XP) for k, v in saved.items()}
    up = np.asarray(upstream, dtype=XP)
    lam = XP(net.config.l2_coeff)
    n_layers = net.config.n_layers

    def loss(params):
        out, keys = reference_forward(net, params, x, dropout_seed)
        l2 = lam * sum(np.sum(params[f"W{i}"] ** 2) for i in range(n_layers))
        return np.sum(out * up) + l2, keys

    res = GradCheckResult()
    h = XP(step)
    for name, g in grads.items():
        p = base[name]
        for idx in np.ndindex(p.shape):
            analytic = float(g[idx])
            if abs(analytic) <= min_grad:
                continue
            old = p[idx]
            evals = []
            for k in (2, 1, -1, -2):
                p[idx] = old + k * h
                evals.append(loss(base))
            p[idx] = old
            k0 = evals[0][1]
            if any(np.any(a != b) for _, ks in evals[1:] for a, b in zip(k0, ks)):
                res.straddled += 1
                continue
            (l2p, _), (l1p, _), (l1m, _), (l2m, _) = evals
            fd = float((8 * (l1p - l1m) - (l2p - l2m)) / (12 * h))
            err = rel_error(analytic, fd)
            res.checked += 1
            if err > res.max_rel_error:
                res.max_rel_error, res.worst = err, (name, idx, analytic, fd)
            if err >= tol:
                res.failures.append((name, idx, analytic, fd, err))
    return res


def check_activation(act: SmirnovActivation, points, step: float = 1e-5, tol: float = 1e-4,
                     min_grad: float = 1e-6) -> GradCheckResult:
    y = np.asarray(points, dtype=np.float64)
    _, d = act.evaluate(y)
    yx = y.astype(XP)
    h = XP(step)
    vals, segs = zip(*(hermite_reference(act, yx + k * h) for k in (2, 1, -1, -2)))
    fd = (8 * (vals[1] - vals[2]) - (vals[0] - vals[3])) / (12 * h)
    straddle = np.any(np.stack(segs) != segs[0], axis=0)
    res = GradCheckResult()
    for yi, di, fi, bad in zip(y, d, fd.astype(np.float64), straddle):
        if di <= min_grad:
            continue
        if bad:
            res.straddled += 1
            continue
        err = rel_error(di, fi)
        res.checked += 1
        if err > res.max_rel_error:
            res.max_rel_error, res.worst = err, (yi, di, fi)
        if err >= tol:
            res.failures.append((yi, di, fi, err))
    return res
