"""Small fully connected networks with hand-written backprop.

Hidden layers run affine -> batch norm (optional) -> LeakyReLU -> dropout.
The output layer is affine followed by either the identity or one Smirnov
activation per output unit. Everything is float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ecdf import SmirnovActivation
from .errors import ContractError, TrainingError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


@dataclass
class MlpConfig:
    widths: list[int]
    leaky_alpha: float = 0.2
    batch_norm: bool = False
    dropout_rate: float = 0.0
    l2_coeff: float = 0.0
    output_activation: str = "linear"  # "linear" or "smirnov"
    smirnov: list[SmirnovActivation] | None = field(default=None, repr=False)

    def __post_init__(self):
        self.widths = [int(w) for w in self.widths]
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ContractError("widths need an input and an output layer, all >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ContractError("dropout_rate must lie in [0, 1)")
        if self.l2_coeff < 0:
            raise ContractError("l2_coeff must be non-negative")
        if self.output_activation not in ("linear", "smirnov"):
            raise ContractError(f"unknown output activation {self.output_activation!r}")
        if self.output_activation == "smirnov":
            if self.smirnov is None or len(self.smirnov) != self.widths[-1]:
                raise ContractError("smirnov output needs one activation per output unit")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def describe(self) -> dict:
        """Plain-data view of the config (activation tables excluded)."""
        return {
            "widths": list(self.widths),
            "leaky_alpha": self.leaky_alpha,
            "batch_norm": self.batch_norm,
            "dropout_rate": self.dropout_rate,
            "l2_coeff": self.l2_coeff,
            "output_activation": self.output_activation,
        }


class Mlp:
    def __init__(self, config: MlpConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params
        self.training = False
        self._cache = None

    @property
    def param_names(self) -> list[str]:
        return list(self.params)

    def copy(self) -> "Mlp":
        return Mlp(self.config, {k: v.copy() for k, v in self.params.items()})

    def _hidden(self, i) -> bool:
        return i < self.config.n_layers - 1

    def forward(self, x, train: bool = False, rng: np.random.Generator | None = None):
        cfg = self.config
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != cfg.widths[0]:
            raise ContractError(f"expected batch of width {cfg.widths[0]}, got shape {x.shape}")
        if train and cfg.dropout_rate > 0 and rng is None:
            raise ContractError("dropout in train mode needs an rng")
        cache = []
        a = x
        for i in range(cfg.n_layers):
            W, b = self.params[f"W{i}"], self.params[f"b{i}"]
            z = a @ W.T + b
            entry = {"a_in": a}
            if self._hidden(i):
                if cfg.batch_norm:
                    if train:
                        mu = z.mean(axis=0)
                        var = z.var(axis=0)
                        rm, rv = self.params[f"rmean{i}"], self.params[f"rvar{i}"]
                        rm *= BN_MOMENTUM
                        rm += (1 - BN_MOMENTUM) * mu
                        rv *= BN_MOMENTUM
                        rv += (1 - BN_MOMENTUM) * var
                    else:
                        mu, var = self.params[f"rmean{i}"], self.params[f"rvar{i}"]
                    inv = 1.0 / np.sqrt(var + BN_EPS)
                    zhat = (z - mu) * inv
                    entry.update(zhat=zhat, inv=inv)
                    z = self.params[f"gamma{i}"] * zhat + self.params[f"beta{i}"]
                entry["z"] = z
                a = np.where(z > 0, z, cfg.leaky_alpha * z)
                if train and cfg.dropout_rate > 0:
                    keep = 1.0 - cfg.dropout_rate
                    mask = (rng.random(a.shape) < keep) / keep
                    entry["mask"] = mask
                    a = a * mask
            else:
                entry["z"] = z
                if cfg.output_activation == "smirnov":
                    out = np.empty_like(z)
                    slope = np.empty_like(z)
                    for j, act in enumerate(cfg.smirnov):
                        out[:, j], slope[:, j] = act.evaluate(z[:, j])
                    entry["slope"] = slope
                    a = out
                else:
                    a = z
            cache.append(entry)
        self._cache = cache if train else None
        self.training = train
        return a

    def __call__(self, x):
        return self.forward(x, train=False)

    def last_preactivations(self) -> list[np.ndarray]:
        """Inputs to each nonlinearity from the last train-mode forward pass."""
        if self._cache is None:
            raise ContractError("no cached train-mode forward pass")
        return [entry["z"] for entry in self._cache]

    def backward(self, upstream):
        """Gradients of ``sum(upstream * output) + l2 * sum(W**2)``.

        Needs the cache of the preceding train-mode forward pass. Returns
        ``(param_grads, input_grad)``.
        """
        if self._cache is None:
            raise ContractError("backward called without a cached train-mode forward pass")
        cfg = self.config
        g = np.asarray(upstream, dtype=np.float64)
        grads: dict[str, np.ndarray] = {}
        for i in reversed(range(cfg.n_layers)):
            entry = self._cache[i]
            if self._hidden(i):
                if "mask" in entry:
                    g = g * entry["mask"]
                z = entry["z"]
                g = g * np.where(z > 0, 1.0, cfg.leaky_alpha)
                if cfg.batch_norm:
                    zhat, inv = entry["zhat"], entry["inv"]
                    grads[f"gamma{i}"] = (g * zhat).sum(axis=0)
                    grads[f"beta{i}"] = g.sum(axis=0)
                    gh = g * self.params[f"gamma{i}"]
                    n = g.shape[0]
                    g = inv / n * (n * gh - gh.sum(axis=0) - zhat * (gh * zhat).sum(axis=0))
            elif "slope" in entry:
                g = g * entry["slope"]
            W = self.params[f"W{i}"]
            grads[f"W{i}"] = g.T @ entry["a_in"] + 2.0 * cfg.l2_coeff * W
            grads[f"b{i}"] = g.sum(axis=0)
            g = g @ W
        ordered = {k: grads[k] for k in self.params if k in grads}
        return ordered, g

    def l2_penalty(self) -> float:
        lam = self.config.l2_coeff
        return lam * sum(float(np.sum(self.params[f"W{i}"] ** 2)) for i in range(self.config.n_layers))


def mlp_init(config: MlpConfig, seed: int) -> Mlp:
    """Fan-in scaled uniform weights, zero biases, unit batch-norm scale."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    w = config.widths
    for i in range(config.n_layers):
        limit = np.sqrt(6.0 / w[i])
        params[f"W{i}"] = rng.uniform(-limit, limit, size=(w[i + 1], w[i]))
        params[f"b{i}"] = np.zeros(w[i + 1])
        if config.batch_norm and i < config.n_layers - 1:
            params[f"gamma{i}"] = np.ones(w[i + 1])
            params[f"beta{i}"] = np.zeros(w[i + 1])
            params[f"rmean{i}"] = np.zeros(w[i + 1])
            params[f"rvar{i}"] = np.ones(w[i + 1])
    return Mlp(config, params)


def forward(net: Mlp, batch, mode: str = "infer", rng=None):
    if mode not in ("train", "infer"):
        raise ContractError(f"mode must be 'train' or 'infer', not {mode!r}")
    return net.forward(batch, train=mode == "train", rng=rng)


def backward(net: Mlp, upstream):
    return net.backward(upstream)


def trainable(name: str) -> bool:
    return not name.startswith(("rmean", "rvar"))


class OptimizerState:
    """Adam or RMSProp state for one network."""

    def __init__(self, algorithm: str, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 rho: float = 0.9, eps: float = 1e-8):
        if algorithm not in ("adam", "rmsprop"):
            raise ContractError(f"unknown optimizer {algorithm!r}")
        self.algorithm = algorithm
        self.lr = lr
        self.beta1, self.beta2, self.rho, self.eps = beta1, beta2, rho, eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, net: Mlp, grads: dict[str, np.ndarray], tick=None):
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for {name}", tick=tick)
        self.step_count += 1
        t = self.step_count
        for name, g in grads.items():
            if not trainable(name):
                continue
            p = net.params[name]
            if name not in self.v:
                self.v[name] = np.zeros_like(p)
                if self.algorithm == "adam":
                    self.m[name] = np.zeros_like(p)
            v = self.v[name]
            if self.algorithm == "adam":
                m = self.m[name]
                m *= self.beta1
                m += (1 - self.beta1) * g
                v *= self.beta2
                v += (1 - self.beta2) * g * g
                mhat = m / (1 - self.beta1 ** t)
                vhat = v / (1 - self.beta2 ** t)
                p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
            else:
                v *= self.rho
                v += (1 - self.rho) * g * g
                p -= self.lr * g / np.sqrt(v + self.eps)
        return net, self


def optimizer_step(state: OptimizerState, net: Mlp, grads, tick=None):
    return state.step(net, grads, tick=tick)
