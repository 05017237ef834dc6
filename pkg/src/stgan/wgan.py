"""Per-label WGAN training with a Smirnov (or linear) generator output.

The critic minimizes ``mean(D(fake)) - mean(D(real))`` and the generator
minimizes ``-mean(D(fake))``, with no clipping or gradient penalty. The
generator is snapshotted every ``checkpoint_interval`` mini-batches.
"""
from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics
from .ecdf import DEFAULT_CLIP, DEFAULT_N_KNOTS, SmirnovActivation, build_smirnov_activation
from .errors import ConfigError, ContractError, DataError, FormatError, TrainingError
from .nn import Mlp, MlpConfig, OptimizerState, mlp_init

MAGIC = b"STGAN"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class LatentConfig:
    dimension: int = 100
    family: str = "uniform"
    scale: float = 1.5  # standard deviation of each latent coordinate

    def __post_init__(self):
        if self.dimension < 1:
            raise ConfigError("latent dimension must be >= 1")
        if self.family not in ("normal", "uniform"):
            raise ConfigError(f"unknown latent noise family {self.family!r}")
        if not self.scale > 0:
            raise ConfigError("latent noise scale must be positive")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.family == "normal":
            return rng.normal(0.0, self.scale, size=(n, self.dimension))
        half = self.scale * math.sqrt(3.0)
        return rng.uniform(-half, half, size=(n, self.dimension))


@dataclass(frozen=True)
class NetSpec:
    """Architecture and optimizer settings for one network of a GAN."""

    hidden: tuple[int, ...]
    leaky_alpha: float
    batch_norm: bool
    l2: float
    dropout: float
    lr: float

    def scaled(self, factor: float, floor: int = 8) -> "NetSpec":
        return replace(self, hidden=tuple(max(floor, int(round(w * factor))) for w in self.hidden))


@dataclass(frozen=True)
class GanSpec:
    generator: NetSpec
    critic: NetSpec
    latent: LatentConfig

    def scaled(self, factor: float) -> "GanSpec":
        return replace(self, generator=self.generator.scaled(factor), critic=self.critic.scaled(factor))


# Hyperparameter table of the two use cases; the trailing output width is
# implied by the feature count (generator) or 1 (critic).
_RENDERED_G = NetSpec((500, 3000, 5000, 400), 0.2, True, 0.1, 0.0, 1e-3)
_RENDERED_D = NetSpec((280, 503, 177, 23), 0.15, True, 0.001, 0.0, 1e-4)
PRESETS: dict[str, dict[int, GanSpec]] = {
    "rendered": {
        0: GanSpec(_RENDERED_G, _RENDERED_D, LatentConfig(100, "uniform", 1.5)),
        1: GanSpec(_RENDERED_G, _RENDERED_D, LatentConfig(100, "uniform", 1.5)),
    },
    "flows": {
        0: GanSpec(NetSpec((200, 500, 3000, 500), 0.2, True, 0.0, 0.0, 1e-3),
                   NetSpec((380, 800, 600, 177, 23), 0.15, True, 0.02, 0.1, 1e-3),
                   LatentConfig(123, "normal", 0.5)),
        1: GanSpec(NetSpec((600, 3000, 1000), 0.2, True, 0.0, 0.0, 1e-3),
                   NetSpec((280, 903, 500, 23), 0.15, True, 0.05, 0.15, 1e-3),
                   LatentConfig(123, "normal", 0.5)),
    },
}


def get_preset(name: str, label: int, scale: float = 1.0) -> GanSpec:
    try:
        spec = PRESETS[name][label]
    except KeyError:
        raise ConfigError(f"no preset {name!r} for label {label}") from None
    return spec if scale == 1.0 else spec.scaled(scale)


FULL_BATCH = 800
DESK_SCALE = 0.1
DESK_BATCH = 128


def desk_preset(name: str, label: int, scale: float = DESK_SCALE, batch_size: int = DESK_BATCH) -> GanSpec:
    """Width-scaled preset for small runs; the generator lr follows the batch size linearly."""
    spec = get_preset(name, label, scale)
    gen = replace(spec.generator, lr=spec.generator.lr * batch_size / FULL_BATCH)
    return replace(spec, generator=gen)


@dataclass(frozen=True)
class TrainSchedule:
    batch_size: int = 800
    total_minibatches: int = 25_000
    checkpoint_interval: int = 10
    eval_interval: int = 10
    critic_steps: int = 1
    seed: int = 0

    def __post_init__(self):
        if min(self.batch_size, self.checkpoint_interval, self.eval_interval, self.critic_steps) < 1:
            raise ConfigError("batch size, intervals and critic steps must be >= 1")
        if self.total_minibatches < 0:
            raise ConfigError("total_minibatches must be >= 0")
        if self.eval_interval % self.checkpoint_interval:
            raise ConfigError("eval_interval must be a multiple of checkpoint_interval")

    @property
    def n_ticks(self) -> int:
        return self.total_minibatches // self.checkpoint_interval


def build_generator_config(spec: NetSpec, latent: LatentConfig, real_data, activation: str = "smirnov",
                           n_knots: int = DEFAULT_N_KNOTS, clip: float = DEFAULT_CLIP) -> MlpConfig:
    data = np.asarray(real_data, dtype=np.float64)
    widths = [latent.dimension, *spec.hidden, data.shape[1]]
    acts = None
    if activation == "smirnov":
        acts = [build_smirnov_activation(data[:, j], n_knots=n_knots, clip=clip) for j in range(data.shape[1])]
    elif activation != "linear":
        raise ConfigError(f"unknown activation {activation!r}; expected 'smirnov' or 'linear'")
    return MlpConfig(widths, spec.leaky_alpha, spec.batch_norm, spec.dropout, spec.l2, activation, acts)


def build_critic_config(spec: NetSpec, n_features: int) -> MlpConfig:
    return MlpConfig([n_features, *spec.hidden, 1], spec.leaky_alpha, spec.batch_norm, spec.dropout, spec.l2)


@dataclass
class GeneratorCheckpoint:
    label: int
    tick: int
    minibatch: int
    epoch: int
    config: MlpConfig
    params: dict
    latent: LatentConfig
    snap_discrete: bool = True
    version: int = FORMAT_VERSION

    @property
    def n_features(self) -> int:
        return self.config.widths[-1]

    def network(self) -> Mlp:
        return Mlp(self.config, self.params)

    def generate(self, n: int, seed) -> np.ndarray:
        return generate(self, n, seed)

    # -- serialization ------------------------------------------------------
    def to_bytes(self) -> bytes:
        meta = {
            "label": self.label,
            "tick": self.tick,
            "minibatch": self.minibatch,
            "epoch": self.epoch,
            "snap_discrete": int(self.snap_discrete),
            "generator": json.dumps(self.config.describe(), sort_keys=True),
            "latent": json.dumps(asdict(self.latent), sort_keys=True),
            "params": json.dumps([[k, list(v.shape)] for k, v in self.params.items()]),
        }
        meta_text = "".join(f"{k}={meta[k]}\n" for k in sorted(meta)).encode("utf-8")

        weights = bytearray(struct.pack("<I", len(self.params)))
        for v in self.params.values():
            weights += struct.pack("<I", v.ndim) + struct.pack(f"<{v.ndim}I", *v.shape)
            weights += np.ascontiguousarray(v, dtype="<f8").tobytes()

        acts = self.config.smirnov or []
        table = bytearray(struct.pack("<I", len(acts)))
        for a in acts:
            table += struct.pack("<dBI", a.clip, int(a.degenerate), a.knots_y.size)
            for arr in (a.knots_y, a.knots_x, a.slopes):
                table += np.ascontiguousarray(arr, dtype="<f8").tobytes()
            atoms = a.atoms if a.atoms is not None else np.zeros(0)
            table += struct.pack("<BI", int(a.atoms is not None), atoms.size)
            table += np.ascontiguousarray(atoms, dtype="<f8").tobytes()

        out = bytearray(MAGIC + struct.pack("<H", self.version))
        for tag, payload in ((b"META", meta_text), (b"WGTS", bytes(weights)), (b"ACTV", bytes(table))):
            out += tag + struct.pack("<Q", len(payload)) + payload + struct.pack("<I", zlib.crc32(payload))
        return bytes(out)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "GeneratorCheckpoint":
        if blob[:5] != MAGIC:
            raise FormatError("bad magic string", section="header")
        if len(blob) < 7:
            raise FormatError("truncated header", section="header")
        (version,) = struct.unpack_from("<H", blob, 5)
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported format version {version}", section="header")
        pos = 7
        sections = {}
        for name, tag in (("metadata", b"META"), ("weights", b"WGTS"), ("activation", b"ACTV")):
            if blob[pos:pos + 4] != tag:
                raise FormatError("missing or misplaced section tag", section=name)
            try:
                (length,) = struct.unpack_from("<Q", blob, pos + 4)
                payload = blob[pos + 12:pos + 12 + length]
                (crc,) = struct.unpack_from("<I", blob, pos + 12 + length)
            except struct.error:
                raise FormatError("truncated section", section=name) from None
            if len(payload) != length or zlib.crc32(payload) != crc:
                raise FormatError("checksum mismatch", section=name)
            sections[name] = payload
            pos += 16 + length
        try:
            meta = dict(line.split("=", 1) for line in sections["metadata"].decode("utf-8").splitlines())
            gen = json.loads(meta["generator"])
            latent = LatentConfig(**json.loads(meta["latent"]))
            shapes = json.loads(meta["params"])
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"unreadable metadata ({exc})", section="metadata") from None

        try:
            buf = sections["weights"]
            (count,) = struct.unpack_from("<I", buf, 0)
            off = 4
            params = {}
            for name, shape in shapes:
                (ndim,) = struct.unpack_from("<I", buf, off)
                dims = struct.unpack_from(f"<{ndim}I", buf, off + 4)
                off += 4 + 4 * ndim
                if list(dims) != shape:
                    raise FormatError(f"shape mismatch for {name}", section="weights")
                size = int(np.prod(dims, dtype=np.int64))
                params[name] = np.frombuffer(buf, "<f8", size, off).astype(np.float64).reshape(dims)
                off += 8 * size
            if count != len(shapes) or off != len(buf):
                raise FormatError("weight block count mismatch", section="weights")
        except struct.error:
            raise FormatError("truncated weight block", section="weights") from None

        try:
            buf = sections["activation"]
            (n_act,) = struct.unpack_from("<I", buf, 0)
            off = 4
            acts = []
            for _ in range(n_act):
                clip, degenerate, nk = struct.unpack_from("<dBI", buf, off)
                off += struct.calcsize("<dBI")
                arrs = []
                for _ in range(3):
                    arrs.append(np.frombuffer(buf, "<f8", nk, off).astype(np.float64))
                    off += 8 * nk
                has_atoms, na = struct.unpack_from("<BI", buf, off)
                off += struct.calcsize("<BI")
                atoms = np.frombuffer(buf, "<f8", na, off).astype(np.float64)
                off += 8 * na
                acts.append(SmirnovActivation(*arrs, atoms=atoms if has_atoms else None,
                                              degenerate=bool(degenerate), clip=clip))
            if off != len(buf):
                raise FormatError("trailing bytes in activation tables", section="activation")
        except (struct.error, ValueError):
            raise FormatError("truncated activation tables", section="activation") from None

        try:
            config = MlpConfig(gen["widths"], gen["leaky_alpha"], gen["batch_norm"], gen["dropout_rate"],
                               gen["l2_coeff"], gen["output_activation"], acts or None)
        except (ContractError, KeyError) as exc:
            raise FormatError(f"inconsistent generator config ({exc})", section="activation") from None
        return cls(int(meta["label"]), int(meta["tick"]), int(meta["minibatch"]), int(meta["epoch"]),
                   config, params, latent, bool(int(meta["snap_discrete"])), version)

    def save(self, path) -> Path:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(self.to_bytes())
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path) -> "GeneratorCheckpoint":
        return cls.from_bytes(Path(path).read_bytes())


def generate(ckpt: GeneratorCheckpoint, n: int, seed) -> np.ndarray:
    """Draw ``n`` synthetic rows from a checkpointed generator (inference mode)."""
    if n < 1:
        raise ContractError("generate needs n >= 1")
    rng = np.random.default_rng(seed)
    z = ckpt.latent.sample(rng, n)
    out = ckpt.network().forward(z, train=False)
    if ckpt.snap_discrete and ckpt.config.output_activation == "smirnov":
        out = np.column_stack([act.snap(out[:, j]) for j, act in enumerate(ckpt.config.smirnov)])
    return out


def mean_baseline(real_data, noise_std, n: int, seed) -> np.ndarray:
    """Feature means plus independent Gaussian noise with per-feature std."""
    data = np.asarray(real_data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise DataError("mean baseline needs a non-empty data matrix")
    std = np.broadcast_to(np.asarray(noise_std, dtype=np.float64), (data.shape[1],))
    if np.any(std < 0):
        raise ConfigError("noise std must be non-negative")
    rng = np.random.default_rng(seed)
    return data.mean(axis=0) + std * rng.standard_normal((n, data.shape[1]))


@dataclass
class MeanBaseline:
    """Generator-like wrapper around :func:`mean_baseline`."""

    real_data: np.ndarray
    noise_std: np.ndarray

    @classmethod
    def from_data(cls, real_data, std_factor: float = 0.5) -> "MeanBaseline":
        data = np.asarray(real_data, dtype=np.float64)
        return cls(data, std_factor * data.std(axis=0))

    @property
    def n_features(self) -> int:
        return self.real_data.shape[1]

    def generate(self, n: int, seed) -> np.ndarray:
        return mean_baseline(self.real_data, self.noise_std, n, seed)


TRACE_COLUMNS = ("tick", "minibatch", "epoch", "critic_loss", "gen_loss", "l1", "jaccard", "f1_ds1", "f1_ds2")


@dataclass
class TrainTrace:
    records: list[dict] = field(default_factory=list)
    batches_per_epoch: int = 1
    aborted_tick: int | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records], dtype=np.float64)

    def to_csv(self, path):
        from .report import write_csv

        rows = [[r[c] for c in TRACE_COLUMNS] for r in self.records]
        write_csv(path, TRACE_COLUMNS, rows)


@dataclass
class CheckpointRef:
    """On-disk checkpoint loaded on demand; quacks like a GeneratorCheckpoint for generation."""

    path: Path
    tick: int
    n_features: int

    def load(self) -> GeneratorCheckpoint:
        return GeneratorCheckpoint.load(self.path)

    def generate(self, n: int, seed) -> np.ndarray:
        return generate(self.load(), n, seed)


def checkpoint_filename(tick: int) -> str:
    return "initial.stg" if tick == 0 else f"ckpt_{tick:06d}.stg"


@dataclass
class CheckpointStore:
    initial: GeneratorCheckpoint
    checkpoints: list = field(default_factory=list)  # GeneratorCheckpoint or CheckpointRef

    def __len__(self):
        return len(self.checkpoints)

    def __iter__(self):
        return iter(self.checkpoints)

    def selectable(self) -> list:
        """Trained checkpoints, or the initial one when no training happened."""
        return self.checkpoints or [self.initial]

    def save(self, directory) -> list[Path]:
        """``initial.stg`` for tick 0 plus one ``ckpt_<tick>.stg`` per trained checkpoint."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        out = [self.initial.save(d / checkpoint_filename(0))]
        for c in self:
            target = d / checkpoint_filename(c.tick)
            if isinstance(c, CheckpointRef):
                if c.path.resolve() != target.resolve():
                    target.write_bytes(c.path.read_bytes())
                out.append(target)
            else:
                out.append(c.save(target))
        return out

    @classmethod
    def load(cls, directory, lazy: bool = False) -> "CheckpointStore":
        d = Path(directory)
        if not (d / "initial.stg").exists():
            raise DataError(f"no checkpoint store in {d} (initial.stg missing)")
        initial = GeneratorCheckpoint.load(d / "initial.stg")
        files = sorted(d.glob("ckpt_*.stg"))
        if lazy:
            refs = [CheckpointRef(f, int(f.stem.split("_")[1]), initial.n_features) for f in files]
            return cls(initial, refs)
        return cls(initial, [GeneratorCheckpoint.load(f) for f in files])


class _BatchStream:
    """Shuffled passes over the data; a short final batch is topped up by resampling."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n, self.bs, self.rng = n, batch_size, rng
        self._perm = np.zeros(0, dtype=np.int64)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos >= self._perm.size:
            self._perm = self.rng.permutation(self.n)
            self._pos = 0
        idx = self._perm[self._pos:self._pos + self.bs]
        self._pos += self.bs
        if idx.size < self.bs:
            idx = np.concatenate([idx, self.rng.integers(0, self.n, self.bs - idx.size)])
        return idx


def wgan_train(gen_cfg: MlpConfig, disc_cfg: MlpConfig, latent: LatentConfig, real_data,
               schedule: TrainSchedule, eval_hook=None, *, label: int = 0, gen_lr: float = 1e-3,
               disc_lr: float = 1e-4, metric_bins: int = metrics.DEFAULT_BINS,
               metric_samples: int | None = None, snap_discrete: bool = True,
               on_checkpoint=None, store_dir=None) -> tuple[CheckpointStore, TrainTrace]:
    """Train one label's WGAN and return its checkpoints and trace.

    ``eval_hook(ckpt, samples)`` runs at every eval tick and may return a
    dict with ``f1_ds1``/``f1_ds2``. ``on_checkpoint(ckpt)`` sees every
    checkpoint as it is made. With ``store_dir`` every checkpoint is
    written there and the store holds lazy references instead of weights.
    """
    data = np.asarray(real_data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise DataError("real data must be a non-empty matrix")
    if gen_cfg.widths[0] != latent.dimension or gen_cfg.widths[-1] != data.shape[1]:
        raise ContractError("generator widths do not match latent and feature dimensions")
    if disc_cfg.widths[0] != data.shape[1] or disc_cfg.widths[-1] != 1:
        raise ContractError("critic must map the feature vector to one score")

    ss = np.random.SeedSequence(schedule.seed)
    s_gen, s_disc, s_latent, s_data, s_drop, s_metric = ss.spawn(6)
    gen = mlp_init(gen_cfg, int(s_gen.generate_state(1)[0]))
    disc = mlp_init(disc_cfg, int(s_disc.generate_state(1)[0]))
    latent_rng = np.random.default_rng(s_latent)
    drop_rng = np.random.default_rng(s_drop)
    metric_seed = int(s_metric.generate_state(1)[0])
    batches = _BatchStream(data.shape[0], schedule.batch_size, np.random.default_rng(s_data))
    gen_opt = OptimizerState("adam", gen_lr)
    disc_opt = OptimizerState("rmsprop", disc_lr)
    bpe = math.ceil(data.shape[0] / schedule.batch_size)
    n_metric = metric_samples or data.shape[0]

    def snapshot(tick, mb):
        params = {k: v.copy() for k, v in gen.params.items()}
        return GeneratorCheckpoint(label, tick, mb, mb // bpe, gen_cfg, params, latent, snap_discrete)

    store = CheckpointStore(snapshot(0, 0))
    trace = TrainTrace(batches_per_epoch=bpe)
    if store_dir is not None:
        store_dir = Path(store_dir)
        store_dir.mkdir(parents=True, exist_ok=True)
        store.initial.save(store_dir / checkpoint_filename(0))
    if on_checkpoint:
        on_checkpoint(store.initial)
    bs = schedule.batch_size
    sign = np.concatenate([np.full(bs, -1.0 / bs), np.full(bs, 1.0 / bs)])[:, None]
    closs_acc, gloss_acc = [], []

    for mb in range(1, schedule.total_minibatches + 1):
        tick_now = mb // schedule.checkpoint_interval
        try:
            for _ in range(schedule.critic_steps):
                real = data[batches.next()]
                fake = gen.forward(latent.sample(latent_rng, bs), train=True, rng=drop_rng)
                scores = disc.forward(np.vstack([real, fake]), train=True, rng=drop_rng)
                closs = float(np.mean(scores[bs:]) - np.mean(scores[:bs]))
                grads, _ = disc.backward(sign)
                disc_opt.step(disc, grads, tick=tick_now)

            real = data[batches.next()]
            fake = gen.forward(latent.sample(latent_rng, bs), train=True, rng=drop_rng)
            scores = disc.forward(np.vstack([real, fake]), train=True, rng=drop_rng)
            gloss = float(-np.mean(scores[bs:]))
            up = np.zeros((2 * bs, 1))
            up[bs:] = -1.0 / bs
            _, gin = disc.backward(up)
            ggrads, _ = gen.backward(gin[bs:])
            gen_opt.step(gen, ggrads, tick=tick_now)
            if not (math.isfinite(closs) and math.isfinite(gloss)):
                raise TrainingError("non-finite loss", tick=tick_now)
        except TrainingError as exc:
            trace.aborted_tick = exc.tick if exc.tick is not None else tick_now
            break
        closs_acc.append(closs)
        gloss_acc.append(gloss)

        if mb % schedule.checkpoint_interval:
            continue
        ckpt = snapshot(tick_now, mb)
        if not all(np.all(np.isfinite(v)) for v in ckpt.params.values()):
            trace.aborted_tick = tick_now
            break
        if store_dir is not None:
            path = ckpt.save(store_dir / checkpoint_filename(tick_now))
            store.checkpoints.append(CheckpointRef(path, tick_now, ckpt.n_features))
        else:
            store.checkpoints.append(ckpt)
        if on_checkpoint:
            on_checkpoint(ckpt)
        samples = generate(ckpt, n_metric, (metric_seed, tick_now))
        l1, jac = metrics.compare(data, samples, metric_bins)
        record = {"tick": tick_now, "minibatch": mb, "epoch": ckpt.epoch,
                  "critic_loss": float(np.mean(closs_acc)), "gen_loss": float(np.mean(gloss_acc)),
                  "l1": l1, "jaccard": jac, "f1_ds1": math.nan, "f1_ds2": math.nan}
        closs_acc, gloss_acc = [], []
        if eval_hook is not None and mb % schedule.eval_interval == 0:
            extra = eval_hook(ckpt, samples) or {}
            record.update({k: float(v) for k, v in extra.items() if k in ("f1_ds1", "f1_ds2")})
        trace.records.append(record)
    return store, trace


def train_label(real_data, label: int, schedule: TrainSchedule, preset: str = "rendered",
                activation: str = "smirnov", scale: float = 1.0, gan: GanSpec | None = None,
                eval_hook=None, **kwargs) -> tuple[CheckpointStore, TrainTrace]:
    """Build generator and critic from a preset and train them on one label's rows."""
    gan = gan or get_preset(preset, label, scale)
    data = np.asarray(real_data, dtype=np.float64)
    gen_cfg = build_generator_config(gan.generator, gan.latent, data, activation)
    disc_cfg = build_critic_config(gan.critic, data.shape[1])
    return wgan_train(gen_cfg, disc_cfg, gan.latent, data, schedule, eval_hook, label=label,
                      gen_lr=gan.generator.lr, disc_lr=gan.critic.lr, **kwargs)
