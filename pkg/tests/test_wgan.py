import math

import numpy as np
import pytest

from stgan.errors import ConfigError, ContractError, DataError, FormatError
from stgan.nn import MlpConfig, OptimizerState, mlp_init
from stgan.wgan import (GanSpec, GeneratorCheckpoint, LatentConfig, MeanBaseline, NetSpec, TrainSchedule,
                        CheckpointStore, build_critic_config, build_generator_config, desk_preset, generate,
                        get_preset, mean_baseline, train_label, wgan_train)

TINY = GanSpec(NetSpec((16, 16), 0.2, True, 0.0, 0.0, 2e-4), NetSpec((16, 8), 0.15, True, 0.0, 0.0, 1e-4),
               LatentConfig(8, "uniform", 1.5))


@pytest.fixture(scope="module")
def label0(small_rendered):
    return small_rendered[0].rows(0)


@pytest.fixture(scope="module")
def trained(label0):
    sched = TrainSchedule(batch_size=64, total_minibatches=100, seed=3)
    return train_label(label0, 0, sched, gan=TINY, metric_samples=500)


def test_tick_count(trained):
    store, trace = trained
    assert len(store) == 10 and len(trace.records) == 10
    assert [r["tick"] for r in trace.records] == list(range(1, 11))
    assert all(c.tick * 10 == c.minibatch for c in store)


def test_full_schedule_arithmetic():
    s = TrainSchedule()
    assert s.n_ticks == 2500
    # 400,000 rows at 800 per batch
    bpe = math.ceil(400_000 / s.batch_size)
    assert bpe == 500 and s.total_minibatches // bpe == 50
    assert bpe // s.checkpoint_interval == 50


def test_schedule_validation():
    with pytest.raises(ConfigError):
        TrainSchedule(checkpoint_interval=10, eval_interval=15)
    with pytest.raises(ConfigError):
        TrainSchedule(batch_size=0)


def test_zero_minibatches(label0):
    store, trace = train_label(label0, 0, TrainSchedule(batch_size=32, total_minibatches=0), gan=TINY)
    assert trace.records == [] and len(store) == 0
    assert store.initial.tick == 0
    assert store.selectable() == [store.initial]


def test_same_seed_same_trace(label0, trained):
    sched = TrainSchedule(batch_size=64, total_minibatches=100, seed=3)
    _, again = train_label(label0, 0, sched, gan=TINY, metric_samples=500)
    assert again.records == trained[1].records


def test_checkpoint_round_trip(trained):
    ckpt = trained[0].checkpoints[-1]
    blob = ckpt.to_bytes()
    back = GeneratorCheckpoint.from_bytes(blob)
    assert back.to_bytes() == blob
    assert np.array_equal(generate(ckpt, 200, 9), generate(back, 200, 9))
    assert (back.label, back.tick, back.minibatch) == (ckpt.label, ckpt.tick, ckpt.minibatch)


def test_store_save_load(trained, tmp_path):
    store = trained[0]
    store.save(tmp_path)
    assert (tmp_path / "initial.stg").exists()
    lazy = CheckpointStore.load(tmp_path, lazy=True)
    assert len(lazy) == len(store)
    assert np.array_equal(lazy.checkpoints[3].generate(50, 1), generate(store.checkpoints[3], 50, 1))
    with pytest.raises(DataError):
        CheckpointStore.load(tmp_path / "missing")


@pytest.mark.parametrize("where, section", [
    (0, "header"), (6, "header"), ("META", "metadata"), ("WGTS", "weights"), ("ACTV", "activation"),
])
def test_corrupt_checkpoint_names_section(trained, where, section):
    blob = bytearray(trained[0].checkpoints[0].to_bytes())
    if isinstance(where, str):
        pos = blob.index(where.encode()) + 12 + 3  # inside the payload
    else:
        pos = where
    blob[pos] ^= 0xFF
    with pytest.raises(FormatError) as info:
        GeneratorCheckpoint.from_bytes(bytes(blob))
    assert info.value.section == section


def test_truncated_checkpoint(trained):
    blob = trained[0].checkpoints[0].to_bytes()
    with pytest.raises(FormatError):
        GeneratorCheckpoint.from_bytes(blob[:-10])


def test_generate_contract(trained):
    ckpt = trained[0].checkpoints[0]
    with pytest.raises(ContractError):
        generate(ckpt, 0, 1)
    assert np.array_equal(generate(ckpt, 30, 4), generate(ckpt, 30, 4))


def test_smirnov_output_in_range(label0, trained):
    lo, hi = label0.min(axis=0), label0.max(axis=0)
    for ckpt in (trained[0].initial, trained[0].checkpoints[-1]):
        out = generate(ckpt, 5000, 2)
        assert np.all(out >= lo) and np.all(out <= hi)


def test_linear_output_can_leave_range(label0):
    store, _ = train_label(label0, 0, TrainSchedule(batch_size=64, total_minibatches=0), gan=TINY,
                           activation="linear")
    out = generate(store.initial, 5000, 2)
    lo, hi = label0.min(axis=0), label0.max(axis=0)
    # an untrained linear head is centred near 0, so it misses the exponential and
    # binomial supports on at least one side
    assert np.any(out < lo) or np.any(out > hi)


def test_discrete_outputs_snapped(label0, trained):
    out = generate(trained[0].checkpoints[-1], 2000, 5)
    for j in (1, 3):
        assert set(np.unique(out[:, j])) <= set(np.unique(label0[:, j]))


def test_critic_step_descends(label0):
    rng = np.random.default_rng(0)
    gen = mlp_init(build_generator_config(TINY.generator, TINY.latent, label0, "linear"), 1)
    disc = mlp_init(MlpConfig([4, 16, 8, 1], 0.15, False, 0.0, 0.0), 2)
    opt = OptimizerState("rmsprop", 1e-4)
    bs = 64
    sign = np.r_[np.full(bs, -1.0 / bs), np.full(bs, 1.0 / bs)][:, None]
    deltas = []
    for _ in range(10):
        real = label0[rng.integers(0, len(label0), bs)]
        fake = gen.forward(TINY.latent.sample(rng, bs))
        x = np.vstack([real, fake])

        def objective():
            s = disc.forward(x)
            return float(s[bs:].mean() - s[:bs].mean())

        before = objective()
        disc.forward(x, train=True)
        grads, _ = disc.backward(sign)
        opt.step(disc, grads)
        deltas.append(objective() - before)
    assert np.mean(deltas) < 0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_abort():
    data = np.full((64, 2), 1e308)
    data[::2] *= -1
    gen_cfg = MlpConfig([4, 8, 2], 0.2, False, 0.0, 0.0)
    disc_cfg = MlpConfig([2, 8, 1], 0.2, False, 0.0, 0.0)
    store, trace = wgan_train(gen_cfg, disc_cfg, LatentConfig(4), data,
                              TrainSchedule(batch_size=16, total_minibatches=50))
    assert trace.aborted_tick == 0
    assert trace.records == [] and store.initial.tick == 0


def test_latent_config():
    with pytest.raises(ConfigError):
        LatentConfig(0)
    with pytest.raises(ConfigError):
        LatentConfig(4, "cauchy")
    with pytest.raises(ConfigError):
        LatentConfig(4, "normal", 0.0)
    z = LatentConfig(10, "uniform", 1.5).sample(np.random.default_rng(0), 20000)
    assert z.shape == (20000, 10)
    assert np.all(np.abs(z) <= 1.5 * np.sqrt(3))
    assert abs(z.std() - 1.5) < 0.02
    z = LatentConfig(10, "normal", 0.5).sample(np.random.default_rng(0), 20000)
    assert abs(z.std() - 0.5) < 0.01


def test_presets():
    g = get_preset("rendered", 0)
    assert g.generator.hidden == (500, 3000, 5000, 400) and g.latent.dimension == 100
    f1 = get_preset("flows", 1)
    assert f1.critic.dropout == 0.15 and f1.latent.family == "normal"
    desk = desk_preset("rendered", 0)
    assert desk.generator.hidden == (50, 300, 500, 40)
    assert desk.generator.lr == pytest.approx(1e-3 * 128 / 800) and desk.critic.lr == 1e-4
    with pytest.raises(ConfigError):
        get_preset("rendered", 2)


def test_config_builders(label0):
    cfg = build_generator_config(TINY.generator, TINY.latent, label0)
    assert cfg.widths == [8, 16, 16, 4] and len(cfg.smirnov) == 4
    assert build_critic_config(TINY.critic, 4).widths == [4, 16, 8, 1]
    with pytest.raises(ConfigError):
        build_generator_config(TINY.generator, TINY.latent, label0, "tanh")


def test_mean_baseline_statistics(label0):
    std = np.array([0.5, 1.0, 2.0, 0.1])
    out = mean_baseline(label0, std, 100_000, 0)
    mu = label0.mean(axis=0)
    assert np.all(np.abs(out.mean(axis=0) - mu) < 3 * std / np.sqrt(100_000))
    assert np.all(np.abs(out.std(axis=0) / std - 1) < 0.02)


def test_mean_baseline_zero_noise(label0):
    out = mean_baseline(label0, 0.0, 10, 0)
    assert np.array_equal(out, np.tile(label0.mean(axis=0), (10, 1)))


def test_mean_baseline_errors():
    with pytest.raises(DataError):
        mean_baseline(np.zeros((0, 3)), 1.0, 5, 0)
    with pytest.raises(ConfigError):
        mean_baseline(np.ones((4, 2)), -1.0, 5, 0)
    mb = MeanBaseline.from_data(np.array([[0.0, 1.0], [2.0, 3.0]]))
    assert np.allclose(mb.noise_std, 0.5) and mb.n_features == 2
