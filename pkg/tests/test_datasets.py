import numpy as np
import pytest
from scipy.stats import ks_2samp

from stgan.datasets import (RENDERED_SPECS, FeatureSpec, LabeledDataset, load_csv, poisson, render_dataset,
                            render_preset, split, write_csv, write_manifest)
from stgan.errors import ConfigError, DataError, FormatError, SplitError


@pytest.fixture(scope="module")
def big():
    return render_preset(100_000, 2024)


def test_binomial_mean(big):
    # CLT: sd of the mean is sqrt(15*0.3*0.7/1e5) ~ 0.0056
    assert abs(big.rows(0)[:, 1].mean() - 4.5) < 0.05


def test_f_median(big):
    assert abs(np.median(big.rows(1)[:, 2]) - 1.0) < 0.03


def test_poisson_zero_frequency(big):
    col = big.rows(0)[:, 3]
    assert np.all(col >= 0) and np.all(col == np.round(col))
    assert abs(np.mean(col == 0) - np.exp(-1)) < 0.01


def test_discrete_support(big):
    for label, j, lo, hi in ((0, 1, 0, 15), (1, 1, 0, 15), (0, 3, 0, np.inf), (1, 3, 0, np.inf)):
        col = big.rows(label)[:, j]
        assert np.all(col == np.round(col)) and col.min() >= lo and col.max() <= hi
    du = big.rows(1)[:, 1]
    assert set(np.unique(du)) == set(range(16))


def test_exponential_is_scale(big):
    assert abs(big.rows(0)[:, 2].mean() - 3.0) < 0.05


def test_two_renders_ks(big):
    other = render_preset(100_000, 7)
    for label in (0, 1):
        for j in range(4):
            assert ks_2samp(big.rows(label)[:, j], other.rows(label)[:, j]).statistic < 0.012


def test_render_deterministic():
    a, b = render_preset(500, 3), render_preset(500, 3)
    np.testing.assert_array_equal(a.features, b.features)
    assert not np.array_equal(a.features, render_preset(500, 4).features)


def test_label_streams_independent_of_size():
    a, b = render_preset(100, 5), render_preset(200, 5)
    np.testing.assert_array_equal(a.rows(0)[:100], b.rows(0)[:100])


def test_invalid_specs():
    with pytest.raises(ConfigError):
        FeatureSpec("gamma", {"k": 1})
    with pytest.raises(ConfigError):
        FeatureSpec("normal", {"mu": 0, "sigma": -1})
    with pytest.raises(ConfigError):
        FeatureSpec("binomial", {"n": 15, "p": 1.5})
    with pytest.raises(ConfigError):
        FeatureSpec("discrete_uniform", {"lo": 3, "hi": 1})
    with pytest.raises(ConfigError):
        render_dataset({0: [poisson(1.0)], 1: [poisson(1.0), poisson(2.0)]}, 10, 0)


def test_csv_round_trip(tmp_path):
    ds = render_preset(50, 1)
    path = write_csv(ds, tmp_path / "ds.csv")
    back = load_csv(path)
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.feature_names == ds.feature_names


def test_csv_small_and_schema(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("a,b,label\n1,2,0\n3,4,1\n5,6,1\n")
    ds = load_csv(p, schema=["a", "b"])
    assert ds.n == 3 and ds.counts() == (1, 2)
    with pytest.raises(FormatError):
        load_csv(p, schema=["a", "c"])
    q = tmp_path / "b.csv"
    q.write_text("a,b\n1,2\n")
    with pytest.raises(FormatError, match="label"):
        load_csv(q)


def test_csv_errors_name_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,label\n1,0\nx,1\n")
    with pytest.raises(FormatError, match=":3:"):
        load_csv(p)
    p.write_text("a,label\n1,0\n2,7\n")
    with pytest.raises(DataError, match="unknown label"):
        load_csv(p)
    p.write_text("a,label\n1,0\n2\n")
    with pytest.raises(FormatError, match=":3:"):
        load_csv(p)


def test_imbalanced_counts_preserved(tmp_path):
    ds = LabeledDataset(np.zeros((4040, 1)), np.r_[np.zeros(4000), np.ones(40)], ("x",))
    assert load_csv(write_csv(ds, tmp_path / "imb.csv")).counts() == (4000, 40)


def test_stratified_split():
    ds = LabeledDataset(np.arange(200.0)[:, None], np.r_[np.zeros(100), np.ones(100)], ("x",))
    a, b = split(ds, 0.5, 1)
    assert a.counts() == (50, 50) and b.counts() == (50, 50)
    assert sorted(np.r_[a.features[:, 0], b.features[:, 0]].tolist()) == list(range(200))
    a2, _ = split(ds, 0.5, 1)
    np.testing.assert_array_equal(a.features, a2.features)


def test_split_errors():
    ds = LabeledDataset(np.zeros((5, 1)), [0, 0, 0, 0, 1], ("x",))
    with pytest.raises(SplitError):
        split(ds, 0.5, 0)
    with pytest.raises(SplitError):
        split(ds, 1.0, 0, stratified=False)


def test_non_stratified_hypergeometric():
    # 10,000 rows with 2% label 1; half the rows drawn -> hypergeometric count of label 1
    n, k = 10_000, 200
    ds = LabeledDataset(np.zeros((n, 1)), np.r_[np.zeros(n - k), np.ones(k)], ("x",))
    mean = k * 0.5
    sd = np.sqrt(k * 0.5 * 0.5 * (n - k) / (n - 1))
    counts = np.array([split(ds, 0.5, seed, stratified=False)[0].counts()[1] for seed in range(300)])
    assert abs(counts.mean() - mean) < 3 * sd / np.sqrt(counts.size)
    # 3-sigma excursions are rare (0.27% for a normal law)
    assert np.mean(np.abs(counts - mean) > 3 * sd) < 0.02
    assert 0.8 * sd < counts.std() < 1.2 * sd


def test_manifest(tmp_path):
    ds = render_preset(10, 0)
    text = write_manifest(ds, tmp_path / "m.txt", seed=0).read_text()
    assert "label_counts: 10 10" in text and "scale" in text


def test_preset_table():
    kinds = {label: [s.kind for s in specs] for label, specs in RENDERED_SPECS.items()}
    assert kinds == {0: ["normal", "binomial", "exponential", "poisson"],
                     1: ["normal", "discrete_uniform", "snedecor_f", "poisson"]}
