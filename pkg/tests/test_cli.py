import json

import numpy as np
import pytest
import yaml

from stgan.cli import config_hash, main, parse_preset
from stgan.datasets import load_csv
from stgan.errors import ConfigError
from stgan.wgan import GeneratorCheckpoint

TRAIN_FAST = ["--desk", "--scale", "0.02", "--batch-size", "32", "--minibatches", "100", "--metric-samples", "300",
              "--no-figures"]


@pytest.fixture(scope="module")
def rendered(tmp_path_factory):
    out = tmp_path_factory.mktemp("render")
    assert main(["render", "--n-per-label", "300", "--seed", "5", "--out", str(out)]) == 0
    return out


def test_render_smoke(tmp_path):
    assert main(["render", "--n-per-label", "10", "--out", str(tmp_path)]) == 0
    ds = load_csv(tmp_path / "ds1.csv")
    assert ds.n == 20 and ds.counts() == (10, 10)
    assert (tmp_path / "ds2.csv").exists() and (tmp_path / "ds1_manifest.txt").exists()
    man = json.loads((tmp_path / "run_manifest.json").read_text())
    assert man["command"] == "render" and man["config"]["n_per_label"] == 10


def test_render_bad_tag(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(yaml.safe_dump({"features": {0: [{"kind": "gamma", "shape": 2}]}}))
    assert main(["render", "--config", str(cfg), "--n-per-label", "5", "--out", str(tmp_path / "o")]) == 2
    assert "features.0[0]" in capsys.readouterr().err


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n_per_lable": 5}))
    assert main(["render", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_missing_data_exit_code(tmp_path):
    rc = main(["train", "--preset", "rendered-st-label0", "--data", str(tmp_path / "nope.csv"), *TRAIN_FAST,
               "--out", str(tmp_path / "o")])
    assert rc == 3


def test_parse_preset():
    assert parse_preset("rendered-st-label0") == ("rendered", "smirnov", 0)
    assert parse_preset("flows-linear-label1") == ("flows", "linear", 1)
    with pytest.raises(ConfigError):
        parse_preset("rendered-xx")
    with pytest.raises(ConfigError):
        parse_preset("images")


def test_config_hash_order_free():
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})


def _train(rendered, out, *extra):
    return main(["train", "--preset", "rendered-st-label0", "--data", str(rendered / "ds1.csv"), "--seed", "1",
                 *TRAIN_FAST, "--out", str(out), *extra])


def test_train_checkpoints_and_trace(rendered, tmp_path):
    assert _train(rendered, tmp_path / "a") == 0
    ck = sorted((tmp_path / "a" / "checkpoints").glob("ckpt_*.stg"))
    assert len(ck) == 10
    assert (tmp_path / "a" / "checkpoints" / "initial.stg").exists()
    lines = (tmp_path / "a" / "trace.csv").read_text().splitlines()
    assert lines[0] == "tick,minibatch,epoch,critic_loss,gen_loss,l1,jaccard,f1_ds1,f1_ds2"
    assert len(lines) == 11
    assert _train(rendered, tmp_path / "b") == 0
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()
    assert ck[-1].read_bytes() == (tmp_path / "b" / "checkpoints" / ck[-1].name).read_bytes()


def test_activation_flip(rendered, tmp_path):
    assert _train(rendered, tmp_path / "st", "--minibatches", "0") == 0
    assert _train(rendered, tmp_path / "lin", "--minibatches", "0", "--activation", "linear") == 0
    a = GeneratorCheckpoint.load(tmp_path / "st" / "checkpoints" / "initial.stg")
    b = GeneratorCheckpoint.load(tmp_path / "lin" / "checkpoints" / "initial.stg")
    assert a.config.widths == b.config.widths
    assert (a.config.output_activation, b.config.output_activation) == ("smirnov", "linear")
    assert b.config.smirnov is None
    assert a.params.keys() == b.params.keys()
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_eval_joint_deterministic(rendered, tmp_path):
    common = ["eval-joint", "--ckpt0", "replay", "--ckpt1", "replay", "--ds1", str(rendered / "ds1.csv"),
              "--ds2", str(rendered / "ds2.csv"), "--runs", "1", "--seed", "7", "--trees", "10", "--no-figures"]
    assert main([*common, "--out", str(tmp_path / "a")]) == 0
    assert main([*common, "--out", str(tmp_path / "b")]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir() if p.name != "run_manifest.json")
    assert any(f.endswith("_f1_runs.csv") for f in files) and any(f.endswith("_summary.json") for f in files)
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_eval_joint_elitism_needs_scores(rendered, tmp_path):
    rc = main(["eval-joint", "--ckpt0", "replay", "--ckpt1", "replay", "--ds1", str(rendered / "ds1.csv"),
               "--ds2", str(rendered / "ds2.csv"), "--runs", "1", "--strategy", "top10", "--trees", "5",
               "--out", str(tmp_path)])
    assert rc == 2


def test_metrics_identical_and_disjoint(rendered, tmp_path, capsys):
    ds1 = rendered / "ds1.csv"
    assert main(["metrics", "--real", str(ds1), "--synthetic", str(ds1), "--out", str(tmp_path / "same"),
                 "--no-figures"]) == 0
    assert json.loads(capsys.readouterr().out) == {"l1": 0.0, "jaccard": 1.0}
    assert (tmp_path / "same" / "flattened.csv").exists()

    shifted = tmp_path / "shifted.csv"
    text = ds1.read_text().splitlines()
    rows = [text[0]]
    for line in text[1:]:
        *vals, lab = line.split(",")
        rows.append(",".join([repr(float(v) + 1e6) for v in vals] + [lab]))
    shifted.write_text("\n".join(rows) + "\n")
    assert main(["metrics", "--real", str(ds1), "--synthetic", str(shifted), "--out", str(tmp_path / "far")]) == 0
    assert json.loads(capsys.readouterr().out) == {"l1": 2.0, "jaccard": 0.0}
    assert (tmp_path / "far" / "flattened.png").exists() and (tmp_path / "far" / "marginals.png").exists()


def test_report_renders_figures(rendered, tmp_path):
    runs = tmp_path / "runs"
    assert _train(rendered, runs / "label0") == 0
    assert main(["eval-joint", "--ckpt0", "mean", "--ckpt1", "replay", "--ds1", str(rendered / "ds1.csv"),
                 "--ds2", str(rendered / "ds2.csv"), "--runs", "3", "--trees", "5", "--out",
                 str(runs / "joint")]) == 0
    for out in ("r1", "r2"):
        assert main(["report", str(runs), "--out", str(tmp_path / out)]) == 0
    idx = json.loads((tmp_path / "r1" / "report_index.json").read_text())
    assert len(idx["traces"]) == 1 and idx["traces"][0]["ticks"] == 10
    assert len(idx["joint"]) == 1 and idx["joint"][0]["runs"] == 3
    for name in ("trace_label0.png", "joint_f1_histograms.png", "report_index.json"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()


def test_report_missing_dir(tmp_path):
    assert main(["report", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 3
