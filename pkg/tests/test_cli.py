import json
import shutil

import pytest

from dysalign.cli import EXIT_CONFIG, EXIT_MISSING, EXIT_SHAPE, EXIT_USAGE, main
from dysalign.config import CONFIG_ENV, ConfigError, RunConfig, resolve_config

TEXTS = "please call stella\nask her to bring these things with her\nsix spoons of fresh snow peas\n"


def write_config(path, **values):
    path.write_text(json.dumps(values))
    return str(path)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A small simulated corpus, a briefly trained model and its predictions."""
    ws = tmp_path_factory.mktemp("ws")
    (ws / "texts.txt").write_text(TEXTS)
    cfg = write_config(ws / "cfg.json", token_dim=16, train_steps=4, seed=3)
    assert main(["simulate", "--config", cfg, "--in", str(ws / "texts.txt"), "--out", str(ws / "corpus")]) == 0
    assert main(["train", "--config", cfg, "--in", str(ws / "corpus"), "--out", str(ws / "model")]) == 0
    assert main(["align", "--config", cfg, "--in", str(ws / "corpus"), "--model", str(ws / "model"),
                 "--out", str(ws / "pred"), "--jobs", "2"]) == 0
    return ws, cfg


# ---------------------------------------------------------------------------
# config


def test_config_defaults():
    cfg = RunConfig()
    assert cfg.temperature == 2.0 and cfg.sigma_min == 0.01 and cfg.n_gestures == 40 and cfg.token_dim == 64
    assert cfg.learning_rate == 1e-3 and cfg.lr_decay == 0.9
    assert cfg.loss_weights == {k: 1.0 for k in ("kl", "flow", "pre", "post", "con", "pit")}


def test_config_rejects_bad_values():
    with pytest.raises(ConfigError) as err:
        RunConfig.from_dict({"bogus": 1})
    assert err.value.field == "bogus"
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"sigma_min": 2.0})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"seed": "x"})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"loss_weights": {"other": 1.0}})
    assert RunConfig.from_dict({"loss_weights": {"pre": 0.5}}).loss_weights["post"] == 1.0


def test_config_file_and_env(tmp_path, monkeypatch):
    path = write_config(tmp_path / "c.json", seed=9)
    assert RunConfig.load(path).seed == 9
    monkeypatch.setenv(CONFIG_ENV, path)
    assert resolve_config().seed == 9
    monkeypatch.delenv(CONFIG_ENV)
    assert resolve_config() == RunConfig()
    assert RunConfig.from_dict(json.loads(RunConfig(seed=4).dumps())).seed == 4


# ---------------------------------------------------------------------------
# subcommands


def test_simulate_writes_one_bundle_per_line(workspace):
    ws, _ = workspace
    manifest = json.loads((ws / "corpus/manifest.json").read_text())
    assert manifest["n_utterances"] == 3
    for entry in manifest["utterances"]:
        for name in entry["files"].values():
            assert (ws / "corpus" / name).exists()


def test_simulate_is_reproducible(workspace, tmp_path):
    ws, cfg = workspace
    assert main(["simulate", "--config", cfg, "--in", str(ws / "texts.txt"), "--out", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again/manifest.json").read_bytes() == (ws / "corpus/manifest.json").read_bytes()
    assert main(["simulate", "--config", cfg, "--seed", "4", "--in", str(ws / "texts.txt"),
                 "--out", str(tmp_path / "other")]) == 0
    assert (tmp_path / "other/manifest.json").read_bytes() != (ws / "corpus/manifest.json").read_bytes()


def test_train_outputs(workspace, tmp_path):
    ws, cfg = workspace
    info = json.loads((ws / "model/train.json").read_text())
    assert info["steps"] == 4 and len(info["losses"]) == 4
    assert (ws / "model/durations.json").exists()
    assert main(["train", "--config", cfg, "--in", str(ws / "corpus"), "--out", str(tmp_path / "m2")]) == 0
    assert json.loads((tmp_path / "m2/train.json").read_text())["losses"] == info["losses"]
    for p in (ws / "model/parameters").iterdir():
        assert (tmp_path / "m2/parameters" / p.name).read_bytes() == p.read_bytes()


def test_align_outputs(workspace):
    ws, _ = workspace
    manifest = json.loads((ws / "pred/manifest.json").read_text())
    assert len(manifest["utterances"]) == 3
    for entry in manifest["utterances"]:
        assert json.loads((ws / "pred" / entry["files"]["annotations"]).read_text()) is not None
        assert (ws / "pred" / entry["files"]["alignment"]).read_text().startswith("frame,token,value")


def test_evaluate_identity_and_splits(workspace, capsys):
    ws, cfg = workspace
    out = ws / "self.json"
    assert main(["evaluate", "--config", cfg, "--in", str(ws / "corpus"), "--pred", str(ws / "corpus"),
                 "--out", str(out), "--splits", "89.0", "89.2", "90.8"]) == 0
    report = json.loads(out.read_text())
    assert report["matching_score"] == 1.0 and report["strict_f1"] == 1.0
    assert report["dper"] == 0.0
    assert abs(report["scaling_factor"] - 0.56) < 1e-9
    capsys.readouterr()
    assert main(["evaluate", "--config", cfg, "--in", str(ws / "corpus"), "--pred", str(ws / "pred")]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert 0.0 <= printed["matching_score"] <= 1.0 and printed["n_utterances"] == 3


def test_splits_from_metrics_files(workspace, tmp_path):
    ws, cfg = workspace
    paths = []
    for k, ms in enumerate((0.890, 0.892, 0.908)):
        paths.append(str(tmp_path / f"m{k}.json"))
        (tmp_path / f"m{k}.json").write_text(json.dumps({"matching_score": ms}))
    out = tmp_path / "sf.json"
    assert main(["evaluate", "--config", cfg, "--in", str(ws / "corpus"), "--pred", str(ws / "pred"),
                 "--out", str(out), "--splits", *paths]) == 0
    assert abs(json.loads(out.read_text())["scaling_factor"] - 0.0056) < 1e-12
    assert main(["evaluate", "--config", cfg, "--in", str(ws / "corpus"), "--pred", str(ws / "pred"),
                 "--splits", "0.1", "0.2", str(tmp_path / "none.json")]) == EXIT_MISSING


def test_report(workspace):
    ws, cfg = workspace
    assert main(["report", "--config", cfg, "--in", str(ws / "pred"), "--out", str(ws / "reports")]) == 0
    files = sorted((ws / "reports").glob("*.report.txt"))
    assert len(files) == 3
    text = files[0].read_text()
    assert text.startswith("The speaker is attempting to speak the ground truth text please call stella.")
    assert '"has_dysfluency"' in text


# ---------------------------------------------------------------------------
# failures


def test_usage_error():
    assert main(["nonsense"]) == EXIT_USAGE
    assert main([]) == EXIT_USAGE


def test_unknown_config_field(tmp_path, capsys):
    cfg = write_config(tmp_path / "bad.json", learning_rat=0.1)
    assert main(["simulate", "--config", cfg, "--in", "x", "--out", "y"]) == EXIT_CONFIG
    assert "learning_rat" in capsys.readouterr().err


def test_missing_input(tmp_path, capsys):
    assert main(["simulate", "--in", str(tmp_path / "absent.txt"), "--out", str(tmp_path / "o")]) == EXIT_MISSING
    assert "absent.txt" in capsys.readouterr().err
    assert main(["train", "--in", str(tmp_path), "--out", str(tmp_path / "m")]) == EXIT_MISSING


def test_missing_path_is_config_error(tmp_path):
    assert main(["simulate", "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_shape_mismatch(workspace, tmp_path):
    ws, _ = workspace
    wide = write_config(tmp_path / "wide.json", token_dim=32, train_steps=1)
    assert main(["train", "--config", wide, "--in", str(ws / "corpus"), "--out", str(tmp_path / "m")]) == EXIT_SHAPE
    assert main(["align", "--config", wide, "--in", str(ws / "corpus"), "--model", str(ws / "model"),
                 "--out", str(tmp_path / "p")]) == EXIT_SHAPE


def test_corrupt_matrix(workspace, tmp_path):
    ws, cfg = workspace
    broken = tmp_path / "broken"
    shutil.copytree(ws / "corpus", broken)
    first = json.loads((broken / "manifest.json").read_text())["utterances"][0]["files"]["features"]
    (broken / first).write_bytes(b"NOPE" + (broken / first).read_bytes()[4:])
    assert main(["train", "--config", cfg, "--in", str(broken), "--out", str(tmp_path / "m")]) == EXIT_SHAPE
