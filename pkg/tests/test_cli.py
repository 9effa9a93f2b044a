"""End-to-end command line tests through click's test runner."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from gandet.cli import main
from gandet.datasets import LabeledDataset, anomaly_count, export_dataset, load_dataset
from gandet.models import ModelConfig, checkpoint_load, init_bundle, parameter_digest

RUNNER = CliRunner()

TINY_MODEL_JSON = {"latent_dim": 8, "image_channels": 1, "base_channels": 8, "min_channels": 4}
TINY_TRAIN_JSON = {"steps_per_phase": 2, "batch_size_start": 8, "batch_size_end": 8, "seed": 5}


def _invoke(args, env=None):
    return RUNNER.invoke(main, args, env=env, catch_exceptions=False)


def _write_config(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


def _stderr_error(result):
    return json.loads(result.stderr.strip().splitlines()[-1])["error"]


@pytest.fixture(scope="module")
def ds_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli-data")
    cfg = _write_config(
        root / "gen.json",
        {
            "resolution": 8,
            "train_normal": 20,
            "train_anomaly_pool": 10,
            "test_normal": 6,
            "test_anomaly": 6,
            "noise_level": 0.05,
            "gamma": 0.1,
            "seed": 3,
        },
    )
    out = root / "ds"
    result = _invoke(["gen-data", "--config", cfg, "--out", str(out)])
    assert result.exit_code == 0, result.stderr
    return out


@pytest.fixture(scope="module")
def train_run(ds_dir, tmp_path_factory):
    root = tmp_path_factory.mktemp("cli-train")
    cfg = _write_config(
        root / "train.json",
        {"data": str(ds_dir), "model": TINY_MODEL_JSON, "train": TINY_TRAIN_JSON},
    )
    out = root / "run"
    result = _invoke(["train", "--config", cfg, "--out", str(out)])
    assert result.exit_code == 0, result.stderr
    return out


@pytest.fixture(scope="module")
def eval_run(ds_dir, train_run, tmp_path_factory):
    root = tmp_path_factory.mktemp("cli-eval")
    cfg = _write_config(
        root / "eval.json",
        {
            "data": str(ds_dir),
            "split": "test",
            "checkpoint": str(train_run / "checkpoints" / "final"),
            "latent_bins": 8,
        },
    )
    out = root / "run"
    result = _invoke(["evaluate", "--config", cfg, "--out", str(out)])
    assert result.exit_code == 0, result.stderr
    return out


# ---------------------------------------------------------------------------
# gen-data


def test_gen_data_artifacts(ds_dir):
    meta = json.loads((ds_dir / "meta.json").read_text())
    expected_train = 20 + anomaly_count(0.1, 20)
    assert meta["counts"] == {"train": expected_train, "test": 12}
    assert meta["splits"]["train"]["labeled"] is False
    assert meta["splits"]["test"]["labeled"] is True
    assert (ds_dir / "train.f32").is_file()
    assert (ds_dir / "test.f32").is_file()

    labels = (ds_dir / "labels.csv").read_text().strip().splitlines()
    assert labels[0] == "split,source_id,label"
    assert len(labels) == 1 + 12
    assert all(line.startswith("test,") for line in labels[1:])

    audit = json.loads((ds_dir / "audit.json").read_text())
    assert audit["gamma"] == 0.1
    assert audit["n_anomaly"] == anomaly_count(0.1, 20)
    assert len(audit["anomaly_positions"]) == audit["n_anomaly"]
    assert all(0 <= p < expected_train for p in audit["anomaly_positions"])

    resolved = json.loads((ds_dir / "resolved_config.json").read_text())
    assert resolved["command"] == "gen-data"
    assert resolved["config"]["gamma"] == 0.1


def test_gen_data_seed_env_override(tmp_path):
    cfg = _write_config(
        tmp_path / "gen.json",
        {"resolution": 8, "train_normal": 6, "train_anomaly_pool": 2,
         "test_normal": 2, "test_anomaly": 2, "seed": 1},
    )
    out = tmp_path / "ds"
    result = _invoke(
        ["gen-data", "--config", cfg, "--out", str(out)],
        env={"GANDET_SEED": "123"},
    )
    assert result.exit_code == 0, result.stderr
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["seed_override"] == 123
    assert resolved["config"]["seed"] == 123


# ---------------------------------------------------------------------------
# train


def test_train_artifacts(train_run):
    assert (train_run / "train_log.csv").is_file()
    for sub in ("phase_0004", "phase_0008", "final"):
        assert (train_run / "checkpoints" / sub / "manifest.json").is_file()
    log = (train_run / "train_log.csv").read_text().strip().splitlines()
    assert len(log) == 1 + 4  # header + 2 phases x 2 steps


def test_train_zero_steps_checkpoint_equals_init(ds_dir, tmp_path):
    cfg = _write_config(
        tmp_path / "train.json",
        {
            "data": str(ds_dir),
            "model": TINY_MODEL_JSON,
            "train": {**TINY_TRAIN_JSON, "steps_per_phase": 0, "seed": 77},
        },
    )
    out = tmp_path / "run"
    result = _invoke(["train", "--config", cfg, "--out", str(out)])
    assert result.exit_code == 0, result.stderr

    loaded = checkpoint_load(out / "checkpoints" / "final")
    fresh = init_bundle(
        8,
        ModelConfig(latent_dim=8, image_channels=1, base_channels=8, min_channels=4),
        seed=77,
    )
    for name, net in fresh.networks().items():
        assert parameter_digest(net) == parameter_digest(loaded.networks()[name]), name


def test_train_refuses_labeled_split(ds_dir, tmp_path):
    cfg = _write_config(
        tmp_path / "train.json",
        {"data": str(ds_dir), "split": "test", "model": TINY_MODEL_JSON,
         "train": TINY_TRAIN_JSON},
    )
    result = _invoke(["train", "--config", cfg, "--out", str(tmp_path / "run")])
    assert result.exit_code == 2
    assert "labels" in _stderr_error(result)["message"]


def test_train_seed_flag_overrides_config(ds_dir, tmp_path):
    cfg = _write_config(
        tmp_path / "train.json",
        {"data": str(ds_dir), "model": TINY_MODEL_JSON,
         "train": {**TINY_TRAIN_JSON, "steps_per_phase": 0}},
    )
    out = tmp_path / "run"
    result = _invoke(["train", "--config", cfg, "--out", str(out), "--seed", "99"])
    assert result.exit_code == 0, result.stderr
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["config"]["train"]["seed"] == 99


def test_train_determinism_byte_identical(ds_dir, tmp_path):
    # same config and seed twice: checkpoints identical byte for byte,
    # logs identical outside the wall_time column
    cfg = _write_config(
        tmp_path / "train.json",
        {"data": str(ds_dir), "model": TINY_MODEL_JSON, "train": TINY_TRAIN_JSON},
    )
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        result = _invoke(["train", "--config", cfg, "--out", str(out)])
        assert result.exit_code == 0, result.stderr
        outs.append(out)

    a, b = outs
    ckpts = sorted(
        p.relative_to(a) for p in (a / "checkpoints").rglob("*") if p.is_file()
    )
    assert ckpts
    for rel in ckpts:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    def stripped(path):
        rows = (path / "train_log.csv").read_text().strip().splitlines()
        return [",".join(r.split(",")[:-1]) for r in rows]

    assert stripped(a) == stripped(b)


# ---------------------------------------------------------------------------
# score


def test_score_writes_csv(ds_dir, train_run, tmp_path):
    cfg = _write_config(
        tmp_path / "score.json",
        {
            "checkpoint": str(train_run / "checkpoints" / "final"),
            "data": str(ds_dir),
            "split": "test",
            "dump_reconstructions": True,
        },
    )
    out = tmp_path / "run"
    result = _invoke(["score", "--config", cfg, "--out", str(out)])
    assert result.exit_code == 0, result.stderr

    lines = (out / "scores.csv").read_text().strip().splitlines()
    assert lines[0] == "source_id,L_n,L_r,L_o,a,is_anomaly"
    assert len(lines) == 1 + 12
    pngs = list((out / "reconstructions").glob("*.png"))
    assert len(pngs) == 12


def test_score_missing_checkpoint(ds_dir, tmp_path):
    cfg = _write_config(
        tmp_path / "score.json",
        {"checkpoint": str(tmp_path / "nope"), "data": str(ds_dir)},
    )
    result = _invoke(["score", "--config", cfg, "--out", str(tmp_path / "run")])
    assert result.exit_code == 3


def test_score_missing_data(train_run, tmp_path):
    cfg = _write_config(
        tmp_path / "score.json",
        {
            "checkpoint": str(train_run / "checkpoints" / "final"),
            "data": str(tmp_path / "nothing-here"),
        },
    )
    result = _invoke(["score", "--config", cfg, "--out", str(tmp_path / "run")])
    assert result.exit_code == 3
    assert "meta.json" in _stderr_error(result)["message"]


# ---------------------------------------------------------------------------
# evaluate


def test_evaluate_checkpoint_route(eval_run):
    summary = json.loads((eval_run / "summary.json").read_text())
    assert set(summary["auc"]) == {"l_n", "l_r", "l_o", "combined"}
    for value in summary["auc"].values():
        assert 0.0 <= value <= 1.0
    assert summary["n_normals"] == 6 and summary["n_anomalies"] == 6
    assert "latent_norms" in summary
    assert (eval_run / "roc.csv").is_file()
    assert (eval_run / "scores.csv").is_file()
    for name in (
        "latent_norms.csv", "projection.csv", "latent_coeffs.csv", "latent_histograms.csv"
    ):
        assert (eval_run / name).is_file()
    roc_header = (eval_run / "roc.csv").read_text().splitlines()[0]
    assert roc_header == "fpr,tpr,threshold"


def test_evaluate_scores_route_hand_auc(tmp_path):
    ds = LabeledDataset(
        images=np.zeros((4, 8, 8, 1), dtype=np.float32),
        labels=np.array([0, 0, 1, 1], dtype=np.uint8),
        source_ids=["n1", "n2", "a1", "a2"],
    )
    export_dataset(tmp_path / "ds", {"test": ds})

    # 3 of 4 normal/anomaly pairs correctly ordered -> AUC 0.75
    scores = tmp_path / "scores.csv"
    scores.write_text(
        "source_id,L_n,L_r,L_o,a,is_anomaly\n"
        "n1,0.1,0.1,0.1,0.1,false\n"
        "n2,0.3,0.3,0.3,0.3,false\n"
        "a1,0.2,0.2,0.2,0.2,false\n"
        "a2,0.4,0.4,0.4,0.4,true\n"
    )
    cfg = _write_config(
        tmp_path / "eval.json",
        {"data": str(tmp_path / "ds"), "split": "test", "scores": str(scores)},
    )
    out = tmp_path / "run"
    result = _invoke(["evaluate", "--config", cfg, "--out", str(out)])
    assert result.exit_code == 0, result.stderr
    summary = json.loads((out / "summary.json").read_text())
    assert summary["auc"]["combined"] == 0.75
    assert summary["flagged"] == 1


def test_evaluate_requires_exactly_one_source(ds_dir, train_run, tmp_path):
    cfg = _write_config(
        tmp_path / "eval.json",
        {
            "data": str(ds_dir),
            "scores": str(tmp_path / "s.csv"),
            "checkpoint": str(train_run / "checkpoints" / "final"),
        },
    )
    result = _invoke(["evaluate", "--config", cfg, "--out", str(tmp_path / "run")])
    assert result.exit_code == 2
    assert "exactly one" in _stderr_error(result)["message"]


def test_evaluate_incomplete_score_table(tmp_path):
    ds = LabeledDataset(
        images=np.zeros((2, 8, 8, 1), dtype=np.float32),
        labels=np.array([0, 1], dtype=np.uint8),
        source_ids=["n1", "a1"],
    )
    export_dataset(tmp_path / "ds", {"test": ds})
    scores = tmp_path / "scores.csv"
    scores.write_text("source_id,L_n,L_r,L_o,a,is_anomaly\nn1,0,0,0,0,false\n")
    cfg = _write_config(
        tmp_path / "eval.json",
        {"data": str(tmp_path / "ds"), "scores": str(scores)},
    )
    result = _invoke(["evaluate", "--config", cfg, "--out", str(tmp_path / "run")])
    assert result.exit_code == 3
    assert "a1" in _stderr_error(result)["message"]


# ---------------------------------------------------------------------------
# sweep and report


def test_sweep_tiny_grid(tmp_path):
    cfg = _write_config(
        tmp_path / "sweep.json",
        {
            "corpus": {
                "resolution": 8,
                "train_normal": 16,
                "train_anomaly_pool": 8,
                "test_normal": 6,
                "test_anomaly": 6,
                "seed": 2,
            },
            "gammas": [0.0],
            "encoder_modes": ["joint_image_space"],
            "seeds": [0],
            "model": TINY_MODEL_JSON,
            "train": {**TINY_TRAIN_JSON, "steps_per_phase": 1},
        },
    )
    out = tmp_path / "run"
    result = _invoke(["sweep", "--config", cfg, "--out", str(out)])
    assert result.exit_code == 0, result.stderr

    rows = (out / "sweep.csv").read_text().strip().splitlines()
    assert rows[0] == "gamma,mode,variant,seed,auc,error"
    assert len(rows) == 1 + 4  # one cell, four score variants
    summary = json.loads((out / "summary.json").read_text())
    assert "0" in summary  # gamma keys use %g formatting
    assert "joint_image_space" in summary["0"]
    assert set(summary["0"]["joint_image_space"]["combined"]) == {"per_seed", "median"}


def test_report_renders(eval_run, tmp_path):
    cfg = _write_config(tmp_path / "report.json", {"run": str(eval_run)})
    out = tmp_path / "render"
    result = _invoke(["report", "--config", cfg, "--out", str(out)])
    assert result.exit_code == 0, result.stderr
    assert (out / "report.md").is_file()
    assert list(out.glob("*.svg"))


def test_report_missing_run_dir(tmp_path):
    cfg = _write_config(tmp_path / "report.json", {"run": str(tmp_path / "ghost")})
    result = _invoke(["report", "--config", cfg, "--out", str(tmp_path / "render")])
    assert result.exit_code == 3


# ---------------------------------------------------------------------------
# config error handling


def test_unknown_top_level_key(tmp_path):
    cfg = _write_config(tmp_path / "c.json", {"resolutionn": 8})
    result = _invoke(["gen-data", "--config", cfg, "--out", str(tmp_path / "o")])
    assert result.exit_code == 2
    err = _stderr_error(result)
    assert err["message"] == "unknown config key: config.resolutionn"


def test_unknown_nested_key(ds_dir, tmp_path):
    cfg = _write_config(
        tmp_path / "c.json", {"data": str(ds_dir), "train": {"bogus": 1}}
    )
    result = _invoke(["train", "--config", cfg, "--out", str(tmp_path / "o")])
    assert result.exit_code == 2
    assert "config.train.bogus" in _stderr_error(result)["message"]


def test_invalid_value_rejected(ds_dir, tmp_path):
    cfg = _write_config(
        tmp_path / "c.json",
        {"data": str(ds_dir), "train": {"encoder_mode": "psychic"}},
    )
    result = _invoke(["train", "--config", cfg, "--out", str(tmp_path / "o")])
    assert result.exit_code == 2


def test_malformed_json(tmp_path):
    bad = tmp_path / "c.json"
    bad.write_text("{not json")
    result = _invoke(["gen-data", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert result.exit_code == 2
    assert "valid JSON" in _stderr_error(result)["message"]


def test_missing_config_file(tmp_path):
    result = _invoke(
        ["gen-data", "--config", str(tmp_path / "ghost.json"), "--out", str(tmp_path / "o")]
    )
    assert result.exit_code == 3


def test_help_lists_commands():
    result = _invoke(["--help"])
    assert result.exit_code == 0
    for name in ("gen-data", "train", "score", "evaluate", "sweep", "report"):
        assert name in result.output
