"""HTTP service: endpoint happy paths and the error envelope."""

import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from viofusion import __version__
from viofusion.dataset import read_kitti_poses
from viofusion.service import create_app

from conftest import tiny_config


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app(), raise_server_exceptions=False)


def cfg_mapping(**overrides):
    overrides.setdefault("image_size", 32)
    return tiny_config(**overrides).to_mapping()


@pytest.fixture(scope="module")
def workspace(client, tmp_path_factory):
    """Shared synth -> train products used by the read-only endpoint tests."""
    root = tmp_path_factory.mktemp("svc")
    train_dir = str(root / "train")
    eval_dir = str(root / "eval")
    out_dir = str(root / "run")
    r = client.post("/synth", json={"config": cfg_mapping(), "out_dir": train_dir})
    assert r.status_code == 200, r.text
    r = client.post(
        "/synth",
        json={
            "config": cfg_mapping(n_sequences=1, duration_s=15.0, data_seed=1),
            "out_dir": eval_dir,
        },
    )
    assert r.status_code == 200, r.text
    r = client.post(
        "/train",
        json={"config": cfg_mapping(), "data_dir": train_dir, "out_dir": out_dir},
    )
    assert r.status_code == 200, r.text
    return {
        "root": root,
        "train_dir": train_dir,
        "eval_dir": eval_dir,
        "out_dir": out_dir,
        "train_body": r.json(),
    }


class TestHealth:
    def test_health(self, client):
        r = client.get("/health")
        assert r.status_code == 200
        assert r.json() == {"status": "ok", "version": __version__}


class TestSynth:
    def test_reports_counts(self, client, tmp_path):
        r = client.post(
            "/synth",
            json={
                "config": cfg_mapping(n_sequences=1, duration_s=1.0),
                "out_dir": str(tmp_path / "ds"),
            },
        )
        assert r.status_code == 200
        body = r.json()
        assert body["sequences"] == 1
        assert body["frames_per_sequence"] == 11
        assert (tmp_path / "ds" / "manifest.json").exists()

    def test_bad_config_is_400_with_envelope(self, client, tmp_path):
        r = client.post(
            "/synth",
            json={
                "config": {"model": {"no_such_key": 1}},
                "out_dir": str(tmp_path / "ds"),
            },
        )
        assert r.status_code == 400
        body = r.json()
        assert set(body) == {"error"}
        assert body["error"]["code"] == "bad_config"
        assert "no_such_key" in body["error"]["message"]


class TestTrain:
    def test_summary_round_trip(self, workspace):
        body = workspace["train_body"]
        assert body["steps"] == 2
        assert body["initial_loss"] > 0.0
        assert body["final_loss"] > 0.0
        assert body["checkpoint"].endswith("checkpoint.bin")
        assert body["log"].endswith("loss_log.csv")

    def test_missing_dataset_maps_to_not_found(self, client, tmp_path):
        r = client.post(
            "/train",
            json={
                "config": cfg_mapping(),
                "data_dir": str(tmp_path / "nowhere"),
                "out_dir": str(tmp_path / "run"),
            },
        )
        assert r.status_code == 400
        assert r.json()["error"]["code"] == "not_found"

    def test_zero_steps_gives_null_losses(self, client, workspace, tmp_path):
        r = client.post(
            "/train",
            json={
                "config": cfg_mapping(steps=0),
                "data_dir": workspace["train_dir"],
                "out_dir": str(tmp_path / "run0"),
            },
        )
        assert r.status_code == 200
        body = r.json()
        assert body["initial_loss"] is None and body["final_loss"] is None


class TestEval:
    def test_writes_report_and_csv(self, client, workspace):
        report_path = str(workspace["root"] / "report.json")
        r = client.post(
            "/eval",
            json={
                "config": cfg_mapping(),
                "ckpt": workspace["out_dir"] + "/checkpoint.bin",
                "data_dir": workspace["eval_dir"],
                "report": report_path,
            },
        )
        assert r.status_code == 200, r.text
        body = r.json()
        assert body["report_path"] == report_path
        assert body["csv_path"] == report_path[: -len(".json")] + ".csv"
        assert body["frame_count"] == 151
        assert "10" in body["t_rel_percent"]
        assert body["t_rel_avg"] > 0.0
        on_disk = json.loads((workspace["root"] / "report.json").read_text())
        assert on_disk["t_rel_avg"] == body["t_rel_avg"]
        assert (workspace["root"] / "report.csv").exists()

    def test_checkpoint_dim_mismatch_is_bad_checkpoint(self, client, workspace, tmp_path):
        r = client.post(
            "/eval",
            json={
                "config": cfg_mapping(wavenet_channels=32),
                "ckpt": workspace["out_dir"] + "/checkpoint.bin",
                "data_dir": workspace["eval_dir"],
                "report": str(tmp_path / "r.json"),
            },
        )
        assert r.status_code == 400
        assert r.json()["error"]["code"] == "bad_checkpoint"


class TestInfer:
    def test_config_defaults_to_checkpoint_header(self, client, workspace, tmp_path):
        poses_path = str(tmp_path / "poses.txt")
        r = client.post(
            "/infer",
            json={
                "ckpt": workspace["out_dir"] + "/checkpoint.bin",
                "data_dir": workspace["eval_dir"],
                "poses_out": poses_path,
            },
        )
        assert r.status_code == 200, r.text
        assert r.json() == {"poses_out": poses_path, "frames": 151}
        poses = read_kitti_poses(poses_path)
        assert poses.shape == (151, 4, 4)
        np.testing.assert_allclose(poses[0], np.eye(4), atol=1e-12)

    def test_explicit_config_matches_header_run(self, client, workspace, tmp_path):
        common = {
            "ckpt": workspace["out_dir"] + "/checkpoint.bin",
            "data_dir": workspace["eval_dir"],
        }
        a = str(tmp_path / "a.txt")
        b = str(tmp_path / "b.txt")
        r1 = client.post("/infer", json={**common, "poses_out": a})
        r2 = client.post("/infer", json={**common, "config": cfg_mapping(), "poses_out": b})
        assert r1.status_code == 200 and r2.status_code == 200
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()

    def test_multi_sequence_dataset_is_contract_violation(self, client, workspace, tmp_path):
        r = client.post(
            "/infer",
            json={
                "ckpt": workspace["out_dir"] + "/checkpoint.bin",
                "data_dir": workspace["train_dir"],
                "poses_out": str(tmp_path / "p.txt"),
            },
        )
        assert r.status_code == 400
        assert r.json()["error"]["code"] == "contract_violation"


class TestGradcheckEndpoint:
    def test_blocks_report_and_pass(self, client):
        r = client.post("/gradcheck", json={"config": cfg_mapping()})
        assert r.status_code == 200
        body = r.json()
        assert body["passed"] is True
        names = {row["block"] for row in body["rows"]}
        assert "end_to_end" in names
        for row in body["rows"]:
            assert row["passed"] is True
            assert row["max_rel_err"] <= row["tolerance"]


class TestParamsEndpoint:
    def test_counts_and_comparison(self, client):
        r = client.post("/params", json={"config": tiny_config().to_mapping()})
        assert r.status_code == 200
        body = r.json()
        assert body["blocks"]["total"] == 313934
        assert body["fusion_comparison"]["ema"] == 24576
        assert body["fusion_comparison"]["lstm"] == 33024
        assert body["macs"]["total"] > 0
        assert body["config"]["model"]["n_tokens"] == 4

    def test_validation_error_shape(self, client):
        r = client.post("/params", json={"config": {"train": {"beta1": 2.0}}})
        assert r.status_code == 400
        assert r.json()["error"]["code"] == "bad_config"
