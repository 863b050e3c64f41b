"""CLI smoke tests driving the subcommands end to end on files."""

import json

import pytest

from affkit.cli import main

from conftest import make_workspace


@pytest.fixture
def workspace(tmp_path):
    return make_workspace(tmp_path)


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


class TestCli:
    def test_synth_writes_dataset_and_labels(self, tmp_path, capsys):
        out_dir = tmp_path / "data"
        code, out, _ = run_cli(
            capsys,
            "--seed", "5", "--output", str(out_dir),
            "synth",
            "--exemplar", "door=3", "--exemplar", "handle=2",
            "--exemplar", "push bar=1", "--exemplar", "button=1",
        )
        assert code == 0
        doc = json.loads(out)
        assert doc["objects"] == 340
        assert (out_dir / "detections.jsonl").exists()
        assert (out_dir / "ground_truth.json").exists()
        labels = json.loads((out_dir / "labels.json").read_text())
        assert len(labels["assignments"]) == 7

    def test_ingest_summary(self, workspace, capsys):
        code, out, _ = run_cli(
            capsys, "ingest", "--detections", str(workspace.detections_path)
        )
        assert code == 0
        doc = json.loads(out)
        assert doc["objects"] == 22
        assert doc["dimension"] == 8

    def test_project_relabel_verify_evaluate_chain(self, workspace, tmp_path, capsys):
        out_dir = tmp_path / "chain"
        root = workspace.detections_path.parent

        code, out, _ = run_cli(
            capsys,
            "--config", str(root / "config.json"),
            "--seed", "3", "--output", str(out_dir),
            "project",
        )
        assert code == 0
        assert (out_dir / "layout.json").exists()

        code, out, _ = run_cli(
            capsys,
            "--output", str(out_dir),
            "relabel",
            "--detections", str(workspace.detections_path),
            "--labels", str(workspace.labels_path),
        )
        assert code == 0
        assert json.loads(out)["objects"] == 22

        code, out, _ = run_cli(
            capsys,
            "--output", str(out_dir),
            "verify",
            "--relabeled", str(out_dir / "relabeled.jsonl"),
            "--rule", str(workspace.spatial_rule_path),
        )
        assert code == 0
        assert json.loads(out)["suppressed" ] >= 4  # the injected off-door openers

        code, out, _ = run_cli(
            capsys,
            "--output", str(out_dir),
            "evaluate",
            "--predictions", str(out_dir / "kept.jsonl"),
            "--ground-truth", str(workspace.ground_truth_path),
        )
        assert code == 0
        report = json.loads(out)
        assert report["map_score"] > 0.9
        assert (out_dir / "report.json").exists()

    def test_run_batch(self, workspace, tmp_path, capsys):
        root = workspace.detections_path.parent
        code, out, _ = run_cli(capsys, "--config", str(root / "config.json"), "run")
        assert code == 0
        report = json.loads(out)
        assert "map_score" in report

    def test_error_reported_on_stderr(self, tmp_path, capsys):
        code, _, err = run_cli(
            capsys, "ingest", "--detections", str(tmp_path / "absent.jsonl")
        )
        assert code == 1
        assert "error" in err

    def test_missing_required_flag(self, capsys):
        code, _, err = run_cli(capsys, "ingest")
        assert code == 1
        assert "--detections" in err
