"""Command-line surface tests: simulate -> run -> eval -> plot -> inspect."""

from __future__ import annotations

import json

import numpy as np
import pytest

from nflowseg.cli import main

SCENE = {
    "width": 160, "height": 120, "focal_px": 80.0,
    "camera": {"t": [0.15, -0.05, 0.05], "w": [0.01, -0.015, 0.02]},
    "background": {"normal": [0.05, -0.04, 1.0], "dist": 1.0},
    "event_rate": 3.0, "num_bg_anchors": 400,
    "objects": [{
        "plane": {"normal": [0.0, 0.0, 1.0], "dist": 0.7},
        "motion": {"t": [-0.25, 0.12, 0.0], "w": [0.0, 0.0, 0.0]},
        "region": [50.0, 45.0, 18.0, 14.0],
        "event_rate": 10.0, "num_anchors": 180,
    }],
    "steps": 5, "seed": 3,
}


@pytest.fixture()
def scene_file(tmp_path):
    path = tmp_path / "scene.json"
    path.write_text(json.dumps(SCENE))
    return path


@pytest.fixture()
def recording_file(tmp_path, scene_file):
    out = tmp_path / "rec.evn"
    assert main(["simulate", "--scene", str(scene_file), "--out", str(out)]) == 0
    return out


@pytest.fixture()
def prediction_file(tmp_path, recording_file):
    out = tmp_path / "pred.evn"
    assert main(["run", "--recording", str(recording_file), "--out", str(out)]) == 0
    return out


def test_simulate_writes_recording(recording_file):
    from nflowseg.data import load_recording
    rec = load_recording(recording_file)
    assert rec.num_slices == 5
    assert rec.num_objects == 1


def test_run_then_eval_prints_mean_iou(tmp_path, recording_file, prediction_file,
                                       capsys):
    report = tmp_path / "report.json"
    code = main(["eval", "--recording", str(recording_file),
                 "--pred", str(prediction_file), "--out", str(report)])
    assert code == 0
    out = capsys.readouterr().out
    assert "mean IoU: 0." in out
    # four decimals on the mean
    line = [l for l in out.splitlines() if l.startswith("mean IoU")][0]
    assert len(line.split("0.")[-1]) == 4
    data = json.loads(report.read_text())
    assert data["mean_iou"] > 0.5
    assert len(data["per_frame_iou"]) == 5
    assert "rmse_velocity" in data


def test_eval_csv_format(recording_file, prediction_file, capsys):
    assert main(["eval", "--recording", str(recording_file),
                 "--pred", str(prediction_file), "--format", "csv"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("frame,iou")


def test_eval_report_is_deterministic(tmp_path, recording_file, prediction_file):
    r1, r2 = tmp_path / "r1.json", tmp_path / "r2.json"
    main(["eval", "--recording", str(recording_file),
          "--pred", str(prediction_file), "--out", str(r1)])
    main(["eval", "--recording", str(recording_file),
          "--pred", str(prediction_file), "--out", str(r2)])
    assert r1.read_bytes() == r2.read_bytes()


def test_eval_mismatched_inputs_fail(tmp_path, scene_file, recording_file,
                                     prediction_file, capsys):
    # a recording with a different slice count
    other = tmp_path / "other.evn"
    main(["simulate", "--scene", str(scene_file), "--out", str(other),
          "--steps", "3"])
    code = main(["eval", "--recording", str(other),
                 "--pred", str(prediction_file)])
    assert code == 1
    err = capsys.readouterr().err
    assert "slices" in err


def test_plot_writes_figures(tmp_path, recording_file, prediction_file):
    report = tmp_path / "report.json"
    main(["eval", "--recording", str(recording_file),
          "--pred", str(prediction_file), "--out", str(report)])
    outdir = tmp_path / "figs"
    code = main(["plot", "--report", str(report), "--out", str(outdir),
                 "--recording", str(recording_file),
                 "--pred", str(prediction_file), "--max-overlays", "2"])
    assert code == 0
    names = {p.name for p in outdir.iterdir()}
    assert "iou.png" in names
    assert "object1_dx.png" in names
    assert "object1_dy.png" in names
    assert "segmentation_000.png" in names


def test_plot_empty_report_fails(tmp_path, capsys):
    report = tmp_path / "empty.json"
    report.write_text(json.dumps({"per_frame_iou": [], "objects": []}))
    code = main(["plot", "--report", str(report), "--out", str(tmp_path / "figs")])
    assert code == 1
    assert "empty" in capsys.readouterr().err


def test_inspect_summary(recording_file, capsys):
    assert main(["inspect", "--recording", str(recording_file)]) == 0
    out = capsys.readouterr().out
    assert "slices: 5" in out
    assert "ground truth: yes" in out


def test_missing_file_fails_cleanly(tmp_path, capsys):
    code = main(["inspect", "--recording", str(tmp_path / "nope.evn")])
    assert code == 1
    assert capsys.readouterr().err.startswith("error:")


def test_run_with_config_file(tmp_path, recording_file):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("oversegment_k = 20\n")
    out = tmp_path / "pred2.evn"
    assert main(["run", "--recording", str(recording_file), "--out", str(out),
                 "--config", str(cfg)]) == 0
    assert out.exists()
