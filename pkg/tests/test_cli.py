"""Command line entry points, exercised in-process."""

import json

import numpy as np
import pytest

from chaincal.cli import main
from chaincal.dataset import load
from chaincal.metrics import CalibrationResult


@pytest.fixture(scope="module")
def pose_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "poses.jsonl"
    assert main(["generate", "--count", "18", "--seed", "3",
                 "--out", str(path)]) == 0
    return path


def test_generate_writes_a_loadable_dataset(pose_file, capsys):
    dataset = load(pose_file)
    assert len(dataset) == 18 and dataset.noise.clean


def test_generate_with_noise_records_the_spec(tmp_path):
    out = tmp_path / "noisy.jsonl"
    assert main(["generate", "--count", "4", "--seed", "1",
                 "--sigma-touch", "5", "--sigma-camera", "2",
                 "--out", str(out)]) == 0
    dataset = load(out)
    assert dataset.noise.sigma_touch_mm == 5.0
    assert dataset.noise.sigma_camera_px == 2.0


def test_calibrate_end_to_end(pose_file, tmp_path, capsys):
    result_path = tmp_path / "result.json"
    code = main(["calibrate", "--combo", "LARA", "--mask", "LA:offset",
                 "--poses", "10", "--test-poses", "5", "--pert", "5",
                 "--seed", "2", "--dataset", str(pose_file),
                 "--max-iterations", "8", "--out", str(result_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "test end-effector error" in out
    record = json.loads(result_path.read_text())
    back = CalibrationResult.from_dict(record)
    assert back.combo_label == "LARA"


def test_calibrate_rejects_bad_mask(pose_file, capsys):
    code = main(["calibrate", "--combo", "LARA", "--mask", "XX:all",
                 "--dataset", str(pose_file)])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_calibrate_rejects_foreign_dataset(pose_file, tmp_path, capsys, model):
    from chaincal.kinematics import save_model
    from chaincal.parameters import parse_mask_spec, perturb

    other = tmp_path / "other_model.json"
    save_model(perturb(model, parse_mask_spec("LA:all"), 5,
                       np.random.default_rng(0)), other)
    code = main(["calibrate", "--combo", "LARA", "--model", str(other),
                 "--poses", "10", "--dataset", str(pose_file)])
    assert code == 2
    assert "different model" in capsys.readouterr().err


def test_observability_command(pose_file, tmp_path, capsys):
    report_path = tmp_path / "obs.json"
    code = main(["observability", "--combo", "LALEye", "--mask", "LA:all",
                 "--poses", "6", "--seed", "1", "--dataset", str(pose_file),
                 "--out", str(report_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "rank deficient" in out    # 12 residuals cannot span 27 parameters
    report = json.loads(report_path.read_text())
    assert report["o4"] == 0.0


def test_experiment_and_report_commands(tmp_path, capsys):
    config = {
        "name": "cli_demo",
        "seed": 5,
        "dataset": {"count": 16, "seed": 2},
        "test_poses": 4,
        "combos": ["LARA"],
        "masks": ["LA:offset"],
        "perturbations": [5],
        "train_sizes": [8],
        "noise": [{}],
        "repetitions": 1,
        "solver": {"max_iterations": 4},
    }
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config))
    run_dir = tmp_path / "run"
    assert main(["experiment", "--config", str(config_path),
                 "--out", str(run_dir)]) == 0
    assert "1 cells" in capsys.readouterr().out
    assert main(["report", "--out", str(run_dir)]) == 0
    assert "aggregated 1/1 cells" in capsys.readouterr().out
    assert (run_dir / "cli_demo.csv").exists()


def test_missing_config_file_is_a_usage_error(tmp_path, capsys):
    code = main(["experiment", "--config", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "run")])
    assert code == 2
