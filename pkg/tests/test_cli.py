import json
import os

import pytest

from mtvcbf.cli import MANIFEST_FILE, main, parse_args
from mtvcbf.logging_config import logger
from mtvcbf.margin_net import load_model

SAMPLE_DATA_CONFIG = "NET_SAMPLE_COUNT=100\nNET_MAX_EPOCHS=0\nNET_EVAL_COUNT=200\n"
SAMPLE_BYPASS_CONFIG = "SCENARIO_KIND=bypassing\nCBF_MARGIN_MODE=c2c\nSCENARIO_HORIZON={horizon}\nSCENARIO_Y_NOM={y_nom}\n"
SAMPLE_OVERTAKING_CONFIG = "SCENARIO_KIND=overtaking\nCBF_MARGIN_MODE=c2c\nSCENARIO_HORIZON=0.5\n"


@pytest.fixture(autouse=True)
def workspace(tmp_path, monkeypatch):
    """Each command runs in a scratch directory with its log file there too"""
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv('LOG_DIR', str(tmp_path / 'logs'))
    original_handlers = list(logger.handlers)
    original_level = logger.level
    yield tmp_path
    for handler in list(logger.handlers):
        if handler not in original_handlers:
            logger.removeHandler(handler)
            handler.close()
    logger.setLevel(original_level)


def _write(directory, name, text):
    path = directory / name
    path.write_text(text)
    return str(path)


def _manifest(out_dir):
    with open(os.path.join(str(out_dir), MANIFEST_FILE)) as f:
        return json.load(f)


def _metrics(path):
    with open(path) as f:
        return dict(line.split(": ", 1) for line in f.read().splitlines())


def test_parse_args():
    args = parse_args(["run", "--config", "a.env", "--no-filter", "--seed", "3"])
    assert args.command == "run"
    assert args.config == "a.env"
    assert args.no_filter
    assert args.seed == 3
    with pytest.raises(SystemExit):
        parse_args(["compare", "only_one.env"])


def test_gen_data_is_reproducible(workspace):
    """Same config and seed give byte-identical datasets"""
    config = _write(workspace, "data.env", SAMPLE_DATA_CONFIG)
    assert main(["gen-data", "--config", config, "--out", "first"]) == 0
    assert main(["gen-data", "--config", config, "--out", "second"]) == 0
    assert main(["gen-data", "--config", config, "--out", "third", "--seed", "5"]) == 0

    first, second, third = (_manifest(workspace / name) for name in ("first", "second", "third"))
    assert first["status"] == "ok"
    assert first["seeds"] == {"NET_SEED": 0}
    assert first["artifacts"]["dataset.csv"] == second["artifacts"]["dataset.csv"]
    assert first["artifacts"]["dataset.csv"] != third["artifacts"]["dataset.csv"]
    with open(workspace / "first" / "dataset.csv") as f:
        assert len(f.read().splitlines()) == 101


def test_train_then_eval_bound(workspace):
    """A zero-epoch model still saves and evaluates"""
    config = _write(workspace, "data.env", SAMPLE_DATA_CONFIG)
    assert main(["train", "--config", config, "--out", "model"]) == 0
    model_path = str(workspace / "model" / "model.txt")
    assert load_model(model_path).layer_dims == (3, 62, 62, 1)

    assert main(["eval-bound", "--config", config, "--model", model_path, "--out", "bound"]) == 0
    bound = _metrics(str(workspace / "bound" / "error_bound.txt"))
    assert float(bound["epsilon_max_m"]) > 0
    assert bound["eval_count"] == "200"
    assert _manifest(workspace / "bound")["artifacts"]["model.txt"] == _manifest(workspace / "model")["artifacts"]["model.txt"]


def test_model_for_another_vehicle_is_rejected(workspace):
    """Vehicle dimensions that imply a different trained range fail with exit 1"""
    config = _write(workspace, "data.env", SAMPLE_DATA_CONFIG)
    assert main(["train", "--config", config, "--out", "model"]) == 0
    other = _write(workspace, "other.env", SAMPLE_DATA_CONFIG + "VEHICLE_WHEELBASE=0.2\n")
    assert main(["eval-bound", "--config", other, "--model", str(workspace / "model" / "model.txt")]) == 1


def test_missing_model_fails(workspace):
    config = _write(workspace, "hybrid.env", "SCENARIO_KIND=bypassing\nCBF_MARGIN_MODE=hybrid\n")
    assert main(["run", "--config", config]) == 1
    assert main(["run", "--config", config, "--model", "no_such_model.txt"]) == 1


def test_unfiltered_run_collides(workspace):
    """--no-filter drives straight into the oncoming robot and says so in the metrics"""
    config = _write(workspace, "bypass.env", SAMPLE_BYPASS_CONFIG.format(horizon=3, y_nom=0))
    assert main(["run", "--config", config, "--no-filter", "--out", "unfiltered"]) == 0

    metrics = _metrics(str(workspace / "unfiltered" / "metrics.txt"))
    assert float(metrics["min_exact_margin_m"]) < 0
    assert metrics["qp_mean_ms"] == "0.000"
    manifest = _manifest(workspace / "unfiltered")
    assert manifest["status"] == "ok"
    assert manifest["config"]["FILTER_ENABLED"] == "false"
    assert set(manifest["log_sha256"]) == {"log.csv"}


def test_compare_same_kind(workspace):
    first = _write(workspace, "slow.env", SAMPLE_BYPASS_CONFIG.format(horizon=0.5, y_nom=0.116))
    second = _write(workspace, "fast.env", SAMPLE_BYPASS_CONFIG.format(horizon=0.5, y_nom=0.072))
    assert main(["compare", first, second, "--out", "cmp"]) == 0

    for label in ("slow", "fast"):
        assert os.path.isfile(workspace / "cmp" / label / "log.csv")
    with open(workspace / "cmp" / "comparison.txt") as f:
        lines = f.read().splitlines()
    assert len(lines) == 3
    assert _manifest(workspace / "cmp")["status"] == "ok"


def test_compare_rejects_different_kinds(workspace):
    bypass = _write(workspace, "bypass.env", SAMPLE_BYPASS_CONFIG.format(horizon=0.5, y_nom=0.116))
    overtaking = _write(workspace, "overtaking.env", SAMPLE_OVERTAKING_CONFIG)
    assert main(["compare", bypass, overtaking, "--out", "cmp"]) == 1
    assert not os.path.exists(workspace / "cmp" / "comparison.txt")
