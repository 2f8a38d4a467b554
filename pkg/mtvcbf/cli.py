"""Command-line entry point: gen-data, train, eval-bound, run and compare"""

import os
import json
import logging
import argparse
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime
from typing import Dict, List, Optional, Tuple

import numpy as np
from dotenv import load_dotenv

from . import __version__
from .config import (
    epsilon_is_auto,
    epsilon_samples_from,
    eval_settings_from,
    input_range_from,
    load_config,
    output_dir_from,
    resolved_config,
    scenario_config_from,
    training_config_from,
    vehicle_params_from,
)
from .errors import ConfigError, MtvCbfError, QpError, TrainingError
from .hocbf import MarginMode
from .logging_config import configure_logging, install_level_signal
from .margin_net import (
    MlpParams,
    TrainingHistory,
    estimate_error_bound,
    generate_dataset,
    load_dataset,
    load_model,
    save_dataset,
    save_model,
    train,
)
from .scenarios import Metrics, ScenarioConfig, compute_metrics, run_scenario
from .services import SimLogExporter, file_sha256, log_sha256

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
RANGE_TOLERANCE = 1e-9


@dataclass
class RunManifest:
    command: str
    config: Dict[str, str]
    seeds: Dict[str, int]
    output_dir: str
    artifacts: Dict[str, str] = field(default_factory=dict)
    log_sha256: Dict[str, str] = field(default_factory=dict)
    status: str = "running"
    version: str = __version__
    started_at: str = field(default_factory=lambda: datetime.now().isoformat(timespec="seconds"))

    def write(self):
        os.makedirs(self.output_dir, exist_ok=True)
        path = os.path.join(self.output_dir, MANIFEST_FILE)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
        logger.debug(f"Manifest written to {path}")

    def add_artifact(self, path: str, prefix: str = ""):
        self.artifacts[prefix + os.path.basename(path)] = file_sha256(path)


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command line arguments"""
    parser = argparse.ArgumentParser(prog="mtvcbf", description="Learned MTV safety margins for CBF safety filters")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    def common(sub):
        sub.add_argument("--config", help="KEY=VALUE config file")
        sub.add_argument("--out", help="Output directory (default OUTPUT_DIR or ./out)")
        sub.add_argument("--seed", type=int, help="Override the seed of this command")

    gen_data = commands.add_parser("gen-data", help="Sample relative poses labelled with the exact margin")
    common(gen_data)

    train_cmd = commands.add_parser("train", help="Train the margin network")
    common(train_cmd)
    train_cmd.add_argument("--data", help="Dataset CSV from gen-data (generated in memory if omitted)")

    eval_bound = commands.add_parser("eval-bound", help="Estimate the network's error bound")
    common(eval_bound)
    eval_bound.add_argument("--model", required=True, help="Model file from train")

    run = commands.add_parser("run", help="Run one scenario")
    common(run)
    run.add_argument("--model", help="Model file (not needed for the c2c margin mode)")
    run.add_argument("--no-filter", action="store_true", help="Apply the nominal inputs unfiltered")

    compare = commands.add_parser("compare", help="Run two scenarios of the same kind side by side")
    compare.add_argument("configs", nargs=2, metavar="CONFIG", help="Two scenario config files")
    compare.add_argument("--out", help="Output directory (default OUTPUT_DIR or ./out)")
    compare.add_argument("--seed", type=int, help="Override the scenario seed of both runs")
    compare.add_argument("--model", help="Model file (not needed if both runs use c2c)")

    return parser.parse_args(argv)


def _output_dir(args, values: Dict[str, str]) -> str:
    return args.out or output_dir_from(values)


def _check_model_range(net: MlpParams, values: Dict[str, str]):
    """The model's trained range must match the configured vehicle"""
    expected = input_range_from(values, vehicle_params_from(values))
    trained = net.trained_range
    if not np.allclose(trained.half_extents, expected.half_extents, rtol=0.0, atol=RANGE_TOLERANCE):
        raise ConfigError(
            "VEHICLE_*",
            f"model was trained on half-extents {trained.half_extents.tolist()}, "
            f"config implies {expected.half_extents.tolist()}",
        )


def _load_model_checked(path: Optional[str], values: Dict[str, str]) -> MlpParams:
    if not path:
        raise ConfigError("--model", "a model file is required for the learned and hybrid margin modes")
    if not os.path.isfile(path):
        raise ConfigError("--model", f"model file not found: {path}")
    net = load_model(path)
    _check_model_range(net, values)
    return net


def cmd_gen_data(args) -> int:
    values = load_config(args.config)
    params = vehicle_params_from(values)
    training = training_config_from(values, args.seed)
    out_dir = _output_dir(args, values)
    manifest = RunManifest("gen-data", resolved_config(values), {"NET_SEED": training.seed}, out_dir)
    manifest.write()

    dataset = generate_dataset(input_range_from(values, params), training.sample_count, training.seed, params)
    path = os.path.join(out_dir, "dataset.csv")
    save_dataset(dataset, path)
    logger.info(f"Wrote {len(dataset)} samples to {path}")

    manifest.add_artifact(path)
    manifest.status = "ok"
    manifest.write()
    return 0


def _save_history(history: TrainingHistory, path: str):
    rows = np.column_stack([
        np.arange(1, len(history.train_mse) + 1),
        history.train_mse,
        history.validation_mse,
        history.learning_rate,
    ]) if history.train_mse else np.zeros((0, 4))
    np.savetxt(path, rows, fmt="%.10g", delimiter=",", header="epoch,train_mse,validation_mse,learning_rate", comments="")


def cmd_train(args) -> int:
    values = load_config(args.config)
    params = vehicle_params_from(values)
    training = training_config_from(values, args.seed)
    input_range = input_range_from(values, params)
    out_dir = _output_dir(args, values)
    manifest = RunManifest("train", resolved_config(values), {"NET_SEED": training.seed}, out_dir)
    manifest.write()

    if args.data:
        dataset = load_dataset(args.data)
        manifest.add_artifact(args.data)
        logger.info(f"Loaded {len(dataset)} samples from {args.data}")
    else:
        dataset = generate_dataset(input_range, training.sample_count, training.seed, params)

    history = TrainingHistory()
    model_path = os.path.join(out_dir, "model.txt")
    status = 0
    try:
        net = train(dataset, training, input_range, history)
    except TrainingError as e:
        logger.error(f"Training did not converge: {e}")
        net = e.params
        status = 1
    if net is not None:
        save_model(net, model_path)
        manifest.add_artifact(model_path)
        logger.info(f"Model saved to {model_path}")

    history_path = os.path.join(out_dir, "history.csv")
    _save_history(history, history_path)
    manifest.add_artifact(history_path)
    manifest.status = "ok" if status == 0 else "not converged"
    manifest.write()
    return status


def cmd_eval_bound(args) -> int:
    values = load_config(args.config)
    params = vehicle_params_from(values)
    count, seed = eval_settings_from(values)
    seed = seed if args.seed is None else args.seed
    out_dir = _output_dir(args, values)
    net = _load_model_checked(args.model, values)
    manifest = RunManifest("eval-bound", resolved_config(values), {"NET_EVAL_SEED": seed}, out_dir)
    manifest.add_artifact(args.model)
    manifest.write()

    bound = estimate_error_bound(net, params, count, seed)
    path = os.path.join(out_dir, "error_bound.txt")
    with open(path, "w", encoding="utf-8") as f:
        f.write(
            f"epsilon_max_m: {bound.epsilon_max:.6f}\n"
            f"epsilon_mean_m: {bound.epsilon_mean:.6f}\n"
            f"epsilon_max_percent_of_width: {bound.max_percent_of_width:.2f}\n"
            f"epsilon_mean_percent_of_width: {bound.mean_percent_of_width:.2f}\n"
            f"eval_count: {bound.eval_count}\n"
            f"seed: {bound.seed}\n"
        )
    logger.info(f"Error bound written to {path}")

    manifest.add_artifact(path)
    manifest.status = "ok"
    manifest.write()
    return 0


def _prepare_scenario(
    values: Dict[str, str], model: Optional[str], seed: Optional[int], no_filter: bool
) -> Tuple[ScenarioConfig, Optional[MlpParams]]:
    config = scenario_config_from(values, seed=seed, filter_enabled=False if no_filter else None)
    net = None
    if config.margin_mode != MarginMode.C2C:
        net = _load_model_checked(model, values)
        if epsilon_is_auto(values):
            bound = estimate_error_bound(net, config.vehicle, epsilon_samples_from(values), seed=config.seed + 1)
            config = replace(config, cbf=replace(config.cbf, epsilon=bound.epsilon_max))
            logger.info(f"Using estimated epsilon {bound.epsilon_max:.4f} m")
    return config, net


def _run_and_export(
    config: ScenarioConfig, net: Optional[MlpParams], out_dir: str, manifest: RunManifest, prefix: str = ""
) -> Metrics:
    """Run, then write log.csv and metrics.txt into out_dir and record their hashes under prefix"""
    exporter = SimLogExporter(out_dir)
    try:
        log = run_scenario(config, net)
    except QpError as e:
        if e.partial_log is not None and len(e.partial_log):
            path = exporter.export_log(e.partial_log, "log_partial.csv")
            manifest.add_artifact(path, prefix)
        raise
    log_path = exporter.export_log(log)
    metrics = compute_metrics(log, config)
    metrics_path = exporter.export_metrics(metrics)
    for path in (log_path, metrics_path):
        manifest.add_artifact(path, prefix)
    manifest.log_sha256[prefix + os.path.basename(log_path)] = log_sha256(log_path)
    return metrics


def cmd_run(args) -> int:
    values = load_config(args.config)
    out_dir = _output_dir(args, values)
    resolved = resolved_config(values)
    if args.no_filter:
        resolved["FILTER_ENABLED"] = "false"
    config, net = _prepare_scenario(values, args.model, args.seed, args.no_filter)
    resolved["CBF_EPSILON"] = repr(config.cbf.epsilon)
    manifest = RunManifest("run", resolved, {"SCENARIO_SEED": config.seed}, out_dir)
    if args.model:
        manifest.add_artifact(args.model)
    manifest.write()

    try:
        _run_and_export(config, net, out_dir, manifest)
    finally:
        manifest.status = "ok" if manifest.artifacts.get("metrics.txt") else "failed"
        manifest.write()
    return 0


def cmd_compare(args) -> int:
    runs = []
    for path in args.configs:
        values = load_config(path)
        config, net = _prepare_scenario(values, args.model, args.seed, no_filter=False)
        label = os.path.splitext(os.path.basename(path))[0]
        runs.append((label, values, config, net))

    kinds = {config.kind for _, _, config, _ in runs}
    if len(kinds) != 1:
        raise ConfigError("SCENARIO_KIND", f"compare needs two runs of the same kind, got {sorted(k.value for k in kinds)}")
    labels = [label for label, _, _, _ in runs]
    if labels[0] == labels[1]:
        labels = [f"{labels[0]}_a", f"{labels[1]}_b"]

    out_dir = args.out or output_dir_from(runs[0][1])
    manifest = RunManifest(
        "compare",
        {f"{label}:{key}": value for label, (_, values, _, _) in zip(labels, runs) for key, value in resolved_config(values).items()},
        {f"{label}:SCENARIO_SEED": config.seed for label, (_, _, config, _) in zip(labels, runs)},
        out_dir,
    )
    manifest.write()

    rows = []
    for label, (_, _, config, net) in zip(labels, runs):
        rows.append(_run_and_export(config, net, os.path.join(out_dir, label), manifest, prefix=f"{label}/"))

    path = SimLogExporter(out_dir).export_comparison(labels, rows)
    manifest.add_artifact(path)
    manifest.status = "ok"
    manifest.write()
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval-bound": cmd_eval_bound,
    "run": cmd_run,
    "compare": cmd_compare,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Run one command; returns the process exit code"""
    load_dotenv()
    args = parse_args(argv)
    configure_logging()
    install_level_signal()

    try:
        return COMMANDS[args.command](args)
    except MtvCbfError as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    except OSError as e:
        logger.error(f"{args.command} failed on file access: {e}")
        return 1
    except ValueError as e:
        logger.error(f"{args.command} failed validation: {e}")
        return 1
