"""
Utility functions for parsing CLI arguments, loading experiment configs and writing outputs.
"""

import os
import sys
import json
import math
import logging
import argparse
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core import ConfigError, ModelSpecificationError, normalized_weights
from sampler import ChainConfig
from config import (LOG_LEVEL_ENV_VAR, DEFAULT_LOG_LEVEL, LOG_FORMAT, LOG_DATE_FORMAT, FLOAT_FORMAT,
                    POISGEO_ITERATIONS, POISGEO_THIN, POISGEO_PRIOR_WEIGHTS, POISGEO_PROPOSAL_SCALE,
                    LINCODE_ITERATIONS, LINCODE_THIN, LINCODE_PRIOR_WEIGHTS,
                    GAUSSIAN_ITERATIONS, GAUSSIAN_PRIOR_WEIGHTS, GAUSSIAN_PROPOSAL_SCALE,
                    KERNEL_GAMMA, KERNEL_JITTER, HISTOGRAM_BINS, PREDICTION_GRID_POINTS, DEFAULT_THIN)

logger = logging.getLogger(__name__)

COMMANDS = ("run", "oracle", "simulate")
SUITES = ("poisgeo", "lincode", "gaussian_check")
TOP_LEVEL_KEYS = {"suite", "data", "sampler", "prior_weights", "output_dir", "kernel", "basis",
                  "reconstruction_seed", "grid_points", "bins", "kappa_grid_size"}
SAMPLER_KEYS = {"iterations", "burn_in", "thin", "seed", "adapt", "target_acceptance_window", "proposal_scale"}

#suite -> (iterations, thin, prior weights, proposal scale)
SUITE_DEFAULTS = {
    "poisgeo": (POISGEO_ITERATIONS, POISGEO_THIN, POISGEO_PRIOR_WEIGHTS, POISGEO_PROPOSAL_SCALE),
    "lincode": (LINCODE_ITERATIONS, LINCODE_THIN, LINCODE_PRIOR_WEIGHTS, None),
    "gaussian_check": (GAUSSIAN_ITERATIONS, DEFAULT_THIN, GAUSSIAN_PRIOR_WEIGHTS, GAUSSIAN_PROPOSAL_SCALE),
}

#=====CLI=====

def parse_cli_args(argv: Optional[Sequence[str]]=None) -> Tuple[str, str, Optional[str]]:
    """
    Parses command line arguments for mixbma.py.

    Returns:
        Tuple[str, str, str or None]: Command, config path and the output directory override.
    """

    parser = argparse.ArgumentParser(prog="mixbma", description="Bayesian model averaging through mixture-posterior MCMC.")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command, help_text in zip(COMMANDS, ("Sample the mixture posterior and write the BMA report.",
                                             "Compare closed forms, quadrature and Monte Carlo estimates.",
                                             "Simulate a dataset and write it with its true parameters.")):
        subparser = subparsers.add_parser(command, help=help_text)
        subparser.add_argument("config", help="Path to the JSON experiment config.")
        subparser.add_argument("--output-dir", dest="output_dir", default=None, help="Overrides the config's output_dir.")

    args = parser.parse_args(argv)
    return args.command, args.config, args.output_dir

def setup_logging():
    """
    Configures the root logger on stderr; the level comes from the MIXBMA_LOG_LEVEL environment variable.
    """

    level_name = os.environ.get(LOG_LEVEL_ENV_VAR, DEFAULT_LOG_LEVEL).upper()
    level = logging.getLevelName(level_name)
    if not isinstance(level, int):
        level = logging.getLevelName(DEFAULT_LOG_LEVEL)
    logging.basicConfig(level=level, format=LOG_FORMAT, datefmt=LOG_DATE_FORMAT, stream=sys.stderr, force=True)
    if level_name != logging.getLevelName(level):
        logger.warning("unknown log level \"%s\" in %s; using %s", level_name, LOG_LEVEL_ENV_VAR, DEFAULT_LOG_LEVEL)

#=====Experiment Config=====

@dataclass(frozen=True)
class ExperimentConfig:
    """
    A validated experiment description.

    Attributes:
        suite (str): poisgeo, lincode or gaussian_check.
        data_source (str): "simulate", "file" or "value".
        data (dict): Simulation parameters (with their seed), {"file": absolute path} or {"value": y}.
        chain (ChainConfig): Sampler settings with the suite's defaults filled in.
        proposal_scale (float or None): Initial random-walk scale; None for the IMH suite.
        prior_weights (tuple): Prior model weights.
        output_dir (str): Absolute output directory.
        kernel (dict): {"gamma", "jitter"} of the linear-code suite.
        basis (str): Code basis of the linear-code suite.
        reconstruction_seed (int or None): Seed of the posterior reconstruction.
        grid_points (int): Prediction grid size.
        bins (int): Histogram bins.
        kappa_grid_size (int or None): kappa-grid memoization, None for exact mode.
        path (str): Config file the experiment was loaded from.
    """

    suite: str
    data_source: str
    data: Dict[str, Any]
    chain: ChainConfig
    proposal_scale: Optional[float]
    prior_weights: Tuple[float, ...]
    output_dir: str
    kernel: Dict[str, float] = field(default_factory=lambda: {"gamma": KERNEL_GAMMA, "jitter": KERNEL_JITTER})
    basis: str = "linear"
    reconstruction_seed: Optional[int] = None
    grid_points: int = PREDICTION_GRID_POINTS
    bins: int = HISTOGRAM_BINS
    kappa_grid_size: Optional[int] = None
    path: str = ""

    def with_output_dir(self, output_dir: Optional[str]) -> "ExperimentConfig":
        if output_dir is None:
            return self
        return replace(self, output_dir=os.path.abspath(output_dir))

def _require(condition: bool, message: str):
    if not condition:
        raise ConfigError(message)

def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)

def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)

def _load_data_section(suite: str, data: Any, base_dir: str) -> Tuple[str, Dict[str, Any]]:
    _require(isinstance(data, dict), "\"data\" must be an object")
    sources = [key for key in ("simulate", "file", "value") if key in data]
    _require(len(sources) == 1 and len(data) == 1,
             f"\"data\" must hold exactly one of simulate, file or value, got {sorted(data)}")
    source = sources[0]

    if suite == "gaussian_check":
        _require(source == "value", "the gaussian_check suite takes its datum as {\"value\": y}")
        _require(_is_number(data["value"]), "\"data.value\" must be a finite number")
        return source, {"value": float(data["value"])}

    _require(source != "value", f"the {suite} suite reads data from simulate or file")
    if source == "file":
        _require(isinstance(data["file"], str), "\"data.file\" must be a path")
        path = os.path.normpath(os.path.join(base_dir, data["file"]))
        _require(os.path.isfile(path), f"data file not found: {path}")
        return source, {"file": path}

    params = data["simulate"]
    _require(isinstance(params, dict), "\"data.simulate\" must be an object")
    _require(_is_int(params.get("seed")) and params["seed"] >= 0, "\"data.simulate.seed\" is required (non-negative integer)")
    allowed = {"seed", "n", "lambda"} if suite == "poisgeo" else {"seed", "n", "theta", "lambda", "k"}
    _require(set(params) <= allowed, f"unknown simulation parameters {sorted(set(params) - allowed)}")
    return source, dict(params)

def _load_chain_config(suite: str, sampler: Any) -> Tuple[ChainConfig, Optional[float]]:
    _require(isinstance(sampler, dict), "\"sampler\" must be an object")
    _require(set(sampler) <= SAMPLER_KEYS, f"unknown sampler keys {sorted(set(sampler) - SAMPLER_KEYS)}")
    _require("seed" in sampler, "\"sampler.seed\" is required; runs are never seeded from the clock")
    _require(_is_int(sampler["seed"]), "\"sampler.seed\" must be an integer")

    iterations, thin, _, proposal_scale = SUITE_DEFAULTS[suite]
    for key in ("iterations", "burn_in", "thin"):
        _require(sampler.get(key) is None or _is_int(sampler[key]), f"\"sampler.{key}\" must be an integer")
    _require(isinstance(sampler.get("adapt", True), bool), "\"sampler.adapt\" must be a boolean")
    if "proposal_scale" in sampler:
        _require(suite != "lincode", "the lincode suite proposes from the prior and takes no proposal_scale")
        _require(_is_number(sampler["proposal_scale"]) and sampler["proposal_scale"] > 0,
                 "\"sampler.proposal_scale\" must be a positive number")
        proposal_scale = float(sampler["proposal_scale"])

    options = {"iterations": sampler.get("iterations", iterations), "seed": sampler["seed"],
               "burn_in": sampler.get("burn_in"), "thin": sampler.get("thin", thin),
               "adapt": sampler.get("adapt", True)}
    if "target_acceptance_window" in sampler:
        window = sampler["target_acceptance_window"]
        _require(isinstance(window, list) and len(window) == 2 and all(_is_number(v) for v in window),
                 "\"sampler.target_acceptance_window\" must be a pair of numbers")
        options["target_acceptance_window"] = (float(window[0]), float(window[1]))

    try:
        return ChainConfig(**options), proposal_scale
    except ModelSpecificationError as e:
        raise ConfigError(f"invalid sampler settings: {e}") from e

def load_experiment_config(path: str) -> ExperimentConfig:
    """
    Loads and validates a JSON experiment config.

    Relative paths (data file, output directory) resolve against the config file's directory.

    Args:
        path (str): Config file.

    Returns:
        ExperimentConfig: Validated experiment.

    Raises:
        ConfigError: On a missing or malformed file, unknown keys, a missing seed, or invalid values.
    """

    try:
        with open(path, "r") as config_file:
            raw = json.load(config_file)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e

    _require(isinstance(raw, dict), "the config must be a JSON object")
    _require(set(raw) <= TOP_LEVEL_KEYS, f"unknown config keys {sorted(set(raw) - TOP_LEVEL_KEYS)}")
    suite = raw.get("suite")
    _require(suite in SUITES, f"\"suite\" must be one of {SUITES}, got {suite!r}")
    _require("data" in raw and "sampler" in raw, "\"data\" and \"sampler\" are required")

    base_dir = os.path.dirname(os.path.abspath(path))
    data_source, data = _load_data_section(suite, raw["data"], base_dir)
    chain, proposal_scale = _load_chain_config(suite, raw["sampler"])

    prior_weights = raw.get("prior_weights", SUITE_DEFAULTS[suite][2])
    _require(isinstance(prior_weights, (list, tuple)) and len(prior_weights) == 2 and all(_is_number(w) for w in prior_weights),
             "\"prior_weights\" must be a list of two numbers")
    try:
        prior_weights = normalized_weights(prior_weights)
    except ModelSpecificationError as e:
        raise ConfigError(str(e)) from e

    output_dir = raw.get("output_dir", "output")
    _require(isinstance(output_dir, str) and output_dir != "", "\"output_dir\" must be a path")

    kernel = raw.get("kernel", {})
    _require(isinstance(kernel, dict) and set(kernel) <= {"gamma", "jitter"}, "\"kernel\" takes gamma and jitter")
    kernel = {"gamma": kernel.get("gamma", KERNEL_GAMMA), "jitter": kernel.get("jitter", KERNEL_JITTER)}
    _require(_is_number(kernel["gamma"]) and kernel["gamma"] > 0, "\"kernel.gamma\" must be positive")
    _require(_is_number(kernel["jitter"]) and kernel["jitter"] >= 0, "\"kernel.jitter\" must be non-negative")

    basis = raw.get("basis", "linear")
    _require(basis in ("linear", "affine"), f"\"basis\" must be linear or affine, got {basis!r}")

    reconstruction_seed = raw.get("reconstruction_seed")
    _require(reconstruction_seed is None or (_is_int(reconstruction_seed) and reconstruction_seed >= 0),
             "\"reconstruction_seed\" must be a non-negative integer")
    for key, minimum in (("grid_points", 2), ("bins", 1)):
        _require(raw.get(key) is None or (_is_int(raw[key]) and raw[key] >= minimum),
                 f"\"{key}\" must be an integer of at least {minimum}")
    kappa_grid_size = raw.get("kappa_grid_size")
    _require(kappa_grid_size is None or (_is_int(kappa_grid_size) and kappa_grid_size >= 2),
             "\"kappa_grid_size\" must be an integer of at least 2")

    return ExperimentConfig(suite=suite, data_source=data_source, data=data, chain=chain,
                            proposal_scale=proposal_scale, prior_weights=prior_weights,
                            output_dir=os.path.normpath(os.path.join(base_dir, output_dir)),
                            kernel=kernel, basis=basis, reconstruction_seed=reconstruction_seed,
                            grid_points=raw.get("grid_points") or PREDICTION_GRID_POINTS,
                            bins=raw.get("bins") or HISTOGRAM_BINS,
                            kappa_grid_size=kappa_grid_size, path=os.path.abspath(path))

#=====Outputs=====

def to_jsonable(value: Any) -> Any:
    """
    Converts numpy scalars and arrays to plain Python values; non-finite floats become None.
    """

    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value

def write_json(path: str, payload: dict):
    """
    Writes a JSON file; floats keep their shortest round-trip representation.
    """

    with open(path, "w") as json_file:
        json.dump(to_jsonable(payload), json_file, indent=2)
        json_file.write("\n")

def write_frame(path: str, frame: pd.DataFrame):
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")

def write_outputs(output_dir: str, outputs: List[Tuple[str, Any]]) -> List[str]:
    """
    Writes every computed output at once: DataFrames as CSV, dicts as JSON, and objects with a
    `to_file(path)` method (datasets) through that method.

    Returns:
        list: Written paths.
    """

    os.makedirs(output_dir, exist_ok=True)
    written = []
    for name, payload in outputs:
        path = os.path.join(output_dir, name)
        if isinstance(payload, pd.DataFrame):
            write_frame(path, payload)
        elif isinstance(payload, dict):
            write_json(path, payload)
        else:
            payload.to_file(path)
        written.append(path)
    logger.info("wrote %d files to %s", len(written), output_dir)
    return written
