"""
Experiment script.

Runs, checks or simulates one experiment described by a JSON config:

    python3 mixbma.py run <config> [--output-dir DIR]
    python3 mixbma.py oracle <config> [--output-dir DIR]
    python3 mixbma.py simulate <config> [--output-dir DIR]
"""

import sys
import time
import logging
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

import model_poisgeo
import model_lincode
import oracle
from core import MixBmaError, ConfigError, DegenerateChainError, ModelSpecificationError
from sampler import Chain, autocorrelation, make_rng, spawn_seeds, suggest_thin
from analysis import BmaReport, WeightedSummary, build_report, responsibilities, summarize_weighted
from util_helpers import ExperimentConfig, load_experiment_config, parse_cli_args, setup_logging, write_outputs
from config import (CHAIN_FILE, ACF_FILE, REPORT_FILE, ORACLE_FILE, TRUTH_FILE, PREDICTION_FILE, POISGEO_DATA_FILE,
                    LINCODE_DATA_FILE, POISGEO_SIMULATION, LINCODE_SIMULATION, CI_Z_VALUE, MAX_SUGGESTED_THIN)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_RUNTIME_ERROR = 2
EXIT_TOLERANCE_BREACH = 3

Output = Tuple[str, Any]

class ExperimentRunner:
    """
    Executes one experiment and collects its outputs in memory.

    Nothing touches the output directory until every output is computed, so a failing run
    leaves no partial results behind.

    For `run`, the outputs are:
        - chain.csv: iteration, natural-scale coordinates, per-model log-likelihoods and responsibilities.
        - acf.csv: lag and the autocorrelation of every coordinate on the sampling scale.
        - report.json: every BmaReport field, seeds, runtime, acceptance rate, suggested thinning and suite-specific values.
        - hist_<coordinate>_<group>.csv: weighted histograms for the BMA posterior and each model.
        - prediction.csv (lincode only): central-tendency curves for m0, m1 and BMA.

    Attributes:
        config (ExperimentConfig): Validated experiment.
    """

    def __init__(self, config: ExperimentConfig):
        """
        Args:
            config (ExperimentConfig): Validated experiment.
        """

        self.config = config

    #=====Data=====

    def load_data(self) -> Tuple[Any, Optional[dict]]:
        """
        Loads or simulates the experiment's dataset.

        Returns:
            Tuple[Any, dict or None]: The dataset and, for simulated data, its true parameters.

        Raises:
            ConfigError: If the dataset file or the simulation parameters are invalid.
        """

        config = self.config
        if config.suite == "gaussian_check":
            return config.data["value"], None

        try:
            if config.data_source == "file":
                if config.suite == "poisgeo":
                    return model_poisgeo.CountData.from_file(config.data["file"]), None
                return model_lincode.LinCodeData.from_file(config.data["file"], config.basis), None
            return self._simulate()
        except ModelSpecificationError as e:
            raise ConfigError(f"invalid data: {e}") from e

    def _simulate(self) -> Tuple[Any, dict]:
        config = self.config
        params = config.data
        if config.suite == "poisgeo":
            n = params.get("n", POISGEO_SIMULATION["n"])
            lam = params.get("lambda", POISGEO_SIMULATION["lambda"])
            data = model_poisgeo.simulate(n, lam, params["seed"])
            return data, {"suite": config.suite, "n": n, "lambda": lam, "seed": params["seed"]}

        settings = {key: params.get(key, LINCODE_SIMULATION[key]) for key in ("n", "theta", "lambda", "k")}
        data, delta = model_lincode.simulate_lincode(settings["n"], settings["theta"], settings["lambda"], settings["k"],
                                                     self._kernel(), params["seed"], config.basis)
        return data, {"suite": config.suite, **settings, "basis": config.basis, "kernel": dict(config.kernel),
                      "seed": params["seed"], "delta": delta}

    def _kernel(self) -> model_lincode.KernelSpec:
        return model_lincode.KernelSpec(self.config.kernel["gamma"], self.config.kernel["jitter"])

    def _collapsed(self, data: model_lincode.LinCodeData) -> model_lincode.LinCodeCollapsed:
        return model_lincode.LinCodeCollapsed(data, self._kernel(), self.config.prior_weights, self.config.kappa_grid_size)

    def _sample(self, data: Any) -> Tuple[Any, Chain, Optional[model_lincode.LinCodeCollapsed]]:
        #returns (ensemble, chain, collapsed caches for the linear-code suite)
        config = self.config
        if config.suite == "poisgeo":
            ensemble, chain = model_poisgeo.run_poisgeo(data, config.chain, config.prior_weights, config.proposal_scale)
            return ensemble, chain, None
        if config.suite == "lincode":
            collapsed = self._collapsed(data)
            return collapsed.ensemble(), model_lincode.run_kappa_imh(collapsed, config.chain), collapsed
        ensemble, chain = oracle.run_gaussian_check(data, config.chain, config.prior_weights, config.proposal_scale)
        return ensemble, chain, None

    #=====Run=====

    def run(self) -> List[Output]:
        """
        Samples the mixture posterior and builds every output of `run`.
        """

        start = time.perf_counter()
        data, _ = self.load_data()
        ensemble, chain, collapsed = self._sample(data)
        report = build_report(chain, ensemble, self.config.bins)
        w = responsibilities(chain, ensemble)

        acf, suggested_thin, diagnostic_warnings = _chain_diagnostics(chain)
        outputs = [(CHAIN_FILE, chain.to_frame(w.w)), (ACF_FILE, acf)]
        outputs.extend(self._histograms(report.summaries))
        payload = self._report_payload(chain, report)
        payload["suggested_thin"] = suggested_thin
        payload["warnings"] = list(payload["warnings"]) + diagnostic_warnings

        if self.config.suite == "poisgeo":
            payload.update(self._poisgeo_results(data, report))
        elif self.config.suite == "gaussian_check":
            payload.update(self._gaussian_results(data, report))
        else:
            results, extra_outputs = self._lincode_results(chain, collapsed)
            payload.update(results)
            outputs.extend(extra_outputs)

        payload["runtime_seconds"] = time.perf_counter() - start
        outputs.insert(1, (REPORT_FILE, payload))
        return outputs

    def _report_payload(self, chain: Chain, report: BmaReport) -> dict:
        config = self.config
        return {
            "suite": config.suite,
            **report.to_dict(),
            "acceptance_rate": chain.acceptance_rate,
            "final_scales": chain.final_scales,
            "iterations": config.chain.iterations,
            "burn_in": config.chain.burn_in,
            "thin": config.chain.thin,
            "seeds": {"sampler": config.chain.seed, "reconstruction": self._reconstruction_seed()},
        }

    def _reconstruction_seed(self) -> Optional[int]:
        if self.config.suite != "lincode":
            return None
        if self.config.reconstruction_seed is not None:
            return self.config.reconstruction_seed
        return spawn_seeds(self.config.chain.seed, 1)[0]

    def _histograms(self, summaries: dict) -> List[Output]:
        outputs = []
        for coordinate, groups in summaries.items():
            for group, summary in groups.items():
                outputs.append((f"hist_{coordinate}_{group}.csv", _histogram_frame(summary)))
        return outputs

    def _poisgeo_results(self, data: model_poisgeo.CountData, report: BmaReport) -> dict:
        return {
            "bf01_closed_form": float(np.exp(model_poisgeo.log_bf01(data))),
            "bf01_estimate": report.bayes_factor[0, 1],
            "bf01_ci": report.bf_ci[0, 1],
            "prob_exact": model_poisgeo.exact_model_probabilities(data, self.config.prior_weights),
        }

    def _gaussian_results(self, y: float, report: BmaReport) -> dict:
        return {
            "prob_m0": report.prob[0],
            "prob_m0_se": _standard_error(report, 0),
            "prob_m0_exact": oracle.conjugate_gaussian_case(y, self.config.prior_weights).prob_m0,
        }

    def _lincode_results(self, chain: Chain, collapsed: model_lincode.LinCodeCollapsed) -> Tuple[dict, List[Output]]:
        """
        Reconstructs (zeta, lambda, theta, delta) from the kappa chain and predicts the central tendency.

        Returns:
            Tuple[dict, list]: Reconstruction statistics for report.json and the lambda, lambda^2
                histograms plus prediction.csv.
        """

        draws = model_lincode.reconstruct(chain, collapsed, make_rng(self._reconstruction_seed()))
        x = collapsed.data.x
        x_grid = np.linspace(x.min(), x.max(), self.config.grid_points)
        prediction, warnings = model_lincode.predict_tendency(draws, collapsed, x_grid)

        zeta = np.array([d.zeta for d in draws])
        groups = {"m0": zeta == 0, "m1": zeta == 1, "bma": np.ones(zeta.size, dtype=bool)}
        outputs = []
        stats = {}
        for name, values in (("lambda", np.array([d.lam for d in draws])), ("lambda2", np.array([d.lambda2 for d in draws]))):
            edges = np.histogram_bin_edges(values, bins=self.config.bins)
            stats[name] = {}
            for group, mask in groups.items():
                if not mask.any():
                    continue
                summary = summarize_weighted(values, mask.astype(float), edges)
                stats[name][group] = summary.to_dict()
                outputs.append((f"hist_{name}_{group}.csv", _histogram_frame(summary)))

        thetas = np.array([d.theta for d in draws])
        stats["theta_mean"] = {group: thetas[mask].mean(axis=0) for group, mask in groups.items() if mask.any()}
        outputs.append((PREDICTION_FILE, prediction))

        results = {
            "reconstruction": {
                "n_draws": len(draws),
                "zeta_mean": zeta.mean(),
                **stats,
            },
            "prediction_warnings": warnings,
        }
        return results, outputs

    #=====Oracle=====

    def check(self) -> Tuple[List[oracle.Comparison], dict]:
        """
        Compares closed forms against quadrature and Monte Carlo estimates against exact values.

        Returns:
            Tuple[list, dict]: Comparisons and the oracle.json payload.
        """

        data, _ = self.load_data()
        suite = self.config.suite
        extra = {}

        if suite == "poisgeo":
            comparisons = [
                oracle.compare_marginal("m0", model_poisgeo.log_m0(data), oracle.quad_marginal_poisgeo(data, "pois").log_value),
                oracle.compare_marginal("m1", model_poisgeo.log_m1(data), oracle.quad_marginal_poisgeo(data, "geo").log_value),
            ]
            exact, _ = oracle.exact_poisgeo_probabilities(data, self.config.prior_weights)
        elif suite == "lincode":
            collapsed = self._collapsed(data)
            quadrature = oracle.quad_kappa_marginal_lincode(collapsed)
            comparisons = [oracle.compare_marginal("m0", collapsed.m0.log_evidence, quadrature.log_m0)]
            exact = quadrature.prob_m0
            extra = {"log_m0": quadrature.log_m0, "log_m1_quadrature": quadrature.log_m1,
                     "quadrature_abs_error": quadrature.abs_error}
        else:
            case = oracle.conjugate_gaussian_case(data, self.config.prior_weights)
            comparisons = [oracle.compare_marginal("m1", case.log_m1, oracle.quad_gaussian_shift_marginal(data).log_value)]
            exact = case.prob_m0

        ensemble, chain, _ = self._sample(data)
        report = build_report(chain, ensemble, self.config.bins)
        comparisons.append(oracle.compare_monte_carlo("prob_m0", exact, report.prob[0], _standard_error(report, 0)))

        payload = {
            "suite": suite,
            "comparisons": [c.to_dict() for c in comparisons],
            "passed": not oracle.failed(comparisons),
            "seeds": {"sampler": self.config.chain.seed},
            **extra,
        }
        return comparisons, payload

    #=====Simulate=====

    def simulate(self) -> List[Output]:
        """
        Simulates the dataset and returns it with truth.json.
        """

        if self.config.data_source != "simulate":
            raise ConfigError("simulate needs a \"data.simulate\" section")
        data, truth = self.load_data()
        data_file = POISGEO_DATA_FILE if self.config.suite == "poisgeo" else LINCODE_DATA_FILE
        return [(data_file, data), (TRUTH_FILE, truth)]

def _chain_diagnostics(chain: Chain) -> Tuple[pd.DataFrame, Optional[int], List[str]]:
    """
    ACF of every coordinate on the sampling scale at lags 0..min(cap, S // 10), with the
    suggested thinning interval.

    Returns:
        Tuple[pd.DataFrame, int or None, list]: acf.csv frame, suggested thinning (None when a
            coordinate is constant) and the warnings raised.
    """

    max_lag = min(MAX_SUGGESTED_THIN, chain.n_draws//10)
    frame = pd.DataFrame({"lag": np.arange(max_lag + 1)})
    warnings = []
    for j, name in enumerate(chain.coordinate_names):
        try:
            frame[name] = autocorrelation(chain, j, max_lag)
        except DegenerateChainError as e:
            frame[name] = np.nan
            warnings.append(f"no autocorrelation for {name}: {e}")
            logger.warning(warnings[-1])

    suggested_thin = None if warnings else suggest_thin(chain)
    if suggested_thin is not None and suggested_thin > 1:
        logger.info("retained draws still correlate up to lag %d; consider thinning by that factor", suggested_thin)
    return frame, suggested_thin, warnings

def _histogram_frame(summary: WeightedSummary) -> pd.DataFrame:
    return pd.DataFrame({"bin_left": summary.bin_edges[:-1], "bin_right": summary.bin_edges[1:],
                         "weight": summary.bin_weights})

def _standard_error(report: BmaReport, k: int) -> float:
    low, high = report.prob_ci[k]
    return float((high - low)/(2.0*CI_Z_VALUE))

#=====Commands=====

def _guarded(action, config: ExperimentConfig) -> int:
    try:
        return action(config)
    except ConfigError as e:
        logger.error("configuration error: %s", e)
        return EXIT_CONFIG_ERROR
    except (MixBmaError, ArithmeticError, np.linalg.LinAlgError) as e:
        logger.error("%s: %s", type(e).__name__, e)
        return EXIT_RUNTIME_ERROR

def cmd_run(config: ExperimentConfig) -> int:
    """
    Runs the experiment and writes chain.csv, report.json, the histograms and (lincode) prediction.csv.

    Returns:
        int: 0 on success, 1 on a configuration error, 2 on a runtime or numerical error.
    """

    def action(config: ExperimentConfig) -> int:
        write_outputs(config.output_dir, ExperimentRunner(config).run())
        return EXIT_OK

    return _guarded(action, config)

def cmd_oracle(config: ExperimentConfig) -> int:
    """
    Writes oracle.json.

    Returns:
        int: As cmd_run, or 3 when an agreement tolerance is breached.
    """

    def action(config: ExperimentConfig) -> int:
        comparisons, payload = ExperimentRunner(config).check()
        write_outputs(config.output_dir, [(ORACLE_FILE, payload)])
        breaches = oracle.failed(comparisons)
        for c in breaches:
            logger.error("oracle tolerance breached for %s: discrepancy %.3e > %.3e", c.quantity, c.discrepancy, c.tolerance)
        return EXIT_TOLERANCE_BREACH if breaches else EXIT_OK

    return _guarded(action, config)

def cmd_simulate(config: ExperimentConfig) -> int:
    """
    Writes the simulated dataset (counts.txt or data.csv) and truth.json.
    """

    def action(config: ExperimentConfig) -> int:
        write_outputs(config.output_dir, ExperimentRunner(config).simulate())
        return EXIT_OK

    return _guarded(action, config)

COMMAND_HANDLERS = {"run": cmd_run, "oracle": cmd_oracle, "simulate": cmd_simulate}

#=====Entry Point=====

def main(argv: Optional[Sequence[str]]=None) -> int:
    try:
        command, config_path, output_dir = parse_cli_args(argv)
    except SystemExit as e:
        #argparse exits with 0 for --help and 2 for usage errors
        return EXIT_OK if not e.code else EXIT_CONFIG_ERROR

    setup_logging()
    try:
        config = load_experiment_config(config_path).with_output_dir(output_dir)
    except ConfigError as e:
        logger.error("configuration error: %s", e)
        return EXIT_CONFIG_ERROR

    logger.info("%s: %s suite from %s", command, config.suite, config.path)
    return COMMAND_HANDLERS[command](config)

if __name__ == "__main__":
    sys.exit(main())
