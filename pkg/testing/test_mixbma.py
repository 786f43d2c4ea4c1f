"""
End-to-end tests of the run, oracle and simulate commands, plus seeded replication studies (marked slow).
"""

import os
import json
import math

import numpy as np
import pandas as pd
import pytest

import mixbma
import model_poisgeo
from core import ConfigError
from sampler import ChainConfig
from analysis import build_report
from model_poisgeo import CountData, log_bf01, run_poisgeo, simulate
from model_lincode import LinCodeCollapsed, run_kappa_imh, simulate_lincode
from oracle import conjugate_gaussian_case, exact_poisgeo_probabilities, quad_kappa_marginal_lincode, run_gaussian_check
from util_helpers import load_experiment_config, write_frame, write_json
from config import LINCODE_ITERATIONS, LINCODE_THIN, POISGEO_ITERATIONS, POISGEO_THIN

TEST_DATA = os.path.join(os.path.dirname(os.path.abspath(__file__)), "test_data")

REPORT_FIELDS = {"model_names", "prior_weights", "n_draws", "prob", "prob_ci", "bayes_factor", "bf_ci", "ess",
                 "ess_lower_bound", "variance_bound", "summaries", "warnings", "suite", "acceptance_rate",
                 "final_scales", "iterations", "burn_in", "thin", "seeds", "suggested_thin", "runtime_seconds"}

def config_path(name: str) -> str:
    return os.path.join(TEST_DATA, name)

def run_command(command: str, config: str, output_dir) -> int:
    return mixbma.main([command, config, "--output-dir", str(output_dir)])

def read_report(output_dir, name="report.json") -> dict:
    with open(os.path.join(output_dir, name)) as report_file:
        return json.load(report_file)

def without_runtime(report: dict) -> dict:
    return {key: value for key, value in report.items() if key != "runtime_seconds"}

def standard_error(report) -> float:
    return (report.prob_ci[0, 1] - report.prob_ci[0, 0])/(2*1.96)

class TestRun:
    """`run` writes the chain, the report and the histograms."""

    def test_poisgeo_from_file(self, tmp_path):
        assert run_command("run", config_path("poisgeo_file.json"), tmp_path) == mixbma.EXIT_OK
        report = read_report(tmp_path)
        assert set(report) == REPORT_FIELDS | {"bf01_closed_form", "bf01_estimate", "bf01_ci", "prob_exact"}
        assert report["model_names"] == ["poisson", "geometric"]
        assert sum(report["prob"]) == pytest.approx(1.0, rel=1e-12)

        data = CountData.from_file(config_path("counts.txt"))
        assert report["bf01_closed_form"] == pytest.approx(math.exp(log_bf01(data)), rel=1e-12)
        assert report["bf01_estimate"] == pytest.approx(report["bf01_closed_form"], rel=0.25)
        assert 0.2 <= report["acceptance_rate"] <= 0.8

        chain = pd.read_csv(tmp_path/"chain.csv")
        assert list(chain.columns) == ["iter", "lambda", "loglik_poisson", "loglik_geometric", "w_poisson", "w_geometric"]
        assert len(chain) == report["n_draws"] == 900
        for group in ("bma", "poisson", "geometric"):
            histogram = pd.read_csv(tmp_path/f"hist_lambda_{group}.csv")
            assert list(histogram.columns) == ["bin_left", "bin_right", "weight"]
            assert histogram["weight"].sum() == pytest.approx(1.0, rel=1e-12)

        acf = pd.read_csv(tmp_path/"acf.csv")
        assert list(acf.columns) == ["lag", "lambda"]
        np.testing.assert_array_equal(acf["lag"], np.arange(91))
        assert acf["lambda"].iloc[0] == 1.0
        assert 1 <= report["suggested_thin"] <= 90

    def test_chain_is_reproducible(self, tmp_path):
        assert run_command("run", config_path("poisgeo_file.json"), tmp_path/"first") == 0
        assert run_command("run", config_path("poisgeo_file.json"), tmp_path/"second") == 0
        assert (tmp_path/"first"/"chain.csv").read_bytes() == (tmp_path/"second"/"chain.csv").read_bytes()

    def test_lincode_simulated(self, tmp_path):
        assert run_command("run", config_path("lincode_simulate.json"), tmp_path) == 0
        report = read_report(tmp_path)
        assert set(report) == REPORT_FIELDS | {"reconstruction", "prediction_warnings"}
        assert report["prob"][0] < 0.5
        assert report["reconstruction"]["n_draws"] == report["n_draws"]
        assert report["seeds"]["reconstruction"] is not None

        prediction = pd.read_csv(tmp_path/"prediction.csv")
        assert list(prediction.columns) == ["x", "group", "mean", "q025", "q975"]
        assert set(prediction["group"]) <= {"m0", "m1", "bma"}
        assert (prediction["group"] == "bma").sum() == 21
        assert (tmp_path/"hist_kappa_bma.csv").exists()
        assert (tmp_path/"hist_lambda_bma.csv").exists()
        assert (tmp_path/"hist_lambda2_bma.csv").exists()

    def test_gaussian_check(self, tmp_path):
        assert run_command("run", config_path("gaussian_check.json"), tmp_path) == 0
        report = read_report(tmp_path)
        assert report["prob_m0_exact"] == pytest.approx(0.58579, abs=1e-5)
        assert abs(report["prob_m0"] - report["prob_m0_exact"]) < 3*report["prob_m0_se"]

class TestErrors:
    """Configuration errors exit with 1, numerical failures with 2, and neither leaves outputs behind."""

    def test_missing_data_file(self, tmp_path):
        output_dir = tmp_path/"out"
        assert run_command("run", config_path("missing_data_file.json"), output_dir) == mixbma.EXIT_CONFIG_ERROR
        assert not output_dir.exists()

    def test_missing_seed(self, tmp_path):
        with pytest.raises(ConfigError, match="seed"):
            load_experiment_config(config_path("missing_seed.json"))
        assert run_command("run", config_path("missing_seed.json"), tmp_path/"out") == 1
        assert not (tmp_path/"out").exists()

    def test_missing_config(self, tmp_path):
        assert run_command("run", str(tmp_path/"absent.json"), tmp_path/"out") == 1

    def test_unknown_key(self, tmp_path):
        path = tmp_path/"config.json"
        path.write_text(json.dumps({"suite": "gaussian_check", "data": {"value": 1.0}, "sampler": {"seed": 0},
                                    "colour": "blue"}))
        with pytest.raises(ConfigError, match="colour"):
            load_experiment_config(str(path))

    def test_two_data_sources(self, tmp_path):
        path = tmp_path/"config.json"
        path.write_text(json.dumps({"suite": "poisgeo", "data": {"value": 1.0, "simulate": {"seed": 1}},
                                    "sampler": {"seed": 0}}))
        with pytest.raises(ConfigError):
            load_experiment_config(str(path))

    def test_usage_errors(self):
        assert mixbma.main(["bogus", "config.json"]) == mixbma.EXIT_CONFIG_ERROR
        assert mixbma.main(["run"]) == mixbma.EXIT_CONFIG_ERROR

    def test_improper_posterior(self, tmp_path):
        assert run_command("run", config_path("poisgeo_zero.json"), tmp_path/"out") == mixbma.EXIT_RUNTIME_ERROR
        assert not (tmp_path/"out").exists()

    def test_simulate_needs_simulation(self, tmp_path):
        assert run_command("simulate", config_path("poisgeo_file.json"), tmp_path/"out") == 1

class TestOracle:
    def test_poisgeo_pair(self, tmp_path):
        assert run_command("oracle", config_path("poisgeo_pair.json"), tmp_path) == mixbma.EXIT_OK
        payload = read_report(tmp_path, "oracle.json")
        assert payload["passed"] is True
        rows = {row["quantity"]: row for row in payload["comparisons"]}
        assert rows["m0"]["reference"] == pytest.approx(0.125, rel=1e-12)
        assert rows["m0"]["estimate"] == pytest.approx(0.125, rel=1e-8)
        assert rows["m0"]["discrepancy"] < 1e-8
        assert rows["m1"]["reference"] == pytest.approx(1/12, rel=1e-12)
        assert rows["prob_m0"]["reference"] == pytest.approx(0.6, rel=1e-12)

    def test_tolerance_breach(self, tmp_path, monkeypatch):
        closed_form = model_poisgeo.log_m0
        monkeypatch.setattr(model_poisgeo, "log_m0", lambda data: closed_form(data) + 0.01)
        assert run_command("oracle", config_path("poisgeo_pair.json"), tmp_path) == mixbma.EXIT_TOLERANCE_BREACH
        payload = read_report(tmp_path, "oracle.json")
        assert payload["passed"] is False
        assert [row["quantity"] for row in payload["comparisons"] if not row["holds"]] == ["m0"]

    def test_lincode(self, tmp_path):
        code = run_command("oracle", config_path("lincode_simulate.json"), tmp_path)
        payload = read_report(tmp_path, "oracle.json")
        rows = {row["quantity"]: row for row in payload["comparisons"]}
        assert rows["m0"]["holds"]
        assert {"log_m0", "log_m1_quadrature", "quadrature_abs_error"} <= set(payload)
        assert code == (mixbma.EXIT_OK if payload["passed"] else mixbma.EXIT_TOLERANCE_BREACH)

    def test_gaussian(self, tmp_path):
        run_command("oracle", config_path("gaussian_check.json"), tmp_path)
        rows = {row["quantity"]: row for row in read_report(tmp_path, "oracle.json")["comparisons"]}
        assert rows["m1"]["holds"]
        assert rows["prob_m0"]["reference"] == pytest.approx(0.58579, abs=1e-5)

class TestSimulate:
    """Simulated datasets are reproducible and feed `run` exactly like inline simulation."""

    def test_poisgeo_files(self, tmp_path):
        assert run_command("simulate", config_path("poisgeo_simulate.json"), tmp_path) == 0
        lines = (tmp_path/"counts.txt").read_text().splitlines()
        assert len(lines) == 10 and all(line.isdigit() for line in lines)
        truth = read_report(tmp_path, "truth.json")
        assert truth["seed"] == 7 and truth["lambda"] == 1.0

    def test_reproducible(self, tmp_path):
        run_command("simulate", config_path("lincode_simulate.json"), tmp_path/"first")
        run_command("simulate", config_path("lincode_simulate.json"), tmp_path/"second")
        assert (tmp_path/"first"/"data.csv").read_bytes() == (tmp_path/"second"/"data.csv").read_bytes()
        assert (tmp_path/"first"/"data.csv").read_text().startswith("x,y\n")

    @pytest.mark.parametrize("name, data_file", [("poisgeo_simulate.json", "counts.txt"),
                                                 ("lincode_simulate.json", "data.csv")])
    def test_round_trip(self, tmp_path, name, data_file):
        assert run_command("simulate", config_path(name), tmp_path/"sim") == 0
        assert run_command("run", config_path(name), tmp_path/"inline") == 0

        with open(config_path(name)) as config_file:
            raw = json.load(config_file)
        raw["data"] = {"file": os.path.join("sim", data_file)}
        (tmp_path/"from_file.json").write_text(json.dumps(raw))
        assert run_command("run", str(tmp_path/"from_file.json"), tmp_path/"from_file") == 0

        assert without_runtime(read_report(tmp_path/"from_file")) == without_runtime(read_report(tmp_path/"inline"))
        assert (tmp_path/"from_file"/"chain.csv").read_bytes() == (tmp_path/"inline"/"chain.csv").read_bytes()

    def test_output_dir_override(self, tmp_path):
        config = load_experiment_config(config_path("poisgeo_simulate.json"))
        assert config.output_dir == os.path.join(TEST_DATA, "output", "poisgeo_simulate")
        assert config.with_output_dir(str(tmp_path)).output_dir == str(tmp_path)

class TestOutputFormats:
    """JSON and CSV floats parse back to the identical doubles."""

    VALUES = [0.1 + 0.2, 1/3, math.pi*1e-300, 2.0**-1074, np.float64(np.nextafter(1.0, 2.0)), -1.2345678901234567e17]

    def test_json_floats_are_lossless(self, tmp_path):
        write_json(str(tmp_path/"values.json"), {"values": self.VALUES, "array": np.array(self.VALUES),
                                                 "missing": [math.inf, math.nan]})
        loaded = read_report(tmp_path, "values.json")
        assert loaded["values"] == [float(value) for value in self.VALUES]
        assert loaded["array"] == [float(value) for value in self.VALUES]
        assert loaded["missing"] == [None, None]

    def test_csv_floats_are_lossless(self, tmp_path):
        write_frame(str(tmp_path/"values.csv"), pd.DataFrame({"value": self.VALUES}))
        loaded = pd.read_csv(tmp_path/"values.csv", float_precision="round_trip")
        np.testing.assert_array_equal(loaded["value"].to_numpy(), np.array(self.VALUES, dtype=float))

@pytest.mark.slow
class TestReplication:
    """Seeded replication studies of the Bayes-factor, lambda and model-probability estimates."""

    @pytest.fixture(scope="class")
    def poisgeo_reports(self):
        reports = []
        for r in range(20):
            data = simulate(10, 1.0, 1_000 + r)
            ensemble, chain = run_poisgeo(data, ChainConfig(iterations=POISGEO_ITERATIONS, seed=r, thin=POISGEO_THIN))
            reports.append((data, chain, build_report(chain, ensemble)))
        return reports

    def test_bayes_factor_coverage(self, poisgeo_reports):
        covered = 0
        for data, _, report in poisgeo_reports:
            low, high = report.bf_ci[0, 1]
            covered += low <= math.exp(log_bf01(data)) <= high
        assert covered >= 18

    def test_lambda_recovery(self, poisgeo_reports):
        covered = sum(report.summaries["lambda"]["bma"].quantiles[0.025] <= 1.0 <= report.summaries["lambda"]["bma"].quantiles[0.975]
                      for _, _, report in poisgeo_reports)
        assert covered >= 17

    def test_acceptance_and_ess_bound(self, poisgeo_reports):
        for _, chain, report in poisgeo_reports:
            assert 0.2 <= chain.acceptance_rate <= 0.8
            assert np.all(report.ess >= report.ess_lower_bound*(1 - 1e-9))

    def test_posterior_probability_oracle(self):
        for seed, counts in enumerate(([2, 1], [0, 2, 1, 1, 0, 3, 1, 0, 2, 1], [5, 3, 8], [1, 0, 0, 2], [9, 12, 7, 10])):
            data = CountData(counts)
            ensemble, chain = run_poisgeo(data, ChainConfig(iterations=POISGEO_ITERATIONS, seed=seed, thin=POISGEO_THIN))
            report = build_report(chain, ensemble)
            exact, _ = exact_poisgeo_probabilities(data)
            assert abs(report.prob[0] - exact) < 3*standard_error(report)

        for y in (0.0, 1.0, 2.0):
            ensemble, chain = run_gaussian_check(y, ChainConfig(iterations=100_000, seed=int(y), thin=20))
            report = build_report(chain, ensemble)
            assert abs(report.prob[0] - conjugate_gaussian_case(y).prob_m0) < 3*standard_error(report)

    def test_lincode_regimes(self):
        favours_m1, favours_m0, matches = 0, 0, 0
        for r in range(50):
            data, _ = simulate_lincode(seed=r)
            collapsed = LinCodeCollapsed(data)
            chain = run_kappa_imh(collapsed, ChainConfig(iterations=LINCODE_ITERATIONS, seed=r, thin=LINCODE_THIN))
            report = build_report(chain, collapsed.ensemble())
            favours_m1 += report.prob[0] < 0.5
            matches += abs(report.prob[0] - quad_kappa_marginal_lincode(collapsed).prob_m0) < 3*standard_error(report) + 1e-12

            null_data, _ = simulate_lincode(k=0.0, seed=r)
            null_collapsed = LinCodeCollapsed(null_data)
            null_chain = run_kappa_imh(null_collapsed, ChainConfig(iterations=LINCODE_ITERATIONS, seed=r, thin=LINCODE_THIN))
            favours_m0 += build_report(null_chain, null_collapsed.ensemble()).prob[0] > 0.5

        assert favours_m1 >= 45
        assert favours_m0 >= 45
        assert matches >= 47
