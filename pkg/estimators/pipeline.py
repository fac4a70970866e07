"""
Coordinates the command-line runs: loads data per the run config, drives the
estimators, writes tables, parameters, reports and the run manifest.
"""
import logging
import platform
import time
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from estimators.baseline_lccm import (baseline_spec, information_criteria, market_share_null_ll, market_shares,
                                      null_ll, uniform_null_ll)
from estimators.em_engine import MultiStartResult, multi_start
from estimators.inference import (BLOCKS, HoldoutMetrics, choice_hit_rate, class_profiles, evaluate_holdout,
                                  export_latent_space, posterior_accuracy, standard_errors)
from estimators.self_check import CheckResult, run_self_checks
from tools.data_model import (Dataset, ModelSpec, apply_standardization, load_dataset, save_dataset,
                              split_train_test, standardize_socio)
from tools.measurement_model import indicator_accuracy
from tools.parameters import count_free_parameters, load_parameters, save_parameters
from tools.report_generator import (FitReport, comparison_table, load_fit_report, render_comparison,
                                    save_fit_report)
from tools.synthgen import (TRUTH_FILENAME, GeneratorConfig, default_generating_parameters, generate,
                            load_truth, save_truth)
from utils.config import get_output_dir
from utils.errors import ConfigError, LcnetError
from utils.file_utils import describe_outputs, ensure_directory, load_json, save_json

logger = logging.getLogger(__name__)

INDIVIDUALS_FILE = "individuals.csv"
TASKS_FILE = "tasks.csv"
PARAMETERS_FILE = "parameters.json"
RUN_CONFIG_FILE = "run_config.json"
MANIFEST_FILE = "manifest.json"
VERSIONED_PACKAGES = ("numpy", "scipy", "pandas", "python-dotenv", "python-docx", "reportlab")


def package_versions() -> Dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in VERSIONED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "not installed"
    return versions


class EstimationPipeline:
    """One command run: owns the resolved config, its output directory and the files written"""

    def __init__(self, config: Dict[str, Any], command: str, workers: int = 1):
        self.config = config
        self.command = command
        self.workers = max(1, int(workers))
        self.output_dir = get_output_dir(config, command)
        self.outputs: List[Path] = []
        self.timings: Dict[str, float] = {}
        self._started = time.perf_counter()

    # ------------------------------------------------------------ bookkeeping

    def _track(self, *paths: Path) -> None:
        self.outputs.extend(Path(p) for p in paths)

    def _write_csv(self, frame: pd.DataFrame, name: str, index: bool = False) -> Path:
        path = self.output_dir / name
        ensure_directory(path.parent)
        frame.to_csv(path, index=index)
        self._track(path)
        return path

    def _timed(self, label: str, started: float) -> None:
        self.timings[label] = round(time.perf_counter() - started, 3)

    def write_manifest(self, status: str = "ok", error: Optional[str] = None) -> Path:
        """Config, seed, versions, timings and every output file with its digest"""
        self.timings["total"] = round(time.perf_counter() - self._started, 3)
        manifest = {
            "command": self.command,
            "status": status,
            "config": self.config,
            "seed": self.config.get("model", {}).get("seed", 0),
            "workers": self.workers,
            "versions": package_versions(),
            "timings": self.timings,
            "outputs": describe_outputs([p for p in self.outputs if p.exists()]),
        }
        if error:
            manifest["error"] = error
        path = self.output_dir / MANIFEST_FILE
        save_json(manifest, path)
        return path

    # ------------------------------------------------------------ data

    def model_spec(self) -> ModelSpec:
        return ModelSpec.from_dict(self.config.get("model", {}))

    def data_paths(self) -> Tuple[Path, Path, Optional[Path]]:
        """Configured data files, falling back to this config's `simulate` output"""
        paths = self.config["paths"]
        simulated = get_output_dir(self.config, "simulate")
        individuals = paths.get("individuals") or simulated / INDIVIDUALS_FILE
        tasks = paths.get("tasks") or simulated / TASKS_FILE
        truth = paths.get("truth")
        if truth is None and not paths.get("individuals") and (simulated / TRUTH_FILENAME).exists():
            truth = simulated / TRUTH_FILENAME
        if not Path(individuals).exists() or not Path(tasks).exists():
            raise ConfigError(f"data files not found ({individuals}, {tasks}); set paths.individuals and "
                              f"paths.tasks or run `simulate` first")
        return Path(individuals), Path(tasks), Path(truth) if truth else None

    def load_split(self) -> Tuple[Dataset, Dataset, Optional[Dataset]]:
        """(full, train, test) with optional train-moment standardization; test is None at test_fraction 0"""
        data = self.config["data"]
        individuals, tasks, _ = self.data_paths()
        full = load_dataset(individuals, tasks, data.get("indicator_levels"), data.get("schema", "csv"))
        train, test = split_train_test(full, data["test_fraction"], data["split_seed"])
        if data.get("standardize"):
            train, test, moments = standardize_socio(train, test)
            full = apply_standardization(full, moments)
            logger.info("Standardized socio columns %s with train moments", moments["columns"])
        return full, train, test

    # ------------------------------------------------------------ commands

    def simulate(self) -> Dict[str, Any]:
        settings = dict(self.config.get("simulate", {}))
        seed = int(settings.pop("seed", self.config.get("model", {}).get("seed", 0)))
        generator_model = {**self.config.get("model", {}), **settings.pop("model", {})}
        spec = ModelSpec.from_dict(generator_model)
        generator = GeneratorConfig.from_dict(settings)
        started = time.perf_counter()
        params = default_generating_parameters(spec, generator, seed)
        dataset, truth = generate(spec, params, generator, seed)
        self._timed("generate", started)
        self._track(*save_dataset(dataset, self.output_dir / INDIVIDUALS_FILE, self.output_dir / TASKS_FILE))
        self._track(save_truth(truth, self.output_dir / TRUTH_FILENAME))
        self._track(save_parameters(params, self.output_dir / "generating_parameters.json"))
        return {"individuals": dataset.n_individuals, "observations": dataset.n_observations,
                "class_shares": truth.class_shares.tolist()}

    def fit(self, baseline: bool = False) -> FitReport:
        spec = self.model_spec()
        label = "lccm"
        if baseline:
            if spec.k < 2:
                raise ConfigError("the baseline latent class model needs k >= 2")
            spec = baseline_spec(spec)
        elif not spec.is_baseline:
            label = "lccm-net"
        full, train, test = self.load_split()
        started = time.perf_counter()
        result = multi_start(train, spec, test=test, workers=self.workers)
        self._timed("estimation", started)
        self.timings["restart_wall_times"] = [
            round(sum(r.wall_time for r in trace.records), 3) for trace in result.traces]

        save_json(self.config, self.output_dir / RUN_CONFIG_FILE)
        self._track(self.output_dir / RUN_CONFIG_FILE)
        self._track(save_parameters(result.params, self.output_dir / PARAMETERS_FILE))
        report = self._build_report(label, spec, full, train, test, result)
        self._track(*save_fit_report(report, self.output_dir, self.config["report"]["formats"]))
        return report

    def _build_report(self, label: str, spec: ModelSpec, full: Dataset, train: Dataset, test: Optional[Dataset],
                      result: MultiStartResult) -> FitReport:
        params, posteriors = result.params, result.posteriors
        shares = market_shares(train)
        train_null = null_ll(train, spec.null_model, shares)
        n_params = count_free_parameters(params, spec)
        criteria = information_criteria(result.trace.final_ll, n_params, train.n_observations, train_null)
        holdout = evaluate_holdout(test, params, spec, spec.null_model, shares) if test is not None else None
        summary: Dict[str, Any] = {
            "model": label,
            "k": spec.k,
            "z": spec.z,
            "use_omega": spec.use_omega,
            "n_params": n_params,
            "n_train": train.n_individuals,
            "n_test": test.n_individuals if test is not None else 0,
            "train_ll": result.trace.final_ll,
            "train_null_ll": train_null,
            "train_null_ll_uniform": uniform_null_ll(train),
            "train_null_ll_market_share": market_share_null_ll(train, shares),
            "test_ll": holdout.test_ll if holdout else None,
            "test_null_ll": holdout.test_null_ll if holdout else None,
            "aic": criteria.aic,
            "bic": criteria.bic,
            "rho_squared": criteria.rho_squared,
            "ll_variance": result.ll_variance,
            "test_ll_variance": result.test_ll_variance,
            "best_restart": result.best_restart,
            "iterations": len(result.trace.records),
            "train_hit_rate": choice_hit_rate(train, params, spec),
            "test_hit_rate": holdout.hit_rate if holdout else None,
            "full_hit_rate": choice_hit_rate(full, params, spec),
            "test_omega_fallbacks": holdout.omega_fallbacks if holdout else 0,
            "full_sample": test is None,
            "class_shares": posteriors.class_shares.tolist(),
        }
        if spec.uses_indicators and train.n_indicators:
            summary["indicator_accuracy_train"] = indicator_accuracy(
                train, params.latent, params.omega, params.measurement, spec.network_columns)
            summary["indicator_accuracy_full"] = indicator_accuracy(
                full, params.latent, params.omega, params.measurement, spec.network_columns)

        notes = [
            "Standard errors are conditional: each block's Hessian holds the other blocks at their estimates.",
        ]
        if holdout is None:
            notes.append("Estimated on the full sample; no holdout metrics.")
        else:
            notes.append(f"Test individuals use the '{spec.omega_fallback}' omega fallback.")
        _, _, truth_path = self.data_paths()
        if truth_path is not None and truth_path.exists():
            truth = load_truth(truth_path).subset_for(train.ids)
            summary["posterior_accuracy"] = posterior_accuracy(posteriors, truth.classes)
            summary["true_class_shares"] = truth.class_shares.tolist()

        tables: Dict[str, pd.DataFrame] = {"restarts": result.summary_frame()}
        started = time.perf_counter()
        for block in BLOCKS:
            if block == "measurement" and not spec.uses_indicators:
                continue
            try:
                se = standard_errors(train, params, spec, block)
            except LcnetError as exc:
                logger.warning("standard errors for %s skipped: %s", block, exc)
                notes.append(f"{block} standard errors unavailable: {exc}")
                continue
            tables[block] = se.frame
            if se.pseudo_inverse:
                notes.append(f"{block} Hessian not invertible (condition number {se.condition_number:.3g}); "
                             f"pseudo-inverse used")
            self._write_csv(se.frame, f"std_errors_{block}.csv")
        self._timed("standard_errors", started)

        columns = self.config["data"].get("categorical_columns")
        profiles = class_profiles(train, posteriors, columns)
        if profiles.attrs.get("degenerate"):
            notes.append(f"degenerate classes (no posterior mass): {profiles.attrs['degenerate']}")
        tables["profiles"] = profiles
        self._write_csv(profiles, "class_profiles.csv", index=True)

        traces = pd.concat([trace.to_frame() for trace in result.traces], ignore_index=True)
        self._write_csv(traces, "traces.csv")
        self._write_csv(result.summary_frame(), "restarts.csv")
        posterior_frame = pd.DataFrame(posteriors.gamma, columns=[f"class{k + 1}" for k in range(spec.k)])
        posterior_frame.insert(0, "id", posteriors.ids)
        self._write_csv(posterior_frame, "posteriors.csv")
        self._write_csv(export_latent_space(train, params, spec), "latent_space.csv")
        return FitReport(label, spec.to_dict(), summary, tables, notes)

    def evaluate(self, fit_dir: Path) -> HoldoutMetrics:
        """Holdout metrics of a saved fit on the test split its run config defines"""
        fit_dir = Path(fit_dir)
        params = load_parameters(fit_dir / PARAMETERS_FILE)
        spec = ModelSpec.from_dict(load_fit_report(fit_dir).spec)
        params.validate(spec)
        saved = load_json(fit_dir / RUN_CONFIG_FILE)
        if saved:
            # the split must match the one the parameters were trained on
            self.config["data"] = saved.get("data", self.config["data"])
            for key in ("individuals", "tasks", "truth"):
                if not self.config["paths"].get(key):
                    self.config["paths"][key] = saved.get("paths", {}).get(key)
        _, train, test = self.load_split()
        if test is None:
            raise ConfigError(f"{fit_dir} was estimated on the full sample (test_fraction 0); there is no holdout")
        metrics = evaluate_holdout(test, params, spec, spec.null_model, market_shares(train))
        path = self.output_dir / "holdout_metrics.json"
        save_json(metrics.as_dict(), path)
        self._track(path)
        self._write_csv(pd.DataFrame([metrics.as_dict()]), "holdout_metrics.csv")
        return metrics

    def report(self, fit_dirs: Sequence[Path], labels: Optional[Sequence[str]] = None) -> pd.DataFrame:
        if not fit_dirs:
            raise ConfigError("report needs at least one fit directory")
        if labels and len(labels) != len(fit_dirs):
            raise ConfigError("give one label per fit directory")
        reports = [load_fit_report(d) for d in fit_dirs]
        table = comparison_table(reports, labels)
        self._write_csv(table, "comparison.csv")
        path = self.output_dir / "comparison.txt"
        ensure_directory(path.parent)
        path.write_text(render_comparison(table), encoding="utf-8")
        self._track(path)
        return table

    def check(self, seed: int = 0) -> List[CheckResult]:
        results = run_self_checks(seed)
        frame = pd.DataFrame([{"check": r.name, "error": r.error, "tolerance": r.tolerance,
                               "passed": r.passed} for r in results])
        self._write_csv(frame, "check_results.csv")
        return results

