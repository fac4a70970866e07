"""Longer statistical runs; excluded by default, run with `pytest -m slow`"""
import dataclasses
import json

import numpy as np
import pytest

from estimators.em_engine import em_fit, multi_start
from estimators.inference import match_classes, posterior_accuracy, standard_errors
from main_app import EXIT_OK, run
from tools.choice_model import ChoiceParams, choice_mstep
from tools.data_model import ModelSpec
from tools.parameters import initialize_parameters
from tools.synthgen import GeneratorConfig, default_generating_parameters, generate
from utils.file_utils import load_json

pytestmark = pytest.mark.slow


@pytest.mark.parametrize("seed", range(5))
def test_objective_is_monotone_across_datasets(seed):
    spec = ModelSpec(k=2, z=2, h=4, use_omega=True, em_iterations=10, gradient_steps=10, seed=seed)
    config = GeneratorConfig(n_individuals=200, n_tasks=3, n_indicators=4)
    dataset, _ = generate(spec, default_generating_parameters(spec, config, seed), config, seed + 100)
    _, _, trace = em_fit(dataset, spec)
    totals = np.array([r.total_objective for r in trace.records])
    assert np.all(np.diff(totals) >= -1e-8 * np.abs(totals[1:]))


def test_well_separated_two_class_model_is_recovered():
    spec = ModelSpec(k=2, z=2, h=8, use_omega=True, em_iterations=60, restarts=3, seed=1)
    config = GeneratorConfig(n_individuals=1000, n_tasks=3, n_alternatives=3)
    truth_params = default_generating_parameters(spec, config, seed=2)
    dataset, truth = generate(spec, truth_params, config, seed=3)

    result = multi_start(dataset, spec)
    mapping = match_classes(result.posteriors, truth.classes)
    assert posterior_accuracy(result.posteriors, truth.classes) >= 0.85
    np.testing.assert_allclose(result.posteriors.class_shares[mapping], truth.class_shares, atol=0.05)

    table = standard_errors(dataset, result.params, spec, "choice")
    se = table.frame["std_error"].to_numpy().reshape(spec.k, -1)
    within = [np.abs(result.params.choice.beta[mapping[k]] - truth_params.choice.beta[k]) <= 3.0 * se[mapping[k]]
              for k in range(spec.k)]
    assert np.mean(np.concatenate(within)) >= 0.9


def test_p_values_are_calibrated_under_the_null():
    spec = ModelSpec(k=1, z=0, use_omega=False)
    config = GeneratorConfig(n_individuals=300, n_tasks=2, n_alternatives=3, alternative_constants=False,
                             n_generic_attributes=1, n_indicators=0)
    true_beta = np.array([[0.8]])
    rejections = 0
    replications = 200
    for rep in range(replications):
        params = default_generating_parameters(spec, config, seed=rep)
        params.choice.beta = true_beta.copy()
        dataset, _ = generate(spec, params, config, seed=1000 + rep)
        fitted = initialize_parameters(dataset, spec, np.random.default_rng(rep))
        fitted.choice, _ = choice_mstep(dataset, np.ones((dataset.n_individuals, 1)), ChoiceParams(np.zeros((1, 1))))
        row = standard_errors(dataset, fitted, spec, "choice").frame.iloc[0]
        z = (row["estimate"] - true_beta[0, 0]) / row["std_error"]
        rejections += abs(z) > 1.959964
    assert 0.01 <= rejections / replications <= 0.10


def test_full_scale_run(tmp_path):
    config = {
        "model": {"k": 3, "z": 2, "h": 8, "use_omega": True, "em_iterations": 30, "restarts": 5, "seed": 0},
        "data": {"test_fraction": 0.2, "split_seed": 0},
        "paths": {"output_dir": str(tmp_path / "out")},
        "simulate": {"seed": 1, "n_individuals": 542, "n_tasks": 3, "n_alternatives": 5,
                     "n_indicators": 17, "indicator_levels": 5},
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    assert run(["simulate", "--config", str(path)]) == EXIT_OK
    assert run(["fit", "--config", str(path), "--workers", "2"]) == EXIT_OK
    assert run(["fit-baseline", "--config", str(path), "--workers", "2"]) == EXIT_OK
    summary = load_json(tmp_path / "out" / "fit" / "fit_report.json")["summary"]
    assert (summary["n_train"], summary["n_test"]) == (433, 109)
    assert summary["iterations"] == 30
    assert len(summary["class_shares"]) == 3
    assert np.isfinite(summary["test_ll"])
    manifest = load_json(tmp_path / "out" / "fit" / "manifest.json")
    assert len(manifest["timings"]["restart_wall_times"]) == 5


def test_degenerate_model_matches_baseline_at_scale():
    spec = ModelSpec(k=3, z=1, h=4, use_omega=True, em_iterations=5, seed=2)
    config = GeneratorConfig(n_individuals=300, n_indicators=3)
    dataset, _ = generate(spec, default_generating_parameters(spec, config), config, seed=5)
    plain = dataclasses.replace(spec, z=0, use_omega=False)
    a = multi_start(dataset, plain, seeds=[2, 3])
    b = multi_start(dataset.without_indicators(), plain, seeds=[2, 3])
    np.testing.assert_array_equal(a.params.choice.beta, b.params.choice.beta)
