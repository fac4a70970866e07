import numpy as np
import pytest
from scipy import stats

from tools.data_model import ModelSpec
from tools.numerics import ordinal_probs
from tools.synthgen import (GeneratorConfig, default_generating_parameters, draw_categorical, generate,
                            load_truth, save_truth)
from utils.errors import ConfigError, LoadError, NumericDomainError

PLAIN = ModelSpec(k=2, z=0, use_omega=False)


def _plain_config(**overrides):
    values = dict(n_individuals=5000, n_tasks=1, n_alternatives=3, n_generic_attributes=1, n_indicators=0)
    values.update(overrides)
    return GeneratorConfig(**values)


def test_same_seed_same_dataset(small_spec, small_config):
    params = default_generating_parameters(small_spec, small_config, seed=1)
    a, truth_a = generate(small_spec, params, small_config, seed=5)
    b, truth_b = generate(small_spec, params, small_config, seed=5)
    c, _ = generate(small_spec, params, small_config, seed=6)
    assert a.equals(b)
    np.testing.assert_array_equal(truth_a.classes, truth_b.classes)
    assert not a.equals(c)


def test_generated_dataset_matches_the_design(small_data, small_config):
    dataset, truth, _ = small_data
    assert dataset.n_individuals == small_config.n_individuals
    assert dataset.n_observations == small_config.n_individuals * small_config.n_tasks
    assert dataset.n_alternatives == small_config.n_alternatives
    assert dataset.attribute_names == ["asc_1", "asc_2", "x1", "x2"]
    assert dataset.indicator_texts == ["q1", "q2", "q3"]
    assert dataset.arrays.has_indicators.all()
    assert truth.R.shape == (small_config.n_individuals, 1)
    np.testing.assert_array_equal(truth.ids, dataset.ids)
    np.testing.assert_array_equal(dataset.ids, np.arange(small_config.n_individuals))


def test_dominant_alternative_is_almost_always_chosen():
    config = _plain_config(n_individuals=2000, n_tasks=2)
    params = default_generating_parameters(PLAIN, config)
    params.choice.beta[:] = 0.0
    params.choice.beta[:, 0] = 20.0
    dataset, _ = generate(PLAIN, params, config, seed=0)
    share = np.mean(dataset.arrays.task_chosen == 0)
    assert share > 0.9999


def test_class_frequencies_follow_membership_probabilities():
    config = _plain_config()
    params = default_generating_parameters(PLAIN, config)
    params.membership.gamma[:] = 0.0
    params.membership.asc[0] = np.log(3.0)
    _, truth = generate(PLAIN, params, config, seed=3)
    assert truth.class_shares[0] == pytest.approx(0.75, abs=0.03)


def test_indicator_levels_follow_the_ordered_logit():
    config = _plain_config(n_indicators=1, indicator_levels=4)
    params = default_generating_parameters(PLAIN, config)
    dataset, _ = generate(PLAIN, params, config, seed=4)
    observed = np.bincount(dataset.arrays.indicators[:, 0], minlength=5)[1:]
    expected = ordinal_probs(0.0, params.measurement.tau[0]) * config.n_individuals
    assert stats.chisquare(observed, expected).pvalue > 1e-3


def test_outside_option_has_zero_attributes():
    config = _plain_config(n_individuals=20, outside_option=True)
    dataset, _ = generate(PLAIN, default_generating_parameters(PLAIN, config), config, seed=0)
    np.testing.assert_array_equal(dataset.arrays.task_X[:, -1, :], 0.0)


def test_invalid_generating_parameters_are_config_errors(small_spec, small_config):
    params = default_generating_parameters(small_spec, small_config)
    params.choice.beta = np.zeros((3, 4))
    with pytest.raises(ConfigError):
        generate(small_spec, params, small_config, seed=0)
    params = default_generating_parameters(small_spec, small_config)
    params.membership.asc[-1] = 1.0
    with pytest.raises(ConfigError):
        generate(small_spec, params, small_config, seed=0)


@pytest.mark.parametrize("values", [
    {"n_alternatives": 1},
    {"indicator_levels": 1},
    {"sigma_omega": -1.0},
    {"socio": [{"name": "x", "kind": "categorical", "values": [0, 1], "probs": [0.5, 0.6]}]},
    {"socio": [{"name": "x", "kind": "lognormal"}]},
    {"n_people": 10},
])
def test_generator_config_validation(values):
    with pytest.raises(ConfigError):
        GeneratorConfig.from_dict(values)


def test_draw_categorical_rejects_bad_probabilities():
    rng = np.random.default_rng(0)
    assert draw_categorical(rng, [0.0, 1.0]) == 1
    with pytest.raises(NumericDomainError):
        draw_categorical(rng, [0.5, 0.6])


def test_truth_file_round_trip(small_data, tmp_path):
    truth = small_data[1]
    path = save_truth(truth, tmp_path / "truth.csv")
    loaded = load_truth(path)
    np.testing.assert_array_equal(loaded.classes, truth.classes)
    np.testing.assert_allclose(loaded.R, truth.R)
    subset = loaded.subset_for(truth.ids[[3, 1]])
    np.testing.assert_array_equal(subset.ids, truth.ids[[3, 1]])
    with pytest.raises(LoadError):
        load_truth(tmp_path / "absent.csv")
