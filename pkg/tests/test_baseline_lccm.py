import numpy as np
import pytest

from estimators.baseline_lccm import (baseline_fit, baseline_spec, information_criteria, market_share_null_ll,
                                      market_shares, null_ll, uniform_null_ll)
from tools.data_model import ModelSpec
from utils.errors import ConfigError

from tests.conftest import make_dataset


def test_information_criteria_reference_values():
    criteria = information_criteria(ll=-1599.41, n_params=30, n_obs=2710, ll_null=-2000.0)
    assert criteria.aic == pytest.approx(3258.82)
    assert criteria.bic == pytest.approx(30 * np.log(2710) + 3198.82)
    assert criteria.rho_squared == pytest.approx(1 - 1599.41 / 2000.0)


def test_rho_squared_undefined_for_zero_null():
    assert np.isnan(information_criteria(-1.0, 1, 10, 0.0).rho_squared)


def test_uniform_null_is_minus_s_log_j():
    d = make_dataset(10, n_alternatives=4, tasks=3)
    assert uniform_null_ll(d) == pytest.approx(-30 * np.log(4))
    assert null_ll(d) == uniform_null_ll(d)


def test_market_share_null_uses_observed_shares():
    # make_dataset always chooses alternative 0
    d = make_dataset(5, n_alternatives=3)
    np.testing.assert_allclose(market_shares(d), [1.0, 0.0, 0.0])
    assert market_share_null_ll(d) == 0.0
    assert null_ll(d, "market_share", shares=np.array([0.5, 0.25, 0.25])) == pytest.approx(5 * np.log(0.5))
    with pytest.raises(ConfigError):
        null_ll(d, "logit")


def test_baseline_spec_switches_off_latent_structure():
    spec = baseline_spec(ModelSpec(k=3, z=2, h=8, use_omega=True, seed=4))
    assert spec.is_baseline
    assert (spec.k, spec.h, spec.seed) == (3, 8, 4)


def test_baseline_needs_two_classes(small_data):
    with pytest.raises(ConfigError):
        baseline_fit(small_data[0], ModelSpec(k=1, z=0, use_omega=False))


def test_baseline_fit_returns_plain_lccm_parameters(small_data, small_spec):
    params, posteriors, trace = baseline_fit(small_data[0], small_spec)
    assert params.choice.beta.shape == (2, small_data[0].n_attributes)
    np.testing.assert_array_equal(params.membership.b, 0.0)
    assert params.parameter_set.latent.n_latent == 0
    lls = [r.observed_ll for r in trace.records]
    assert np.all(np.diff(lls) >= -1e-8 * np.abs(lls[1:]))


@pytest.mark.parametrize("seed", range(10))
def test_information_criteria_on_random_fits(seed):
    rng = np.random.default_rng(seed)
    ll, n_params, n_obs = -rng.uniform(100.0, 5000.0), int(rng.integers(1, 80)), int(rng.integers(100, 4000))
    ll_null = ll - rng.uniform(1.0, 800.0)
    criteria = information_criteria(ll, n_params, n_obs, ll_null)
    assert criteria.aic == pytest.approx(2 * n_params - 2 * ll, abs=1e-9)
    assert criteria.bic == pytest.approx(n_params * np.log(n_obs) - 2 * ll, abs=1e-9)
    assert criteria.rho_squared == pytest.approx(1 - ll / ll_null, abs=1e-9)
    assert 0.0 < criteria.rho_squared < 1.0
