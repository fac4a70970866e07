import numpy as np
import pytest

from tools.latent_net import (LatentNetWeights, OmegaWeights, backward_latent, forward_latent,
                              forward_latent_batch, forward_omega, omega_batch)
from tools.numerics import ObjectiveHandle, check_gradient
from utils.errors import ConfigError, ContractError


@pytest.fixture
def weights():
    rng = np.random.default_rng(0)
    return LatentNetWeights(rng.normal(size=(4, 3)), rng.normal(size=(2, 5)))


def test_forward_matches_manual_computation(weights):
    q = np.array([0.5, -1.0])
    hidden = np.maximum(weights.W1 @ np.concatenate(([1.0], q)), 0.0)
    expected = weights.W2 @ np.concatenate(([1.0], hidden))
    np.testing.assert_allclose(forward_latent(q, weights), expected)


def test_batch_rows_match_single_forward(weights):
    Q = np.random.default_rng(1).normal(size=(6, 2))
    R, _ = forward_latent_batch(Q, weights)
    for n in range(6):
        np.testing.assert_allclose(R[n], forward_latent(Q[n], weights))


def test_zero_weights_give_zero_latents():
    R, _ = forward_latent_batch(np.ones((3, 2)), LatentNetWeights.zeros(2, 4, 3))
    np.testing.assert_array_equal(R, np.zeros((3, 3)))


def test_backward_matches_finite_differences(weights):
    q = np.array([0.3, 0.8])
    upstream = np.array([0.7, -1.3])
    shape1, size1 = weights.W1.shape, weights.W1.size

    def unflatten(x):
        return LatentNetWeights(x[:size1].reshape(shape1), x[size1:].reshape(weights.W2.shape))

    objective = ObjectiveHandle(
        lambda x: float(upstream @ forward_latent(q, unflatten(x))),
        lambda x: np.concatenate([g.ravel() for g in backward_latent(q, unflatten(x), upstream)]),
    )
    x0 = np.concatenate([weights.W1.ravel(), weights.W2.ravel()])
    assert check_gradient(objective, x0) < 1e-6


def test_shape_mismatches_raise(weights):
    with pytest.raises(ContractError):
        forward_latent(np.zeros(3), weights)
    with pytest.raises(ContractError):
        LatentNetWeights(np.zeros((4, 3)), np.zeros((2, 4)))


def test_initialize_is_small_and_seeded():
    a = LatentNetWeights.initialize(3, 8, 2, np.random.default_rng(5))
    b = LatentNetWeights.initialize(3, 8, 2, np.random.default_rng(5))
    np.testing.assert_array_equal(a.W1, b.W1)
    assert np.abs(a.W1).max() <= 0.1 / np.sqrt(4)
    assert (a.n_inputs, a.n_hidden, a.n_latent) == (3, 8, 2)


def test_omega_lookup_and_fallbacks():
    weights = OmegaWeights(ids=[10, 20, 30], w=[1.0, 2.0, 6.0])
    assert forward_omega(20, weights) == 2.0
    assert forward_omega(99, weights) == 0.0
    assert weights.fallback_hits == 1

    mean_weights = OmegaWeights(ids=[10, 20, 30], w=[1.0, 2.0, 6.0], fallback="mean")
    values, positions = omega_batch([30, 5, 10], mean_weights)
    np.testing.assert_allclose(values, [6.0, 3.0, 1.0])
    np.testing.assert_array_equal(positions, [2, -1, 0])
    assert mean_weights.fallback_hits == 1


def test_omega_weights_validate():
    with pytest.raises(ContractError):
        OmegaWeights(ids=[1, 2], w=[0.0])
    with pytest.raises(ConfigError):
        OmegaWeights(ids=[1], w=[0.0], fallback="median")


@pytest.mark.parametrize("hidden", [1, 3, 6])
def test_duplicated_hidden_units_only_see_summed_output_weights(hidden):
    rng = np.random.default_rng(hidden)
    row = rng.normal(size=(1, 3))
    W1 = np.repeat(row, hidden, axis=0)
    W2 = rng.normal(size=(2, hidden + 1))
    # same bias column and same per-output sum over the hidden columns
    mixed = W2.copy()
    mixed[:, 1:] = rng.dirichlet(np.ones(hidden), size=2) * W2[:, 1:].sum(axis=1, keepdims=True)
    Q = rng.normal(size=(7, 2))
    R_a, _ = forward_latent_batch(Q, LatentNetWeights(W1, W2))
    R_b, _ = forward_latent_batch(Q, LatentNetWeights(W1, mixed))
    np.testing.assert_allclose(R_a, R_b, rtol=1e-10, atol=1e-12)
