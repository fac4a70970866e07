"""
Self-tests run by `main_app.py check`: analytic gradients against central
differences, and the vectorized likelihood kernels against scalar
brute-force loops on a tiny enumerable instance.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np

from estimators.em_engine import e_step, joint_objective, unconditional_ll
from estimators.inference import class_profiles
from tools.choice_model import weighted_choice_objective
from tools.data_model import Dataset, ModelSpec
from tools.measurement_model import indicator_probs, measurement_mstep_objective
from tools.membership_model import membership_mstep_objective
from tools.numerics import ObjectiveHandle, check_gradient
from tools.parameters import ParameterSet, gradient_block_keys, initialize_parameters, pack, unpack
from tools.synthgen import GeneratorConfig, default_generating_parameters, generate

logger = logging.getLogger(__name__)

GRADIENT_TOL = 1e-5
ORACLE_TOL = 1e-10
GRADIENT_POINTS = 20
PERTURBATION = 0.1


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error <= self.tolerance)


def tiny_problem(seed: int = 0) -> Tuple[Dataset, ModelSpec, ParameterSet]:
    """N=5, K=2, J=2, T=1, Z=1, P=2, L=3 with random parameters"""
    spec = ModelSpec(k=2, z=1, h=3, use_omega=True, em_iterations=1, seed=seed)
    config = GeneratorConfig(
        n_individuals=5, n_tasks=1, n_alternatives=2, n_generic_attributes=1,
        n_indicators=2, indicator_levels=3,
        socio=[{"name": "group", "kind": "categorical", "values": [0, 1], "probs": [0.5, 0.5]},
               {"name": "score", "kind": "uniform", "low": -1.0, "high": 1.0}],
    )
    dataset, _ = generate(spec, default_generating_parameters(spec, config, seed), config, seed)
    params = _random_parameters(dataset, spec, np.random.default_rng(seed))
    return dataset, spec, params


def _random_parameters(dataset: Dataset, spec: ModelSpec, rng: np.random.Generator) -> ParameterSet:
    params = initialize_parameters(dataset, spec, rng)
    # thresholds keep their unit spacing
    keys = [key for key in gradient_block_keys(params, spec) if not key.startswith("measurement.gaps")]
    x = pack(params, keys)
    return unpack(x + rng.normal(0.0, 0.5, x.size), params, keys)


def _random_posteriors(rng: np.random.Generator, N: int, K: int) -> np.ndarray:
    return rng.dirichlet(np.ones(K), size=N)


# ---------------------------------------------------------------- gradient checks

def _worst_over_points(objective: ObjectiveHandle, x0: np.ndarray, rng: np.random.Generator,
                       points: int) -> float:
    worst = 0.0
    for _ in range(points):
        x = x0 + rng.normal(0.0, PERTURBATION, x0.size)
        worst = max(worst, check_gradient(objective, x))
    return worst


def choice_gradient_check(dataset, rng, points=GRADIENT_POINTS) -> CheckResult:
    arrays = dataset.arrays
    weights = rng.uniform(0.0, 1.0, arrays.task_chosen.size)
    objective = weighted_choice_objective(arrays.task_X, arrays.task_chosen, weights)
    x0 = rng.normal(0.0, 1.0, dataset.n_attributes)
    return CheckResult("choice gradient", _worst_over_points(objective, x0, rng, points), GRADIENT_TOL)


def membership_gradient_check(dataset, spec, params, rng, points=GRADIENT_POINTS) -> CheckResult:
    """Membership objective through the network and the omega layer"""
    keys = ["membership.asc", "membership.gamma", "membership.delta", "membership.b",
            "latent.W1", "latent.W2", "omega.w"]
    post = _random_posteriors(rng, dataset.n_individuals, spec.k)

    def _objective(x):
        p = unpack(x, params, keys)
        return membership_mstep_objective(dataset, post, p.membership, p.latent, p.omega,
                                          spec.membership_columns, spec.network_columns)

    def _grad(x):
        out = _objective(x)
        g = out.params
        return np.concatenate([g.asc[:-1], g.gamma[:-1].ravel(), g.delta[:-1].ravel(), g.b[:-1],
                               out.dW1.ravel(), out.dW2.ravel(), out.domega_w])

    objective = ObjectiveHandle(lambda x: _objective(x).value, _grad)
    return CheckResult("membership gradient", _worst_over_points(objective, pack(params, keys), rng, points),
                       GRADIENT_TOL)


def measurement_gradient_check(dataset, spec, params, rng, points=GRADIENT_POINTS) -> CheckResult:
    """Indicator log-likelihood over loadings, free thresholds, network and omega"""
    taus = [f"measurement.tau.{p}" for p in range(params.measurement.n_indicators)]
    keys = ["measurement.alpha", "measurement.c", *taus, "latent.W1", "latent.W2", "omega.w"]

    def _objective(x):
        p = unpack(x, params, keys)
        return measurement_mstep_objective(dataset, p.latent, p.omega, p.measurement, spec.network_columns)

    def _grad(x):
        out = _objective(x)
        g = out.grad
        return np.concatenate([g.alpha.ravel(), g.c, *[t[1:] for t in g.tau],
                               out.dW1.ravel(), out.dW2.ravel(), out.domega_w])

    objective = ObjectiveHandle(lambda x: _objective(x).value, _grad)
    return CheckResult("measurement gradient", _worst_over_points(objective, pack(params, keys), rng, points),
                       GRADIENT_TOL)


def joint_gradient_check(dataset, spec, params, rng, points=GRADIENT_POINTS) -> CheckResult:
    """The gradient M-step objective in its own parameterization (threshold log-gaps)"""
    keys = gradient_block_keys(params, spec)
    post = _random_posteriors(rng, dataset.n_individuals, spec.k)
    objective = ObjectiveHandle(
        lambda x: joint_objective(dataset, post, unpack(x, params, keys), spec, keys)[0],
        lambda x: joint_objective(dataset, post, unpack(x, params, keys), spec, keys)[1],
    )
    return CheckResult("joint M-step gradient", _worst_over_points(objective, pack(params, keys), rng, points),
                       GRADIENT_TOL)


# ---------------------------------------------------------------- scalar oracles

def _scalar_latent(q, W1, W2) -> List[float]:
    hidden = []
    for i in range(W1.shape[0]):
        pre = W1[i, 0] + sum(W1[i, m + 1] * q[m] for m in range(len(q)))
        hidden.append(max(pre, 0.0))
    return [W2[z, 0] + sum(W2[z, i + 1] * hidden[i] for i in range(len(hidden))) for z in range(W2.shape[0])]


def _scalar_class_probs(q, r, omega, mem) -> List[float]:
    utilities = []
    for k in range(mem.n_classes):
        v = mem.asc[k] + sum(mem.gamma[k, m] * q[m] for m in range(len(q)))
        v += sum(mem.delta[k, z] * r[z] for z in range(len(r))) + mem.b[k] * omega
        utilities.append(v)
    top = max(utilities)
    expv = [math.exp(v - top) for v in utilities]
    return [e / sum(expv) for e in expv]


def _scalar_choice_likelihood(individual, beta_k) -> float:
    total = 1.0
    for task in individual.tasks:
        v = [sum(x[a] * beta_k[a] for a in range(len(beta_k))) for x in task.alternatives]
        top = max(v)
        total *= math.exp(v[task.chosen] - top) / sum(math.exp(u - top) for u in v)
    return total


def _scalar_ordinal(v, tau) -> List[float]:
    def cdf(t):
        if t == math.inf:
            return 1.0
        if t == -math.inf:
            return 0.0
        return 1.0 / (1.0 + math.exp(-(t - v)))
    cuts = [-math.inf, *tau, math.inf]
    return [cdf(cuts[l + 1]) - cdf(cuts[l]) for l in range(len(cuts) - 1)]


def _brute_force(dataset, params):
    """Per individual: class probabilities, choice likelihoods and indicator level probabilities"""
    rows = []
    for row, ind in enumerate(dataset.individuals):
        r = _scalar_latent(ind.socio, params.latent.W1, params.latent.W2)
        pos = params.omega._position.get(ind.id)
        omega = params.omega.w[pos] if pos is not None else params.omega.fallback_value()
        prior = _scalar_class_probs(ind.socio, r, omega, params.membership)
        lik = [_scalar_choice_likelihood(ind, params.choice.beta[k]) for k in range(len(prior))]
        levels = []
        for p in range(params.measurement.n_indicators):
            v = sum(params.measurement.alpha[p, z] * r[z] for z in range(len(r))) + params.measurement.c[p] * omega
            levels.append(_scalar_ordinal(v, list(params.measurement.tau[p])))
        rows.append((r, omega, prior, lik, levels))
    return rows


def oracle_checks(dataset, spec, params) -> List[CheckResult]:
    brute = _brute_force(dataset, params)
    ll = sum(math.log(sum(p * l for p, l in zip(prior, lik))) for _, _, prior, lik, _ in brute)
    gamma = np.array([[p * l / sum(pp * ll_ for pp, ll_ in zip(prior, lik)) for p, l in zip(prior, lik)]
                      for _, _, prior, lik, _ in brute])

    results = [CheckResult("unconditional LL oracle", abs(unconditional_ll(dataset, params, spec) - ll), ORACLE_TOL)]
    posteriors = e_step(dataset, params, spec)
    results.append(CheckResult("E-step oracle", float(np.max(np.abs(posteriors.gamma - gamma))), ORACLE_TOL))

    worst = 0.0
    for (r, omega, _, _, levels) in brute:
        for p, expected in enumerate(levels):
            got = indicator_probs(np.array(r), omega, p, params.measurement)
            worst = max(worst, float(np.max(np.abs(got - np.array(expected)))))
    results.append(CheckResult("indicator probability oracle", worst, ORACLE_TOL))

    profiles = class_profiles(dataset, posteriors, columns=dataset.socio_names[:1])
    name = dataset.socio_names[0]
    worst = 0.0
    for k in range(gamma.shape[1]):
        mass = sum(gamma[n, k] for n in range(dataset.n_individuals))
        for value in sorted({ind.socio[0] for ind in dataset.individuals}):
            hits = sum(gamma[n, k] for n, ind in enumerate(dataset.individuals) if ind.socio[0] == value)
            worst = max(worst, abs(profiles.loc[(name, float(value)), f"class{k + 1}"] - hits / mass))
    results.append(CheckResult("class profile oracle", worst, ORACLE_TOL))
    return results


CHECKS: List[Tuple[str, Callable]] = [
    ("choice", lambda d, s, p, rng: [choice_gradient_check(d, rng)]),
    ("membership", lambda d, s, p, rng: [membership_gradient_check(d, s, p, rng)]),
    ("measurement", lambda d, s, p, rng: [measurement_gradient_check(d, s, p, rng)]),
    ("joint", lambda d, s, p, rng: [joint_gradient_check(d, s, p, rng)]),
    ("oracles", lambda d, s, p, rng: oracle_checks(d, s, p)),
]


def run_self_checks(seed: int = 0) -> List[CheckResult]:
    """Every gradient and oracle check on the tiny instance; logs one line per check"""
    dataset, spec, params = tiny_problem(seed)
    rng = np.random.default_rng(seed + 1)
    results: List[CheckResult] = []
    for _, check in CHECKS:
        results.extend(check(dataset, spec, params, rng))
    for result in results:
        level = logging.INFO if result.passed else logging.ERROR
        logger.log(level, "%-30s error %.3e (tolerance %.0e) %s", result.name, result.error,
                   result.tolerance, "ok" if result.passed else "FAILED")
    return results
