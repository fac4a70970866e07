"""
Post-estimation: block-wise standard errors from finite-difference Hessians
of analytic gradients, posterior class profiles, latent-space exports and
holdout evaluation.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import linalg, optimize, stats

from estimators.baseline_lccm import null_ll
from estimators.em_engine import e_step, latent_inputs, unconditional_ll
from tools.choice_model import task_log_probs, weighted_choice_objective
from tools.data_model import Dataset, ModelSpec
from tools.latent_net import forward_latent_batch, omega_batch
from tools.measurement_model import measurement_terms
from tools.membership_model import class_log_probs, membership_terms
from tools.parameters import ParameterSet, pack, unpack
from utils.errors import ContractError

logger = logging.getLogger(__name__)

BLOCKS = ("membership", "choice", "measurement")
HESSIAN_REL_STEP = 1e-4
CONDITION_LIMIT = 1e12
SYMMETRY_TOL = 1e-6


@dataclass
class StandardErrorTable:
    block: str
    frame: pd.DataFrame      # name, estimate, std_error, z, p_value
    pseudo_inverse: bool
    condition_number: float
    conditional: bool = True  # other blocks held at their estimates


# ---------------------------------------------------------------- block layouts

def _membership_keys(params: ParameterSet, spec: ModelSpec) -> List[str]:
    keys = ["membership.asc", "membership.gamma"]
    if spec.z > 0:
        keys.append("membership.delta")
    if spec.use_omega:
        keys.append("membership.b")
    return keys


def _measurement_keys(params: ParameterSet, spec: ModelSpec) -> List[str]:
    keys = []
    if spec.z > 0:
        keys.append("measurement.alpha")
    if spec.use_omega:
        keys.append("measurement.c")
    keys += [f"measurement.tau.{p}" for p, t in enumerate(params.measurement.tau) if t.size > 1]
    return keys


def parameter_labels(dataset: Dataset, params: ParameterSet, spec: ModelSpec, block: str) -> Dict[str, List[str]]:
    """Free and pinned parameter names of a block"""
    K = params.membership.n_classes
    classes = [f"class{k + 1}" for k in range(K)]
    if block == "membership":
        socio = [dataset.socio_names[i] for i in dataset.column_indices(spec.membership_columns)]
        per_class = {
            "asc": lambda c: [f"asc_{c}"],
            "gamma": lambda c: [f"gamma_{c}_{s}" for s in socio],
            "delta": lambda c: [f"delta_{c}_r{z + 1}" for z in range(spec.z)],
            "b": lambda c: [f"b_{c}"],
        }
        free, pinned = [], []
        for key in _membership_keys(params, spec):
            part = key.split(".")[1]
            for k, c in enumerate(classes):
                (pinned if k == K - 1 else free).extend(per_class[part](c))
        return {"free": free, "pinned": pinned}
    if block == "choice":
        return {"free": [f"beta_{c}_{a}" for c in classes for a in dataset.attribute_names], "pinned": []}
    if block == "measurement":
        texts = dataset.indicator_texts
        free, pinned = [], []
        if spec.z > 0:
            free += [f"alpha_{t}_r{z + 1}" for t in texts for z in range(spec.z)]
        if spec.use_omega:
            free += [f"c_{t}" for t in texts]
        for p, t in enumerate(params.measurement.tau):
            pinned.append(f"tau_{texts[p]}_1")
            free += [f"tau_{texts[p]}_{j + 1}" for j in range(1, t.size)]
        return {"free": free, "pinned": pinned}
    raise ContractError(f"unknown parameter block {block!r}; expected one of {BLOCKS}")


# ---------------------------------------------------------------- block gradients

def _membership_gradient(dataset, spec, keys) -> Callable:
    """Gradient of the observed-data LL over membership parameters (posteriors refreshed at each point)"""
    def grad(params: ParameterSet) -> np.ndarray:
        post = e_step(dataset, params, spec)
        Qm, R, omega = latent_inputs(dataset, params, spec)
        g = membership_terms(Qm, R, omega, post.gamma, params.membership).params
        parts = {"membership.asc": g.asc[:-1], "membership.gamma": g.gamma[:-1],
                 "membership.delta": g.delta[:-1], "membership.b": g.b[:-1]}
        return np.concatenate([parts[k].ravel() for k in keys])
    return grad


def _choice_gradient(dataset, spec, keys) -> Callable:
    arrays = dataset.arrays

    def grad(params: ParameterSet) -> np.ndarray:
        post = e_step(dataset, params, spec)
        rows = []
        for k in range(params.choice.n_classes):
            objective = weighted_choice_objective(arrays.task_X, arrays.task_chosen,
                                                  post.gamma[arrays.task_owner, k])
            rows.append(objective.grad(params.choice.beta[k]))
        return np.concatenate(rows)
    return grad


def _measurement_gradient(dataset, spec, keys) -> Callable:
    arrays = dataset.arrays
    rows = np.flatnonzero(arrays.has_indicators)

    def grad(params: ParameterSet) -> np.ndarray:
        _, R, omega = latent_inputs(dataset, params, spec)
        g = measurement_terms(arrays.indicators[rows], R[rows], omega[rows], params.measurement)
        parts = {"measurement.alpha": g.alpha, "measurement.c": g.c}
        for p, d_tau in enumerate(g.tau):
            parts[f"measurement.tau.{p}"] = d_tau[1:]
        return np.concatenate([parts[k].ravel() for k in keys])
    return grad


def _hessian(grad: Callable, params: ParameterSet, keys: List[str]) -> np.ndarray:
    x0 = pack(params, keys)
    H = np.zeros((x0.size, x0.size))
    for i in range(x0.size):
        h = HESSIAN_REL_STEP * max(1.0, abs(x0[i]))
        up, down = x0.copy(), x0.copy()
        up[i] += h
        down[i] -= h
        H[:, i] = (grad(unpack(up, params, keys)) - grad(unpack(down, params, keys))) / (2.0 * h)
    return H


def standard_errors(dataset: Dataset, params: ParameterSet, spec: ModelSpec, block: str,
                    names: Optional[Sequence[str]] = None) -> StandardErrorTable:
    """Std errors and normal p-values for one block from the negative inverse observed Hessian.

    Requesting a pinned (identification) entry raises ContractError.
    """
    labels = parameter_labels(dataset, params, spec, block)
    if names is not None:
        pinned = [n for n in names if n in labels["pinned"]]
        if pinned:
            raise ContractError(f"pinned parameters have no standard error: {pinned}")
        unknown = [n for n in names if n not in labels["free"]]
        if unknown:
            raise ContractError(f"unknown parameters for block {block}: {unknown}")

    if block == "membership":
        keys = _membership_keys(params, spec)
        grad = _membership_gradient(dataset, spec, keys)
    elif block == "choice":
        keys = ["choice.beta"]
        grad = _choice_gradient(dataset, spec, keys)
    else:
        if not spec.uses_indicators:
            raise ContractError("the measurement block is not estimated when z = 0 and use_omega is off")
        keys = _measurement_keys(params, spec)
        grad = _measurement_gradient(dataset, spec, keys)

    if not keys:
        raise ContractError(f"block {block} has no free parameters under this model")
    estimates = pack(params, keys)
    H = _hessian(grad, params, keys)
    asym = np.max(np.abs(H - H.T), initial=0.0) / max(1.0, np.max(np.abs(H), initial=0.0))
    if asym > SYMMETRY_TOL:
        logger.warning("%s Hessian asymmetric (relative %.2e) before symmetrization", block, asym)
    H = 0.5 * (H + H.T)
    info = -H
    cond = float(np.linalg.cond(info)) if info.size else 1.0
    pseudo = False
    try:
        if not np.isfinite(cond) or cond > CONDITION_LIMIT:
            raise linalg.LinAlgError("ill-conditioned")
        covariance = linalg.inv(info)
    except linalg.LinAlgError:
        logger.warning("%s Hessian not invertible (condition number %.3g); using pseudo-inverse", block, cond)
        covariance = linalg.pinv(info)
        pseudo = True
    variance = np.diag(covariance)
    with np.errstate(invalid="ignore", divide="ignore"):
        se = np.where(variance > 0, np.sqrt(np.abs(variance)), np.nan)
        z = estimates / se
    frame = pd.DataFrame({
        "name": labels["free"],
        "estimate": estimates,
        "std_error": se,
        "z": z,
        "p_value": 2.0 * stats.norm.sf(np.abs(z)),
    })
    if names is not None:
        frame = frame[frame["name"].isin(list(names))].reset_index(drop=True)
    return StandardErrorTable(block, frame, pseudo, cond)


# ---------------------------------------------------------------- posterior profiles

def categorical_columns(dataset: Dataset, max_levels: int = 10) -> List[str]:
    """Integer-valued socio columns with at most `max_levels` distinct values"""
    socio = dataset.arrays.socio
    names = []
    for m, name in enumerate(dataset.socio_names):
        col = socio[:, m]
        if np.all(col == np.round(col)) and np.unique(col).size <= max_levels:
            names.append(name)
    return names


def class_profiles(dataset: Dataset, posteriors, columns: Optional[Sequence[str]] = None,
                   degenerate_mass: float = 1e-8) -> pd.DataFrame:
    """P(feature = v | class k) = sum_n gamma_nk 1[Q_n = v] / sum_n gamma_nk.

    Rows are (feature, value); one column per class. Classes whose posterior
    mass is below `degenerate_mass` are listed in `frame.attrs["degenerate"]`
    and their column is NaN.
    """
    post = np.asarray(getattr(posteriors, "gamma", posteriors), dtype=float)
    columns = categorical_columns(dataset) if columns is None else list(columns)
    K = post.shape[1]
    mass = post.sum(axis=0)
    degenerate = [k + 1 for k in range(K) if mass[k] < degenerate_mass]
    for k in degenerate:
        logger.warning("class %d has posterior mass %.2e; profile marked degenerate", k, mass[k - 1])
    rows, index = [], []
    for name in columns:
        col = dataset.socio_matrix([name])[:, 0]
        for value in np.unique(col):
            hit = (col == value).astype(float)
            with np.errstate(invalid="ignore", divide="ignore"):
                share = (post * hit[:, None]).sum(axis=0) / mass
            share[mass < degenerate_mass] = np.nan
            rows.append(share)
            index.append((name, float(value)))
    frame = pd.DataFrame(rows, columns=[f"class{k + 1}" for k in range(K)],
                         index=pd.MultiIndex.from_tuples(index, names=["feature", "value"]))
    frame.attrs["degenerate"] = degenerate
    return frame


# ---------------------------------------------------------------- exports and holdout

def export_latent_space(dataset: Dataset, params: ParameterSet, spec: Optional[ModelSpec] = None) -> pd.DataFrame:
    """One row per individual: id, r_1..r_Z, omega, socio columns, indicator responses"""
    network_columns = spec.network_columns if spec else None
    R, _ = forward_latent_batch(dataset.socio_matrix(network_columns), params.latent)
    omega, _ = omega_batch(dataset.ids, params.omega)
    arrays = dataset.arrays
    frame = pd.DataFrame({"id": arrays.ids})
    for z in range(R.shape[1]):
        frame[f"r_{z + 1}"] = R[:, z]
    frame["omega"] = omega
    for m, name in enumerate(dataset.socio_names):
        frame[name] = arrays.socio[:, m]
    for p, text in enumerate(dataset.indicator_texts):
        frame[f"ind_{text}"] = np.where(arrays.has_indicators, arrays.indicators[:, p], np.nan)
    return frame


@dataclass
class HoldoutMetrics:
    test_ll: float
    test_null_ll: float
    hit_rate: float
    n_individuals: int
    n_observations: int
    omega_fallbacks: int

    def as_dict(self) -> Dict:
        return dict(self.__dict__)


def predicted_choice_probs(dataset: Dataset, params: ParameterSet, spec: Optional[ModelSpec] = None) -> np.ndarray:
    """Unconditional P(alternative) per task, mixing classes with prior membership: (S, J)"""
    Qm, R, omega = latent_inputs(dataset, params, spec)
    log_prior = class_log_probs(Qm, R, omega, params.membership)  # (N, K)
    logp = task_log_probs(dataset.arrays.task_X, params.choice.beta)  # (S, K, J)
    weights = np.exp(log_prior[dataset.arrays.task_owner])  # (S, K)
    return np.einsum("sk,skj->sj", weights, np.exp(logp))


def choice_hit_rate(dataset: Dataset, params: ParameterSet, spec: Optional[ModelSpec] = None) -> float:
    probs = predicted_choice_probs(dataset, params, spec)
    return float(np.mean(np.argmax(probs, axis=1) == dataset.arrays.task_chosen))


def evaluate_holdout(test: Dataset, params: ParameterSet, spec: Optional[ModelSpec] = None,
                     null_model: str = "uniform", shares: Optional[np.ndarray] = None) -> HoldoutMetrics:
    """Observed-data LL on held-out individuals (omega from the fallback policy), null LL and hit rate"""
    before = params.omega.fallback_hits
    test_ll = unconditional_ll(test, params, spec)
    fallbacks = params.omega.fallback_hits - before
    if fallbacks:
        logger.info("holdout: omega fallback '%s' used for %d individuals", params.omega.fallback, fallbacks)
    return HoldoutMetrics(
        test_ll=test_ll,
        test_null_ll=null_ll(test, null_model, shares),
        hit_rate=choice_hit_rate(test, params, spec),
        n_individuals=test.n_individuals,
        n_observations=test.n_observations,
        omega_fallbacks=fallbacks,
    )


def match_classes(posteriors, true_classes: np.ndarray) -> np.ndarray:
    """Estimated class index for each true class, maximizing posterior mass on the diagonal.

    Class labels are only identified up to permutation; this undoes label switching.
    """
    post = np.asarray(getattr(posteriors, "gamma", posteriors), dtype=float)
    K = post.shape[1]
    true_classes = np.asarray(true_classes, dtype=int)
    overlap = np.zeros((K, K))
    for k in range(K):
        overlap[k] = post[true_classes == k].sum(axis=0)
    rows, cols = optimize.linear_sum_assignment(overlap, maximize=True)
    return cols[np.argsort(rows)]


def posterior_accuracy(posteriors, true_classes: np.ndarray, align: bool = True) -> float:
    """Share of individuals whose most probable class equals the true label (labels 0-based)"""
    post = np.asarray(getattr(posteriors, "gamma", posteriors), dtype=float)
    true_classes = np.asarray(true_classes, dtype=int)
    predicted = np.argmax(post, axis=1)
    if align:
        mapping = match_classes(post, true_classes)
        predicted = np.argsort(mapping)[predicted]
    return float(np.mean(predicted == true_classes))
