"""
EM estimation of the latent class choice model with network-built latent
variables.

Each cycle runs the E-step (class posteriors by Bayes' rule in log space),
the choice M-step (BFGS per class) and one joint gradient M-step over the
membership, network, omega and measurement parameters, which share a single
backward pass. The quantity tracked per cycle is the observed-data choice
log-likelihood plus the indicator log-likelihood; with M-steps that never
decrease their own objectives it cannot decrease.
"""
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from tools.choice_model import choice_mstep, class_choice_ll
from tools.data_model import Dataset, ModelSpec
from tools.latent_net import backward_latent_batch, forward_latent_batch, omega_batch
from tools.measurement_model import measurement_terms
from tools.membership_model import class_log_probs, membership_terms
from tools.parameters import (ParameterSet, PosteriorTable, gradient_block_keys, initialize_parameters,
                              pack, unpack)
from utils.errors import ContractError, EstimationError, LcnetError, NumericDomainError

logger = logging.getLogger(__name__)

MAX_STEP_HALVINGS = 40


@dataclass
class IterationRecord:
    iteration: int
    observed_ll: float
    measurement_ll: float
    total_objective: float
    choice_converged: bool
    wall_time: float


@dataclass
class FitTrace:
    restart: int
    seed: int
    records: List[IterationRecord] = field(default_factory=list)
    initial_ll: float = float("nan")
    status: str = "running"
    error: Optional[str] = None
    omega_fallbacks: int = 0

    @property
    def final_ll(self) -> float:
        return self.records[-1].observed_ll if self.records else float("nan")

    @property
    def final_objective(self) -> float:
        return self.records[-1].total_objective if self.records else float("nan")

    @property
    def converged(self) -> bool:
        return self.status == "ok" and bool(self.records) and self.records[-1].choice_converged

    def to_frame(self, include_timing: bool = False) -> pd.DataFrame:
        columns = ["iteration", "observed_ll", "measurement_ll", "total_objective", "choice_converged"]
        if include_timing:
            columns.append("wall_time")
        rows = [{c: getattr(r, c) for c in columns} for r in self.records]
        frame = pd.DataFrame(rows, columns=columns)
        frame.insert(0, "restart", self.restart)
        return frame


# ---------------------------------------------------------------- likelihood pieces

def latent_inputs(dataset: Dataset, params: ParameterSet, spec: Optional[ModelSpec] = None):
    """Membership covariates, latent variables and omega for every individual"""
    membership_columns = spec.membership_columns if spec else None
    network_columns = spec.network_columns if spec else None
    Qm = dataset.socio_matrix(membership_columns)
    R, _ = forward_latent_batch(dataset.socio_matrix(network_columns), params.latent)
    omega, _ = omega_batch(dataset.ids, params.omega)
    return Qm, R, omega


def log_joint(dataset: Dataset, params: ParameterSet, spec: Optional[ModelSpec] = None) -> np.ndarray:
    """log P(class k) + log P(observed choices | class k): (N, K)"""
    Qm, R, omega = latent_inputs(dataset, params, spec)
    log_prior = class_log_probs(Qm, R, omega, params.membership)
    return log_prior + class_choice_ll(dataset.arrays, params.choice.beta)


def e_step(dataset: Dataset, params: ParameterSet, spec: Optional[ModelSpec] = None) -> PosteriorTable:
    lj = log_joint(dataset, params, spec)
    norm = logsumexp(lj, axis=1, keepdims=True)
    if not np.all(np.isfinite(norm)):
        raise NumericDomainError("E-step: an individual has zero likelihood under every class")
    table = PosteriorTable(np.exp(lj - norm), dataset.ids.copy())
    table.validate()
    return table


def unconditional_ll(dataset: Dataset, params: ParameterSet, spec: Optional[ModelSpec] = None) -> float:
    """sum_n log sum_k P(k | n) prod_tasks P(chosen | k)"""
    return float(np.sum(logsumexp(log_joint(dataset, params, spec), axis=1)))


def measurement_ll(dataset: Dataset, params: ParameterSet, spec: ModelSpec) -> float:
    if not spec.uses_indicators or dataset.n_indicators == 0:
        return 0.0
    arrays = dataset.arrays
    rows = np.flatnonzero(arrays.has_indicators)
    if rows.size == 0:
        return 0.0
    _, R, omega = latent_inputs(dataset, params, spec)
    return measurement_terms(arrays.indicators[rows], R[rows], omega[rows], params.measurement).value


def joint_objective(dataset: Dataset, posteriors, params: ParameterSet, spec: ModelSpec,
                    keys: Optional[List[str]] = None) -> Tuple[float, np.ndarray]:
    """Posterior-weighted membership log-likelihood plus indicator log-likelihood,
    with its gradient over the gradient-trained blocks (packing order of `keys`)"""
    keys = keys or gradient_block_keys(params, spec)
    post = np.asarray(getattr(posteriors, "gamma", posteriors), dtype=float)
    Qm = dataset.socio_matrix(spec.membership_columns)
    R, cache = forward_latent_batch(dataset.socio_matrix(spec.network_columns), params.latent)
    omega, positions = omega_batch(dataset.ids, params.omega)
    if np.any(positions < 0):
        raise ContractError("gradient M-step received individuals without omega weights")

    mem = membership_terms(Qm, R, omega, post, params.membership)
    value = mem.value
    dR, domega = mem.dR, mem.domega
    meas = None
    if spec.uses_indicators:
        meas = measurement_terms(dataset.arrays.indicators, R, omega, params.measurement)
        value += meas.value
        dR = dR + meas.dR
        domega = domega + meas.domega

    grads: Dict[str, np.ndarray] = {
        "membership.asc": mem.params.asc[:-1],
        "membership.gamma": mem.params.gamma[:-1],
        "membership.delta": mem.params.delta[:-1],
        "membership.b": mem.params.b[:-1],
    }
    if "latent.W1" in keys:
        grads["latent.W1"], grads["latent.W2"] = backward_latent_batch(cache, params.latent, dR)
    if "omega.w" in keys:
        domega_w = np.zeros_like(params.omega.w)
        np.add.at(domega_w, positions, domega)
        grads["omega.w"] = domega_w
    if meas is not None:
        grads["measurement.alpha"] = meas.alpha
        grads["measurement.c"] = meas.c
        for p, g in enumerate(meas.gaps):
            grads[f"measurement.gaps.{p}"] = g
    return value, np.concatenate([grads[key].ravel() for key in keys])


def gradient_mstep(dataset: Dataset, posteriors, params: ParameterSet, spec: ModelSpec) -> Tuple[ParameterSet, Dict]:
    """Full-batch gradient ascent on the per-individual mean of `joint_objective`.

    The step starts at spec.gradient_step and is halved whenever a step would
    lower the objective. Stops after spec.gradient_steps accepted steps or when
    the gradient's infinity norm drops below spec.gradient_tol.
    """
    keys = gradient_block_keys(params, spec)
    scale = 1.0 / dataset.n_individuals
    x = pack(params, keys)
    current = params
    value, grad = joint_objective(dataset, posteriors, current, spec, keys)
    step = spec.gradient_step
    taken = 0
    while taken < spec.gradient_steps:
        if np.max(np.abs(grad * scale), initial=0.0) < spec.gradient_tol:
            break
        for _ in range(MAX_STEP_HALVINGS):
            x_new = x + step * scale * grad
            candidate = unpack(x_new, params, keys)
            try:
                new_value, new_grad = joint_objective(dataset, posteriors, candidate, spec, keys)
            except NumericDomainError:
                new_value = -np.inf
            if np.isfinite(new_value) and new_value >= value:
                break
            step *= 0.5
        else:
            logger.debug("gradient M-step: no ascent step found after %d halvings", MAX_STEP_HALVINGS)
            break
        x, current, value, grad = x_new, candidate, new_value, new_grad
        taken += 1
    return current, {"value": value, "steps": taken, "step_size": step,
                     "grad_norm": float(np.max(np.abs(grad * scale), initial=0.0))}


# ---------------------------------------------------------------- EM loop

class EmRun:
    """State of one EM restart.

    `params_version` goes up after every M-step. The E-step stamps its
    posteriors with the version it read, so an M-step can tell how many
    parameter updates happened since those posteriors were computed.
    """

    def __init__(self, dataset: Dataset, spec: ModelSpec, restart: int, seed: int):
        self.dataset = dataset
        self.spec = spec
        self.rng = np.random.default_rng(seed)
        self.params = initialize_parameters(dataset, spec, self.rng)
        self.params_version = 0
        self.posteriors: Optional[PosteriorTable] = None
        self.trace = FitTrace(restart=restart, seed=seed)

    def _require_fresh_posteriors(self, updates_since_estep: int) -> None:
        """The choice M-step must see no update since the E-step, the joint M-step only the choice update"""
        if self.posteriors is None:
            raise ContractError("M-step called before any E-step")
        if self.posteriors.version + updates_since_estep != self.params_version:
            raise ContractError(f"M-step would use posteriors from parameter version {self.posteriors.version}, "
                                f"current version is {self.params_version}")

    def expectation(self) -> PosteriorTable:
        self.posteriors = e_step(self.dataset, self.params, self.spec)
        self.posteriors.version = self.params_version
        return self.posteriors

    def choice_step(self) -> List[Any]:
        self._require_fresh_posteriors(0)
        choice, outcomes = choice_mstep(self.dataset, self.posteriors, self.params.choice,
                                        tol=self.spec.choice_tol, max_iter=self.spec.choice_max_iter)
        self.params.choice = choice
        self.params_version += 1
        return outcomes

    def joint_step(self) -> Dict:
        self._require_fresh_posteriors(1)
        self.params, info = gradient_mstep(self.dataset, self.posteriors, self.params, self.spec)
        self.params_version += 1
        return info

    def cycle(self, iteration: int) -> IterationRecord:
        started = time.perf_counter()
        self.expectation()
        outcomes = self.choice_step()
        info = self.joint_step()

        observed = unconditional_ll(self.dataset, self.params, self.spec)
        indicator = measurement_ll(self.dataset, self.params, self.spec)
        record = IterationRecord(
            iteration=iteration,
            observed_ll=observed,
            measurement_ll=indicator,
            total_objective=observed + indicator,
            choice_converged=all(o.converged for o in outcomes),
            wall_time=time.perf_counter() - started,
        )
        logger.info("restart %d iteration %d: LL %.4f, total %.4f (%d gradient steps)",
                    self.trace.restart, iteration, observed, record.total_objective, info["steps"])
        return record

    def run(self) -> Tuple[ParameterSet, PosteriorTable, FitTrace]:
        spec = self.spec
        self.trace.initial_ll = unconditional_ll(self.dataset, self.params, spec)
        quiet = 0
        previous = self.trace.initial_ll
        for iteration in range(spec.em_iterations):
            record = self.cycle(iteration)
            self.trace.records.append(record)
            if not np.isfinite(record.total_objective):
                raise NumericDomainError(f"objective became non-finite at iteration {iteration}")
            if spec.early_stop:
                quiet = quiet + 1 if abs(record.observed_ll - previous) < spec.early_stop_tol else 0
                if quiet >= spec.early_stop_patience:
                    logger.info("restart %d: LL change below %g for %d iterations, stopping early",
                                self.trace.restart, spec.early_stop_tol, quiet)
                    break
            previous = record.observed_ll
        self.params.validate(spec)
        posteriors = e_step(self.dataset, self.params, spec)
        posteriors.version = self.params_version
        self.trace.status = "ok"
        return self.params, posteriors, self.trace


def _check_training_data(dataset: Dataset, spec: ModelSpec) -> None:
    if spec.uses_indicators and not dataset.arrays.has_indicators.all():
        missing = int((~dataset.arrays.has_indicators).sum())
        raise ContractError(f"{missing} training individuals lack indicator responses; "
                            f"required when z > 0 or use_omega is set")


def em_fit(dataset: Dataset, spec: ModelSpec, restart: int = 0,
           seed: Optional[int] = None) -> Tuple[ParameterSet, PosteriorTable, FitTrace]:
    """One EM run of exactly spec.em_iterations cycles (fewer only with early stopping)"""
    _check_training_data(dataset, spec)
    seed = spec.seed + restart if seed is None else seed
    return EmRun(dataset, spec, restart, seed).run()


@dataclass
class MultiStartResult:
    params: ParameterSet
    posteriors: PosteriorTable
    trace: FitTrace
    restarts: List[Dict[str, Any]]
    traces: List[FitTrace]
    ll_variance: float
    test_ll_variance: Optional[float] = None

    @property
    def best_restart(self) -> int:
        return self.trace.restart

    def summary_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.restarts)


def _restart_job(args):
    dataset, spec, restart, seed, test = args
    try:
        params, posteriors, trace = em_fit(dataset, spec, restart=restart, seed=seed)
    except (LcnetError, FloatingPointError, np.linalg.LinAlgError) as exc:
        logger.error("restart %d (seed %d) aborted: %s", restart, seed, exc)
        trace = FitTrace(restart=restart, seed=seed, status="failed", error=str(exc))
        return None, None, trace, None
    test_ll = None
    if test is not None:
        test_ll = unconditional_ll(test, params, spec)
        trace.omega_fallbacks = params.omega.fallback_hits
    return params, posteriors, trace, test_ll


def multi_start(dataset: Dataset, spec: ModelSpec, test: Optional[Dataset] = None,
                workers: int = 1, seeds: Optional[Sequence[int]] = None) -> MultiStartResult:
    """Run spec.restarts EM fits (seeds seed + i unless given) and keep the best train LL.

    Variances are population variances across the restarts that finished.
    """
    _check_training_data(dataset, spec)
    seeds = list(seeds) if seeds is not None else [spec.seed + i for i in range(spec.restarts)]
    jobs = [(dataset, spec, i, s, test) for i, s in enumerate(seeds)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            outcomes = list(pool.map(_restart_job, jobs))
    else:
        outcomes = [_restart_job(job) for job in jobs]

    restarts, finished = [], []
    for params, posteriors, trace, test_ll in outcomes:
        entry = {"restart": trace.restart, "seed": trace.seed, "status": trace.status,
                 "final_ll": trace.final_ll, "final_objective": trace.final_objective,
                 "test_ll": test_ll, "test_omega_fallbacks": trace.omega_fallbacks,
                 "iterations": len(trace.records)}
        if trace.error:
            entry["error"] = trace.error
        restarts.append(entry)
        if params is not None:
            finished.append((params, posteriors, trace, test_ll))
    if not finished:
        raise EstimationError(f"all {len(jobs)} restarts failed")

    best = max(finished, key=lambda item: item[2].final_ll)
    lls = np.array([item[2].final_ll for item in finished])
    test_lls = [item[3] for item in finished if item[3] is not None]
    result = MultiStartResult(
        params=best[0],
        posteriors=best[1],
        trace=best[2],
        restarts=restarts,
        traces=[o[2] for o in outcomes],
        ll_variance=float(np.var(lls)),
        test_ll_variance=float(np.var(test_lls)) if test_lls else None,
    )
    logger.info("multi-start: best restart %d with LL %.4f, LL variance %.4f over %d restarts",
                result.best_restart, result.trace.final_ll, result.ll_variance, len(finished))
    return result
