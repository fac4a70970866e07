"""
Class-specific multinomial logit, its posterior-weighted M-step and the
analytic gradient used by BFGS. Alternative-specific constants are plain
attribute columns; an outside option is an all-zero attribute row.
"""
import logging
from dataclasses import dataclass
from typing import List

import numpy as np
from scipy.special import logsumexp

from tools.numerics import BfgsResult, ObjectiveHandle, bfgs_maximize, softmax
from utils.config import BFGS_DEFAULTS
from utils.errors import ContractError

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class ChoiceParams:
    beta: np.ndarray  # (K, A)

    def __post_init__(self):
        self.beta = np.atleast_2d(np.asarray(self.beta, dtype=float))

    @property
    def n_classes(self) -> int:
        return self.beta.shape[0]

    def copy(self) -> "ChoiceParams":
        return ChoiceParams(self.beta.copy())


def alt_probs(task, beta_k) -> np.ndarray:
    beta_k = np.asarray(beta_k, dtype=float)
    X = task.alternatives
    if X.shape[1] != beta_k.size:
        raise ContractError(f"task has {X.shape[1]} attributes, beta has {beta_k.size}")
    return softmax(X @ beta_k)


def conditional_choice_ll(individual, beta_k) -> float:
    """Sum over the individual's tasks of log P(chosen | class)"""
    if not individual.tasks:
        raise ContractError(f"individual {individual.id} has no tasks")
    return float(sum(np.log(alt_probs(task, beta_k)[task.chosen]) for task in individual.tasks))


def task_log_probs(task_X: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """log P(j | class k) for every task, class and alternative: (S, K, J)"""
    V = np.einsum("sja,ka->skj", task_X, np.atleast_2d(beta))
    return V - logsumexp(V, axis=2, keepdims=True)


def chosen_log_probs(task_X: np.ndarray, task_chosen: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """log P(chosen | class k) per task: (S, K)"""
    logp = task_log_probs(task_X, beta)
    return np.take_along_axis(logp, task_chosen[:, None, None], axis=2)[:, :, 0]


def class_choice_ll(arrays, beta: np.ndarray) -> np.ndarray:
    """log prod_tasks P(chosen | class k) per individual: (N, K)"""
    per_task = chosen_log_probs(arrays.task_X, arrays.task_chosen, beta)
    return np.asarray(arrays.panel @ per_task)


def weighted_choice_objective(task_X: np.ndarray, task_chosen: np.ndarray, weights: np.ndarray) -> ObjectiveHandle:
    """sum_s w_s log P(chosen_s | beta) for one class, with gradient sum_s w_s (x_chosen - E_p[x])"""
    x_chosen = task_X[np.arange(task_X.shape[0]), task_chosen]  # (S, A)

    def _eval(beta):
        V = task_X @ beta
        return float(np.sum(weights * (V[np.arange(V.shape[0]), task_chosen] - logsumexp(V, axis=1))))

    def _grad(beta):
        p = softmax(task_X @ beta, axis=1)
        expected = np.einsum("sj,sja->sa", p, task_X)
        return weights @ (x_chosen - expected)

    return ObjectiveHandle(_eval, _grad)


def choice_mstep(dataset, posteriors, init: ChoiceParams, tol: float = BFGS_DEFAULTS["choice_tol"],
                 max_iter: int = BFGS_DEFAULTS["choice_max_iter"]):
    """BFGS on each class's posterior-weighted MNL log-likelihood.

    Returns the updated ChoiceParams and one BfgsResult per class.
    """
    post = np.asarray(getattr(posteriors, "gamma", posteriors), dtype=float)
    arrays = dataset.arrays
    if post.shape != (dataset.n_individuals, init.n_classes):
        raise ContractError(f"posteriors {post.shape} do not match the dataset and {init.n_classes} classes")
    beta = init.beta.copy()
    outcomes: List[BfgsResult] = []
    for k in range(init.n_classes):
        weights = post[arrays.task_owner, k]
        objective = weighted_choice_objective(arrays.task_X, arrays.task_chosen, weights)
        result = bfgs_maximize(objective, beta[k], tol=tol, max_iter=max_iter)
        if not result.converged:
            logger.warning("choice M-step class %d: BFGS stopped after %d iterations without converging",
                           k + 1, result.iterations)
        beta[k] = result.x
        outcomes.append(result)
    return ChoiceParams(beta), outcomes
