"""
Traditional latent class choice model (socio-only membership logit plus
class-specific MNL) estimated through the same EM path, and the model
comparison criteria.
"""
import dataclasses
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Tuple

import numpy as np

from estimators.em_engine import FitTrace, em_fit
from tools.choice_model import ChoiceParams
from tools.data_model import Dataset, ModelSpec
from tools.membership_model import MembershipParams
from tools.parameters import ParameterSet, PosteriorTable
from utils.errors import ConfigError


@dataclass(eq=False)
class BaselineParams:
    membership: MembershipParams  # delta has zero columns and b stays 0
    choice: ChoiceParams
    parameter_set: ParameterSet = field(repr=False, default=None)

    @classmethod
    def from_parameter_set(cls, params: ParameterSet) -> "BaselineParams":
        return cls(params.membership, params.choice, params)


def baseline_spec(spec: ModelSpec) -> ModelSpec:
    """The same settings with latent variables and the individual effect switched off"""
    return dataclasses.replace(spec, z=0, use_omega=False)


def baseline_fit(dataset: Dataset, spec: ModelSpec) -> Tuple[BaselineParams, PosteriorTable, FitTrace]:
    """EM for the plain LCCM; indicators are never read"""
    if spec.k < 2:
        raise ConfigError("the baseline latent class model needs k >= 2")
    params, posteriors, trace = em_fit(dataset, baseline_spec(spec))
    return BaselineParams.from_parameter_set(params), posteriors, trace


class InformationCriteria(NamedTuple):
    aic: float
    bic: float
    rho_squared: float


def information_criteria(ll: float, n_params: int, n_obs: int, ll_null: float) -> InformationCriteria:
    """AIC, BIC (on choice observations) and rho-squared against `ll_null`"""
    aic = 2.0 * n_params - 2.0 * ll
    bic = n_params * np.log(n_obs) - 2.0 * ll
    rho2 = 1.0 - ll / ll_null if ll_null != 0 else float("nan")
    return InformationCriteria(float(aic), float(bic), float(rho2))


def uniform_null_ll(dataset: Dataset) -> float:
    """Every alternative equally likely: -sum over tasks of log J"""
    return -dataset.n_observations * float(np.log(dataset.n_alternatives))


def market_shares(dataset: Dataset) -> np.ndarray:
    arrays = dataset.arrays
    counts = np.bincount(arrays.task_chosen, minlength=dataset.n_alternatives).astype(float)
    return counts / counts.sum()


def market_share_null_ll(dataset: Dataset, shares: Optional[np.ndarray] = None) -> float:
    """Constant choice probabilities equal to observed alternative shares"""
    shares = market_shares(dataset) if shares is None else np.asarray(shares, dtype=float)
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(shares[dataset.arrays.task_chosen])))


def null_ll(dataset: Dataset, model: str = "uniform", shares: Optional[np.ndarray] = None) -> float:
    if model == "uniform":
        return uniform_null_ll(dataset)
    if model == "market_share":
        return market_share_null_ll(dataset, shares)
    raise ConfigError(f"unknown null model {model!r}")
