"""
Ordered-logit measurement model for Likert indicators.

U_pn = r_n alpha_p + c_p omega_n + error, observed level l when
tau_{l-1} < U_pn < tau_l. Each indicator's first threshold is pinned at 0
and the rest are parameterized by log-gaps so that every iterate stays
strictly increasing.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from tools.latent_net import (LatentNetWeights, OmegaWeights, backward_latent_batch,
                              forward_latent_batch, omega_batch)
from tools.numerics import as_rows, interval_probs, logistic_density, ordinal_probs
from utils.errors import ContractError, NumericDomainError

_TINY = 1e-300


@dataclass(eq=False)
class MeasurementParams:
    alpha: np.ndarray       # (P, Z)
    c: np.ndarray           # (P,)
    tau: List[np.ndarray]   # tau[p] has L_p - 1 strictly increasing entries, tau[p][0] == 0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        self.alpha = as_rows(self.alpha, self.c.size)
        self.tau = [np.asarray(t, dtype=float).reshape(-1) for t in self.tau]
        if len(self.tau) != self.c.size:
            raise ContractError("one threshold vector per indicator required")

    @property
    def n_indicators(self) -> int:
        return self.c.size

    @property
    def levels(self) -> np.ndarray:
        return np.array([t.size + 1 for t in self.tau], dtype=int)

    def check(self) -> None:
        for p, t in enumerate(self.tau):
            if t.size and t[0] != 0.0:
                raise ContractError(f"indicator {p}: first threshold must be pinned at 0, found {t[0]}")
            if np.any(np.diff(t) <= 0) or not np.all(np.isfinite(t)):
                raise NumericDomainError(f"indicator {p}: thresholds not strictly increasing: {t}")

    def log_gaps(self) -> List[np.ndarray]:
        return [np.log(np.diff(t)) for t in self.tau]

    @classmethod
    def from_log_gaps(cls, alpha, c, gaps: Sequence[np.ndarray]) -> "MeasurementParams":
        tau = [np.concatenate(([0.0], np.cumsum(np.exp(g)))) for g in gaps]
        return cls(alpha, c, tau)

    @classmethod
    def initial(cls, levels: Sequence[int], Z: int, spacing: float = 1.0) -> "MeasurementParams":
        """Zero loadings and equally spaced thresholds 0, s, 2s, ..."""
        tau = [np.arange(int(L) - 1, dtype=float) * spacing for L in levels]
        return cls(np.zeros((len(tau), Z)), np.zeros(len(tau)), tau)

    def padded_cuts(self) -> np.ndarray:
        """(P, Lmax + 1) cut points [-inf, tau_1..tau_{L_p-1}, +inf, +inf...]"""
        Lmax = int(self.levels.max()) if self.tau else 2
        cuts = np.full((self.n_indicators, Lmax + 1), np.inf)
        cuts[:, 0] = -np.inf
        for p, t in enumerate(self.tau):
            cuts[p, 1:t.size + 1] = t
        return cuts


def indicator_utilities(R: np.ndarray, omega: np.ndarray, params: MeasurementParams) -> np.ndarray:
    R = np.atleast_2d(R)
    if R.shape[1] != params.alpha.shape[1]:
        raise ContractError(f"latent width {R.shape[1]} does not match loadings {params.alpha.shape}")
    return R @ params.alpha.T + np.asarray(omega, dtype=float).reshape(-1, 1) * params.c[None, :]


def indicator_probs(r_n, omega_n: float, p: int, params: MeasurementParams) -> np.ndarray:
    V = float(np.asarray(r_n, dtype=float) @ params.alpha[p] + params.c[p] * omega_n)
    return ordinal_probs(V, params.tau[p])


def level_probs(R, omega, params: MeasurementParams) -> np.ndarray:
    """(N, P, Lmax) probability of each level; zero beyond an indicator's L_p"""
    V = indicator_utilities(R, omega, params)
    cuts = params.padded_cuts()
    lower = cuts[None, :, :-1] - V[:, :, None]
    upper = cuts[None, :, 1:] - V[:, :, None]
    probs = interval_probs(lower, upper)
    return np.where(np.isinf(lower) & (lower > 0), 0.0, probs)


@dataclass
class MeasurementGradient:
    value: float
    alpha: np.ndarray
    c: np.ndarray
    tau: List[np.ndarray]    # d/d tau, first entry (pinned) included for reporting
    gaps: List[np.ndarray]   # d/d log-gaps
    dR: np.ndarray
    domega: np.ndarray


def measurement_terms(indicators: np.ndarray, R, omega, params: MeasurementParams) -> MeasurementGradient:
    """sum_n sum_p log P(I_pn = observed level) and its gradients"""
    indicators = np.asarray(indicators, dtype=int)
    N, P = indicators.shape
    if P != params.n_indicators:
        raise ContractError(f"{P} indicator columns, {params.n_indicators} measurement equations")
    if np.any(indicators < 1) or np.any(indicators > params.levels[None, :]):
        raise ContractError("indicator responses missing or outside 1..L_p")
    V = indicator_utilities(R, omega, params)
    cuts = params.padded_cuts()
    rows = np.arange(P)[None, :]
    lower = cuts[rows, indicators - 1] - V
    upper = cuts[rows, indicators] - V
    prob = np.maximum(interval_probs(lower, upper), _TINY)
    value = float(np.sum(np.log(prob)))

    f_lower = logistic_density(lower) / prob
    f_upper = logistic_density(upper) / prob
    dV = f_lower - f_upper  # (N, P)

    dcuts = np.zeros_like(cuts)
    p_index = np.broadcast_to(rows, indicators.shape)
    np.add.at(dcuts, (p_index, indicators), f_upper)
    np.add.at(dcuts, (p_index, indicators - 1), -f_lower)
    tau_grads, gap_grads = [], []
    for p, t in enumerate(params.tau):
        d_tau = dcuts[p, 1:t.size + 1].copy()
        tau_grads.append(d_tau)
        gaps = np.diff(t)
        tail = np.cumsum(d_tau[1:][::-1])[::-1]
        gap_grads.append(gaps * tail)

    return MeasurementGradient(
        value=value,
        alpha=dV.T @ R,
        c=dV.T @ omega,
        tau=tau_grads,
        gaps=gap_grads,
        dR=dV @ params.alpha,
        domega=dV @ params.c,
    )


@dataclass
class MeasurementObjective:
    value: float
    grad: MeasurementGradient
    dW1: np.ndarray
    dW2: np.ndarray
    domega_w: np.ndarray


def measurement_mstep_objective(dataset, latent: LatentNetWeights, omega_weights: OmegaWeights,
                                params: MeasurementParams,
                                network_columns: Optional[Sequence[str]] = None) -> MeasurementObjective:
    """Indicator log-likelihood with gradients through the network and omega layer"""
    arrays = dataset.arrays
    if not arrays.has_indicators.all():
        raise ContractError("measurement objective needs indicator responses for every individual")
    R, cache = forward_latent_batch(dataset.socio_matrix(network_columns), latent)
    omega, positions = omega_batch(dataset.ids, omega_weights)
    grad = measurement_terms(arrays.indicators, R, omega, params)
    dW1, dW2 = backward_latent_batch(cache, latent, grad.dR)
    domega_w = np.zeros_like(omega_weights.w)
    seen = positions >= 0
    np.add.at(domega_w, positions[seen], grad.domega[seen])
    return MeasurementObjective(grad.value, grad, dW1, dW2, domega_w)


def predicted_levels(R, omega, params: MeasurementParams) -> np.ndarray:
    """Most probable level (1-based) per individual and indicator; ties go to the lower level"""
    return np.argmax(level_probs(R, omega, params), axis=2) + 1


def indicator_accuracy(dataset, latent: LatentNetWeights, omega_weights: OmegaWeights,
                       params: MeasurementParams, network_columns: Optional[Sequence[str]] = None) -> float:
    """Share of (individual, indicator) pairs whose most probable level matches the response"""
    arrays = dataset.arrays
    rows = np.flatnonzero(arrays.has_indicators)
    if rows.size == 0 or params.n_indicators == 0:
        return float("nan")
    R, _ = forward_latent_batch(dataset.socio_matrix(network_columns)[rows], latent)
    omega, _ = omega_batch(arrays.ids[rows], omega_weights)
    predicted = predicted_levels(R, omega, params)
    return float(np.mean(predicted == arrays.indicators[rows]))
