"""
Class membership model: V_nk = ASC_k + Q_n gamma_k + r_n delta_k + omega_n b_k
with the last class as the zero-utility reference, its class probabilities,
and the posterior-weighted cross-entropy objective used in the M-step.
"""
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from tools.latent_net import (LatentNetWeights, OmegaWeights, backward_latent_batch,
                              forward_latent_batch, omega_batch)
from tools.numerics import as_rows, log_softmax, softmax
from utils.errors import ContractError


@dataclass(eq=False)
class MembershipParams:
    asc: np.ndarray    # (K,)
    gamma: np.ndarray  # (K, M)
    delta: np.ndarray  # (K, Z)
    b: np.ndarray      # (K,)

    def __post_init__(self):
        self.asc = np.asarray(self.asc, dtype=float).reshape(-1)
        K = self.asc.size
        self.gamma = as_rows(self.gamma, K)
        self.delta = as_rows(self.delta, K)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.b.size != K:
            raise ContractError("membership b must have one entry per class")

    @property
    def n_classes(self) -> int:
        return self.asc.size

    @classmethod
    def zeros(cls, K: int, M: int, Z: int) -> "MembershipParams":
        return cls(np.zeros(K), np.zeros((K, M)), np.zeros((K, Z)), np.zeros(K))

    def check_reference(self) -> None:
        """The reference (last) class must carry exactly zero parameters"""
        if (self.asc[-1] != 0 or np.any(self.gamma[-1] != 0) or np.any(self.delta[-1] != 0)
                or self.b[-1] != 0):
            raise ContractError("reference class membership parameters drifted from zero")
        for name in ("asc", "gamma", "delta", "b"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ContractError(f"membership {name} has non-finite entries")


def _posterior_matrix(posteriors) -> np.ndarray:
    return np.asarray(getattr(posteriors, "gamma", posteriors), dtype=float)


def class_utilities(Q: np.ndarray, R: np.ndarray, omega: np.ndarray, params: MembershipParams) -> np.ndarray:
    """V (N x K) for rows of socio Q, latent R and individual effects omega"""
    Q = np.atleast_2d(Q)
    N = Q.shape[0]
    if Q.shape[1] != params.gamma.shape[1] or np.atleast_2d(R).shape != (N, params.delta.shape[1]):
        raise ContractError(f"membership inputs Q{Q.shape} R{np.shape(R)} do not match parameters "
                            f"gamma{params.gamma.shape} delta{params.delta.shape}")
    return (params.asc[None, :] + Q @ params.gamma.T + np.atleast_2d(R) @ params.delta.T
            + np.asarray(omega, dtype=float).reshape(N, 1) * params.b[None, :])


def class_probs(Q_n, r_n, omega_n: float, params: MembershipParams) -> np.ndarray:
    params.check_reference()
    V = class_utilities(np.asarray(Q_n, dtype=float)[None, :], np.asarray(r_n, dtype=float)[None, :],
                        np.array([omega_n]), params)
    return softmax(V[0])


def class_log_probs(Q, R, omega, params: MembershipParams) -> np.ndarray:
    params.check_reference()
    return log_softmax(class_utilities(Q, R, omega, params), axis=1)


@dataclass
class MembershipGradient:
    value: float
    params: MembershipParams   # reference row zero
    dR: np.ndarray             # (N, Z) upstream for the network
    domega: np.ndarray         # (N,) upstream for the omega layer


def membership_terms(Q, R, omega, posteriors, params: MembershipParams) -> MembershipGradient:
    """sum_n sum_k gamma_nk log P(k | n) and its gradients"""
    post = _posterior_matrix(posteriors)
    logp = class_log_probs(Q, R, omega, params)
    value = float(np.sum(post * logp))
    G = post - np.exp(logp)  # dJ/dV
    grad = MembershipParams(G.sum(axis=0), G.T @ Q, G.T @ R, G.T @ omega)
    for name in ("asc", "gamma", "delta", "b"):
        getattr(grad, name)[-1] = 0.0
    return MembershipGradient(value, grad, G @ params.delta, G @ params.b)


@dataclass
class MembershipObjective:
    value: float
    params: MembershipParams
    dW1: np.ndarray
    dW2: np.ndarray
    domega_w: np.ndarray  # aligned with omega_weights.w


def membership_mstep_objective(dataset, posteriors, params: MembershipParams, latent: LatentNetWeights,
                               omega_weights: OmegaWeights,
                               membership_columns: Optional[Sequence[str]] = None,
                               network_columns: Optional[Sequence[str]] = None) -> MembershipObjective:
    """Posterior-weighted class log-likelihood with gradients through the network and omega layer"""
    post = _posterior_matrix(posteriors)
    if post.shape != (dataset.n_individuals, params.n_classes):
        raise ContractError(f"posteriors {post.shape} do not match {dataset.n_individuals} individuals")
    Qm = dataset.socio_matrix(membership_columns)
    R, cache = forward_latent_batch(dataset.socio_matrix(network_columns), latent)
    omega, positions = omega_batch(dataset.ids, omega_weights)
    terms = membership_terms(Qm, R, omega, post, params)
    dW1, dW2 = backward_latent_batch(cache, latent, terms.dR)
    domega_w = np.zeros_like(omega_weights.w)
    seen = positions >= 0
    np.add.at(domega_w, positions[seen], terms.domega[seen])
    return MembershipObjective(terms.value, terms.params, dW1, dW2, domega_w)
