"""
Two-layer dense network mapping socio-characteristics to latent variables,
and the one-hot individual-effect layer.

Layer 1 is ReLU over the intercept-augmented input [1, Q_n]; layer 2 is
linear over [1, hidden], so column 0 of each weight matrix is the intercept.
"""
import logging
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from utils.errors import ConfigError, ContractError

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class LatentNetWeights:
    W1: np.ndarray  # (H, M + 1)
    W2: np.ndarray  # (Z, H + 1)

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, dtype=float)
        self.W2 = np.asarray(self.W2, dtype=float)
        if self.W1.ndim != 2 or self.W2.ndim != 2 or self.W2.shape[1] != self.W1.shape[0] + 1:
            raise ContractError(f"inconsistent network shapes W1{self.W1.shape} W2{self.W2.shape}")

    @property
    def n_inputs(self) -> int:
        return self.W1.shape[1] - 1

    @property
    def n_hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def n_latent(self) -> int:
        return self.W2.shape[0]

    @classmethod
    def initialize(cls, n_inputs: int, n_hidden: int, n_latent: int, rng: np.random.Generator):
        """Uniform on [-0.1, 0.1] scaled by 1/sqrt(fan-in)"""
        W1 = rng.uniform(-0.1, 0.1, size=(n_hidden, n_inputs + 1)) / np.sqrt(n_inputs + 1)
        W2 = rng.uniform(-0.1, 0.1, size=(n_latent, n_hidden + 1)) / np.sqrt(n_hidden + 1)
        return cls(W1, W2)

    @classmethod
    def zeros(cls, n_inputs: int, n_hidden: int, n_latent: int):
        return cls(np.zeros((n_hidden, n_inputs + 1)), np.zeros((n_latent, n_hidden + 1)))


@dataclass(eq=False)
class OmegaWeights:
    """One weight per training individual, looked up by individual id.

    Ids outside the training set get the fallback value ("zero", or "mean"
    of the training weights); every such lookup is counted.
    """
    ids: np.ndarray
    w: np.ndarray
    fallback: str = "zero"
    fallback_hits: int = field(default=0, compare=False)

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=int)
        self.w = np.asarray(self.w, dtype=float)
        if self.ids.shape != self.w.shape:
            raise ContractError("omega ids and weights differ in length")
        if self.fallback not in ("zero", "mean"):
            raise ConfigError(f"unknown omega fallback {self.fallback!r}")
        self._position = {int(i): pos for pos, i in enumerate(self.ids)}

    def fallback_value(self) -> float:
        if self.fallback == "mean" and self.w.size:
            return float(self.w.mean())
        return 0.0

    def positions(self, ids) -> np.ndarray:
        """Row of each id in `w`, -1 for unseen ids"""
        return np.array([self._position.get(int(i), -1) for i in ids], dtype=int)


def _augment(X: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((X.shape[0], 1)), X])


def forward_latent_batch(Q: np.ndarray, weights: LatentNetWeights) -> Tuple[np.ndarray, dict]:
    """Latent variables for every row of Q (N x M) plus the cache backward needs"""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.shape[1] != weights.n_inputs:
        raise ContractError(f"network expects {weights.n_inputs} inputs, got {Q.shape[1]}")
    Xa = _augment(Q)
    pre = Xa @ weights.W1.T
    hidden = _augment(np.maximum(pre, 0.0))
    R = hidden @ weights.W2.T
    return R, {"Xa": Xa, "pre": pre, "hidden": hidden}


def forward_latent(Q_n, weights: LatentNetWeights) -> np.ndarray:
    """r_n for a single socio vector"""
    Q_n = np.asarray(Q_n, dtype=float)
    if Q_n.ndim != 1:
        raise ContractError("forward_latent takes one socio vector")
    R, _ = forward_latent_batch(Q_n[None, :], weights)
    return R[0]


def backward_latent_batch(cache: dict, weights: LatentNetWeights,
                          upstream: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients for W1, W2 given d(objective)/dR (N x Z), summed over rows"""
    upstream = np.atleast_2d(np.asarray(upstream, dtype=float))
    if upstream.shape != (cache["Xa"].shape[0], weights.n_latent):
        raise ContractError(f"upstream shape {upstream.shape} does not match the forward pass")
    dW2 = upstream.T @ cache["hidden"]
    d_hidden = upstream @ weights.W2[:, 1:]
    d_pre = d_hidden * (cache["pre"] > 0)  # subgradient 0 at exactly 0
    dW1 = d_pre.T @ cache["Xa"]
    return dW1, dW2


def backward_latent(Q_n, weights: LatentNetWeights, upstream) -> Tuple[np.ndarray, np.ndarray]:
    Q_n = np.asarray(Q_n, dtype=float)
    _, cache = forward_latent_batch(Q_n[None, :], weights)
    return backward_latent_batch(cache, weights, np.asarray(upstream, dtype=float)[None, :])


def forward_omega(n: int, weights: OmegaWeights) -> float:
    pos = weights._position.get(int(n))
    if pos is None:
        weights.fallback_hits += 1
        logger.warning("individual %d has no omega weight; using %s fallback", n, weights.fallback)
        return weights.fallback_value()
    return float(weights.w[pos])


def omega_batch(ids, weights: OmegaWeights) -> Tuple[np.ndarray, np.ndarray]:
    """ω for each id and the weight row each one reads (-1 where the fallback applied)"""
    positions = weights.positions(ids)
    unseen = positions < 0
    values = np.full(positions.size, weights.fallback_value())
    values[~unseen] = weights.w[positions[~unseen]]
    if unseen.any():
        weights.fallback_hits += int(unseen.sum())
        logger.debug("omega fallback (%s) applied to %d individuals", weights.fallback, int(unseen.sum()))
    return values.astype(float), positions
