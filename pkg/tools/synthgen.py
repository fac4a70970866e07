"""
Synthetic populations drawn from a fully specified generating model.

Every individual gets socio-characteristics from configured marginals, latent
variables from the network, an individual effect omega ~ Normal(0, sigma),
a class from the membership logit, ordinal indicator responses and one choice
per task. Each individual draws from its own child of a SeedSequence, so a
seed reproduces the dataset exactly.
"""
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from tools.choice_model import ChoiceParams, alt_probs
from tools.data_model import ChoiceTask, Dataset, Individual, ModelSpec
from tools.latent_net import LatentNetWeights, OmegaWeights, forward_latent
from tools.measurement_model import MeasurementParams, indicator_probs
from tools.membership_model import MembershipParams, class_probs
from tools.parameters import ParameterSet
from utils.errors import ConfigError, ContractError, LoadError, NumericDomainError
from utils.file_utils import ensure_directory

logger = logging.getLogger(__name__)

TRUTH_FILENAME = "truth.csv"

DEFAULT_SOCIO = [
    {"name": "age_group", "kind": "categorical", "values": [0, 1, 2], "probs": [0.3, 0.4, 0.3]},
    {"name": "female", "kind": "categorical", "values": [0, 1], "probs": [0.5, 0.5]},
    {"name": "car_owner", "kind": "categorical", "values": [0, 1], "probs": [0.6, 0.4]},
    {"name": "income", "kind": "uniform", "low": 0.0, "high": 1.0},
]


@dataclass
class GeneratorConfig:
    """Population and survey design of a synthetic sample"""
    n_individuals: int = 500
    n_tasks: int = 3
    n_alternatives: int = 3
    n_generic_attributes: int = 2
    alternative_constants: bool = True   # asc_1..asc_{J-1}; the last alternative is the reference
    outside_option: bool = False          # last alternative has an all-zero attribute row
    n_indicators: int = 4
    indicator_levels: int = 5
    sigma_omega: float = 1.0
    socio: List[Dict[str, Any]] = field(default_factory=lambda: [dict(s) for s in DEFAULT_SOCIO])

    def __post_init__(self):
        if self.n_individuals < 1 or self.n_tasks < 1:
            raise ConfigError("n_individuals and n_tasks must be positive")
        if self.n_alternatives < 2:
            raise ConfigError("a choice task needs at least 2 alternatives")
        if self.indicator_levels < 2:
            raise ConfigError("indicators need at least 2 levels")
        if self.sigma_omega < 0:
            raise ConfigError("sigma_omega must be non-negative")
        for column in self.socio:
            kind = column.get("kind")
            if kind == "categorical":
                probs = np.asarray(column.get("probs", []), dtype=float)
                if probs.size != len(column.get("values", [])) or probs.size == 0 \
                        or np.any(probs < 0) or not np.isclose(probs.sum(), 1.0):
                    raise ConfigError(f"socio column {column.get('name')}: values and probs must match "
                                      f"and probs must sum to 1")
            elif kind == "uniform":
                if not column.get("low", 0.0) < column.get("high", 1.0):
                    raise ConfigError(f"socio column {column.get('name')}: need low < high")
            else:
                raise ConfigError(f"socio column {column.get('name')}: unknown kind {kind!r}")

    @classmethod
    def from_dict(cls, values: Optional[Dict]) -> "GeneratorConfig":
        values = dict(values or {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown simulate keys: {sorted(unknown)}")
        return cls(**values)

    @property
    def socio_names(self) -> List[str]:
        return [column["name"] for column in self.socio]

    @property
    def attribute_names(self) -> List[str]:
        names = []
        if self.alternative_constants:
            names += [f"asc_{j + 1}" for j in range(self.n_alternatives - 1)]
        names += [f"x{g + 1}" for g in range(self.n_generic_attributes)]
        return names

    @property
    def indicator_texts(self) -> List[str]:
        return [f"q{p + 1}" for p in range(self.n_indicators)]


@dataclass
class Truth:
    """Generating draws kept next to the dataset for scoring; estimators never read them"""
    ids: np.ndarray
    classes: np.ndarray   # 0-based
    R: np.ndarray         # (N, Z)
    omega: np.ndarray     # (N,)

    @property
    def class_shares(self) -> np.ndarray:
        K = int(self.classes.max()) + 1 if self.classes.size else 0
        return np.bincount(self.classes, minlength=K) / max(self.classes.size, 1)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"id": self.ids, "true_class": self.classes + 1})
        for z in range(self.R.shape[1]):
            frame[f"r_{z + 1}"] = self.R[:, z]
        frame["omega"] = self.omega
        return frame

    def subset_for(self, ids: Sequence[int]) -> "Truth":
        lookup = {int(i): row for row, i in enumerate(self.ids)}
        rows = np.array([lookup[int(i)] for i in ids], dtype=int)
        return Truth(self.ids[rows], self.classes[rows], self.R[rows], self.omega[rows])


def save_truth(truth: Truth, filepath: Path) -> Path:
    filepath = Path(filepath)
    ensure_directory(filepath.parent)
    truth.to_frame().to_csv(filepath, index=False)
    return filepath


def load_truth(filepath: Path) -> Truth:
    filepath = Path(filepath)
    if not filepath.exists():
        raise LoadError(filepath, 0, "truth file not found")
    frame = pd.read_csv(filepath)
    if "id" not in frame.columns or "true_class" not in frame.columns:
        raise LoadError(filepath, 1, "truth file needs 'id' and 'true_class' columns")
    r_cols = sorted((c for c in frame.columns if c.startswith("r_")), key=lambda c: int(c[2:]))
    R = frame[r_cols].to_numpy(dtype=float) if r_cols else np.zeros((len(frame), 0))
    omega = frame["omega"].to_numpy(dtype=float) if "omega" in frame.columns else np.zeros(len(frame))
    return Truth(frame["id"].to_numpy(dtype=int), frame["true_class"].to_numpy(dtype=int) - 1, R, omega)


# ---------------------------------------------------------------- draws

def draw_categorical(rng: np.random.Generator, probs, size=None):
    """Index drawn with the given probabilities (closed-form draw, no Gumbel noise needed)"""
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 1 or np.any(probs < 0) or not np.isclose(probs.sum(), 1.0):
        raise NumericDomainError(f"invalid probability vector {probs}")
    return rng.choice(probs.size, size=size, p=probs / probs.sum())


def _draw_socio(rng: np.random.Generator, config: GeneratorConfig) -> np.ndarray:
    values = []
    for column in config.socio:
        if column["kind"] == "categorical":
            values.append(float(column["values"][draw_categorical(rng, column["probs"])]))
        else:
            values.append(float(rng.uniform(column.get("low", 0.0), column.get("high", 1.0))))
    return np.array(values)


def _draw_alternatives(rng: np.random.Generator, config: GeneratorConfig) -> np.ndarray:
    J, G = config.n_alternatives, config.n_generic_attributes
    blocks = []
    if config.alternative_constants:
        blocks.append(np.eye(J)[:, :J - 1])
    blocks.append(rng.normal(0.0, 1.0, size=(J, G)))
    X = np.hstack(blocks)
    if config.outside_option:
        X[-1] = 0.0
    return X


# ---------------------------------------------------------------- generating parameters

def default_generating_parameters(spec: ModelSpec, config: GeneratorConfig, seed: int = 0) -> ParameterSet:
    """A well-separated generating model for `spec` on the configured design"""
    rng = np.random.default_rng(seed)
    K, Z, H = spec.k, spec.z, spec.h
    M_membership = len(spec.membership_columns) if spec.membership_columns is not None else len(config.socio)
    M_network = len(spec.network_columns) if spec.network_columns is not None else len(config.socio)
    A = len(config.attribute_names)
    n_asc = config.n_alternatives - 1 if config.alternative_constants else 0

    beta = np.zeros((K, A))
    for k in range(K):
        sign = 1.0 if k % 2 == 0 else -1.0
        beta[k, :n_asc] = 0.5 * sign * np.linspace(1.0, -1.0, n_asc) if n_asc > 1 else 0.5 * sign
        for g in range(config.n_generic_attributes):
            beta[k, n_asc + g] = sign * (1.5 - 0.5 * g) + 0.5 * k
    # class weight falls linearly to 0 at the reference class
    scale = (K - 1 - np.arange(K)) / max(K - 1, 1)
    membership = MembershipParams(
        asc=np.zeros(K),
        gamma=rng.normal(0.0, 0.3, (K, M_membership)),
        delta=np.outer(scale, np.linspace(1.5, -1.5, max(Z, 1))[:Z]),
        b=scale.copy() if spec.use_omega else np.zeros(K),
    )
    membership.gamma[-1] = 0.0
    latent = LatentNetWeights(rng.normal(0.0, 1.0, (H, M_network + 1)) / np.sqrt(M_network + 1),
                              rng.normal(0.0, 1.0, (Z, H + 1)) / np.sqrt(H + 1))
    P, L = config.n_indicators, config.indicator_levels
    measurement = MeasurementParams(
        alpha=rng.choice([-1.0, 1.0], size=(P, Z)) * rng.uniform(0.8, 1.5, (P, Z)),
        c=np.full(P, 0.5 if spec.use_omega else 0.0),
        tau=[np.arange(L - 1, dtype=float) * 0.8 for _ in range(P)],
    )
    omega = OmegaWeights(np.zeros(0, dtype=int), np.zeros(0))
    return ParameterSet(membership, ChoiceParams(beta), latent, omega, measurement, spec.fingerprint())


def _check_generating_parameters(spec: ModelSpec, params: ParameterSet, config: GeneratorConfig) -> None:
    try:
        params.validate()
    except (ContractError, NumericDomainError) as exc:
        raise ConfigError(f"invalid generating parameters: {exc}") from exc
    M_network = len(spec.network_columns) if spec.network_columns is not None else len(config.socio)
    M_membership = len(spec.membership_columns) if spec.membership_columns is not None else len(config.socio)
    problems = []
    if params.choice.beta.shape != (spec.k, len(config.attribute_names)):
        problems.append(f"beta {params.choice.beta.shape}, design needs {(spec.k, len(config.attribute_names))}")
    if params.membership.n_classes != spec.k:
        problems.append(f"{params.membership.n_classes} membership classes for k={spec.k}")
    if params.membership.gamma.shape[1] != M_membership:
        problems.append(f"gamma has {params.membership.gamma.shape[1]} columns, {M_membership} membership inputs")
    if params.latent.n_inputs != M_network or params.latent.n_latent != spec.z:
        problems.append(f"network maps {params.latent.n_inputs} -> {params.latent.n_latent}, "
                        f"expected {M_network} -> {spec.z}")
    if params.measurement.n_indicators != config.n_indicators:
        problems.append(f"{params.measurement.n_indicators} measurement equations for "
                        f"{config.n_indicators} indicators")
    elif config.n_indicators and np.any(params.measurement.levels != config.indicator_levels):
        problems.append("threshold counts do not match indicator_levels")
    if problems:
        raise ConfigError("invalid generating parameters: " + "; ".join(problems))


def generate(spec: ModelSpec, params: ParameterSet, config: GeneratorConfig,
             seed: int) -> Tuple[Dataset, Truth]:
    """Draw a dataset from the generating model; identical seeds give identical datasets"""
    _check_generating_parameters(spec, params, config)
    socio_names = config.socio_names
    lookup = {name: i for i, name in enumerate(socio_names)}
    try:
        net_cols = [lookup[n] for n in spec.network_columns] if spec.network_columns is not None \
            else list(range(len(socio_names)))
        mem_cols = [lookup[n] for n in spec.membership_columns] if spec.membership_columns is not None \
            else list(range(len(socio_names)))
    except KeyError as exc:
        raise ConfigError(f"unknown socio column {exc}") from exc

    children = np.random.SeedSequence(seed).spawn(config.n_individuals)
    individuals, classes, latent, omegas = [], [], [], []
    for n, child in enumerate(children):
        rng = np.random.default_rng(child)
        socio = _draw_socio(rng, config)
        r_n = forward_latent(socio[net_cols], params.latent)
        omega_n = float(rng.normal(0.0, config.sigma_omega)) if spec.use_omega else 0.0
        k = int(draw_categorical(rng, class_probs(socio[mem_cols], r_n, omega_n, params.membership)))
        responses = None
        if config.n_indicators:
            responses = np.array([
                int(draw_categorical(rng, indicator_probs(r_n, omega_n, p, params.measurement))) + 1
                for p in range(config.n_indicators)])
        tasks = []
        for _ in range(config.n_tasks):
            X = _draw_alternatives(rng, config)
            chosen = int(draw_categorical(rng, alt_probs(ChoiceTask(X, 0), params.choice.beta[k])))
            tasks.append(ChoiceTask(X, chosen))
        individuals.append(Individual(n, socio, responses, tasks))
        classes.append(k)
        latent.append(r_n)
        omegas.append(omega_n)

    dataset = Dataset(
        individuals=individuals,
        indicator_levels=np.full(config.n_indicators, config.indicator_levels, dtype=int),
        attribute_names=config.attribute_names,
        socio_names=socio_names,
        indicator_texts=config.indicator_texts,
    )
    truth = Truth(
        ids=dataset.ids.copy(),
        classes=np.array(classes, dtype=int),
        R=np.array(latent, dtype=float).reshape(config.n_individuals, spec.z),
        omega=np.array(omegas, dtype=float),
    )
    logger.info("Generated %d individuals x %d tasks (K=%d, Z=%d), class shares %s",
                config.n_individuals, config.n_tasks, spec.k, spec.z,
                np.round(truth.class_shares, 3).tolist())
    return dataset, truth
