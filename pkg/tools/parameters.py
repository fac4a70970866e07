"""
ParameterSet and PosteriorTable, random initialization, the flat layout of the
gradient-trained parameters, and the versioned JSON parameter file.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from tools.choice_model import ChoiceParams
from tools.data_model import Dataset, ModelSpec
from tools.latent_net import LatentNetWeights, OmegaWeights
from tools.measurement_model import MeasurementParams
from tools.membership_model import MembershipParams
from utils.errors import ContractError, LoadError
from utils.file_utils import load_json, save_json

logger = logging.getLogger(__name__)

PARAMETER_FORMAT_VERSION = 1
INIT_SCALE = 0.5


@dataclass(eq=False)
class ParameterSet:
    membership: MembershipParams
    choice: ChoiceParams
    latent: LatentNetWeights
    omega: OmegaWeights
    measurement: MeasurementParams
    spec_hash: str = ""

    def copy(self) -> "ParameterSet":
        return ParameterSet(
            membership=MembershipParams(self.membership.asc.copy(), self.membership.gamma.copy(),
                                        self.membership.delta.copy(), self.membership.b.copy()),
            choice=self.choice.copy(),
            latent=LatentNetWeights(self.latent.W1.copy(), self.latent.W2.copy()),
            omega=OmegaWeights(self.omega.ids.copy(), self.omega.w.copy(), self.omega.fallback),
            measurement=MeasurementParams(self.measurement.alpha.copy(), self.measurement.c.copy(),
                                          [t.copy() for t in self.measurement.tau]),
            spec_hash=self.spec_hash,
        )

    def validate(self, spec: Optional[ModelSpec] = None) -> None:
        """Every component invariant, plus the identification pins"""
        self.membership.check_reference()
        self.measurement.check()
        for name, arr in (("beta", self.choice.beta), ("W1", self.latent.W1), ("W2", self.latent.W2),
                          ("omega", self.omega.w), ("alpha", self.measurement.alpha),
                          ("c", self.measurement.c)):
            if not np.all(np.isfinite(arr)):
                raise ContractError(f"parameter block {name} has non-finite entries")
        if spec is not None and self.spec_hash != spec.fingerprint():
            raise ContractError("parameter set was estimated under a different model specification")


@dataclass
class PosteriorTable:
    gamma: np.ndarray                 # (N_train, K)
    ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    version: int = 0                  # EM cycle whose parameters produced it

    def validate(self) -> None:
        if np.any(self.gamma < 0) or np.any(self.gamma > 1):
            raise ContractError("posterior entries outside [0, 1]")
        if not np.allclose(self.gamma.sum(axis=1), 1.0, rtol=0, atol=1e-10):
            raise ContractError("posterior rows do not sum to 1")

    @property
    def class_shares(self) -> np.ndarray:
        return self.gamma.mean(axis=0)


def model_dims(dataset: Dataset, spec: ModelSpec) -> Dict[str, int]:
    return {
        "K": spec.k,
        "A": dataset.n_attributes,
        "M_membership": dataset.column_indices(spec.membership_columns).size,
        "M_network": dataset.column_indices(spec.network_columns).size,
        "Z": spec.z,
        "H": spec.h,
        "P": dataset.n_indicators,
    }


def initialize_parameters(dataset: Dataset, spec: ModelSpec, rng: np.random.Generator) -> ParameterSet:
    """Random starting point for one restart"""
    dims = model_dims(dataset, spec)
    K, Z = dims["K"], dims["Z"]
    membership = MembershipParams(
        asc=rng.uniform(-INIT_SCALE, INIT_SCALE, K),
        gamma=rng.uniform(-INIT_SCALE, INIT_SCALE, (K, dims["M_membership"])) * 0.1,
        delta=rng.uniform(-INIT_SCALE, INIT_SCALE, (K, Z)),
        b=rng.uniform(-INIT_SCALE, INIT_SCALE, K) if spec.use_omega else np.zeros(K),
    )
    for name in ("asc", "gamma", "delta", "b"):
        getattr(membership, name)[-1] = 0.0
    choice = ChoiceParams(rng.normal(0.0, INIT_SCALE, (K, dims["A"])))
    latent = LatentNetWeights.initialize(dims["M_network"], dims["H"], Z, rng)
    n_train = dataset.n_individuals
    omega_w = (rng.uniform(-0.1, 0.1, n_train) / np.sqrt(n_train)) if spec.use_omega else np.zeros(n_train)
    omega = OmegaWeights(dataset.ids.copy(), omega_w, spec.omega_fallback)
    measurement = MeasurementParams.initial(dataset.indicator_levels, Z)
    measurement.alpha = rng.uniform(-INIT_SCALE, INIT_SCALE, measurement.alpha.shape)
    if spec.use_omega:
        measurement.c = rng.uniform(-INIT_SCALE, INIT_SCALE, measurement.c.shape)
    return ParameterSet(membership, choice, latent, omega, measurement, spec.fingerprint())


# ---------------------------------------------------------------- flat layout

def gradient_block_keys(params: ParameterSet, spec: ModelSpec) -> List[str]:
    """Names of the arrays trained by the gradient M-step, in packing order"""
    keys = ["membership.asc", "membership.gamma"]
    if spec.z > 0:
        keys += ["membership.delta", "latent.W1", "latent.W2"]
    if spec.use_omega:
        keys += ["membership.b", "omega.w"]
    if spec.uses_indicators:
        if spec.z > 0:
            keys.append("measurement.alpha")
        if spec.use_omega:
            keys.append("measurement.c")
        keys += [f"measurement.gaps.{p}" for p in range(params.measurement.n_indicators)]
    return keys


def _read(params: ParameterSet, key: str) -> np.ndarray:
    block, _, rest = key.partition(".")
    if block == "membership":
        return getattr(params.membership, rest)[:-1]
    if block == "latent":
        return getattr(params.latent, rest)
    if block == "omega":
        return params.omega.w
    if block == "choice":
        return params.choice.beta
    if rest.startswith("gaps."):
        return params.measurement.log_gaps()[int(rest[5:])]
    if rest.startswith("tau."):
        return params.measurement.tau[int(rest[4:])][1:]
    return getattr(params.measurement, rest)


def pack(params: ParameterSet, keys: List[str]) -> np.ndarray:
    parts = [_read(params, key).ravel() for key in keys]
    return np.concatenate(parts) if parts else np.zeros(0)


def unpack(vector: np.ndarray, template: ParameterSet, keys: List[str]) -> ParameterSet:
    """Copy of `template` with the arrays named by `keys` replaced from `vector`"""
    out = template.copy()
    gaps = out.measurement.log_gaps()
    gaps_changed = False
    offset = 0
    for key in keys:
        shape = _read(template, key).shape
        size = int(np.prod(shape))
        chunk = np.asarray(vector[offset:offset + size], dtype=float).reshape(shape)
        offset += size
        block, _, rest = key.partition(".")
        if block == "membership":
            getattr(out.membership, rest)[:-1] = chunk
        elif block == "latent":
            getattr(out.latent, rest)[...] = chunk
        elif block == "omega":
            out.omega.w[...] = chunk
        elif block == "choice":
            out.choice.beta[...] = chunk
        elif rest.startswith("gaps."):
            gaps[int(rest[5:])] = chunk
            gaps_changed = True
        elif rest.startswith("tau."):
            out.measurement.tau[int(rest[4:])][1:] = chunk
        else:
            getattr(out.measurement, rest)[...] = chunk
    if offset != vector.size:
        raise ContractError(f"packed vector has {vector.size} entries, layout expects {offset}")
    if gaps_changed:
        out.measurement = MeasurementParams.from_log_gaps(out.measurement.alpha, out.measurement.c, gaps)
    return out


def count_free_parameters(params: ParameterSet, spec: ModelSpec) -> int:
    """Unpinned scalars estimated under `spec` (choice betas included)"""
    return int(params.choice.beta.size + pack(params, gradient_block_keys(params, spec)).size)


# ---------------------------------------------------------------- file format

def _block(arr: np.ndarray) -> Dict:
    arr = np.asarray(arr)
    return {"shape": list(arr.shape), "values": arr.ravel().tolist()}


def _unblock(entry: Dict, path: Path, name: str, dtype=float) -> np.ndarray:
    try:
        values = np.asarray(entry["values"], dtype=dtype)
        return values.reshape(entry["shape"])
    except (KeyError, ValueError, TypeError) as exc:
        raise LoadError(path, 0, f"parameter block '{name}' malformed: {exc}") from exc


def parameters_to_dict(params: ParameterSet) -> Dict:
    blocks = {
        "membership.asc": _block(params.membership.asc),
        "membership.gamma": _block(params.membership.gamma),
        "membership.delta": _block(params.membership.delta),
        "membership.b": _block(params.membership.b),
        "choice.beta": _block(params.choice.beta),
        "latent.W1": _block(params.latent.W1),
        "latent.W2": _block(params.latent.W2),
        "omega.ids": _block(params.omega.ids),
        "omega.w": _block(params.omega.w),
        "measurement.alpha": _block(params.measurement.alpha),
        "measurement.c": _block(params.measurement.c),
    }
    for p, t in enumerate(params.measurement.tau):
        blocks[f"measurement.tau.{p}"] = _block(t)
    return {
        "format_version": PARAMETER_FORMAT_VERSION,
        "spec_hash": params.spec_hash,
        "omega_fallback": params.omega.fallback,
        "blocks": blocks,
    }


def parameters_from_dict(data: Dict, path: Path = Path("<memory>")) -> ParameterSet:
    if data.get("format_version") != PARAMETER_FORMAT_VERSION:
        raise LoadError(path, 0, f"unsupported parameter format version {data.get('format_version')}")
    blocks = data.get("blocks", {})

    def get(name, dtype=float):
        if name not in blocks:
            raise LoadError(path, 0, f"missing parameter block '{name}'")
        return _unblock(blocks[name], path, name, dtype)

    n_tau = sum(1 for name in blocks if name.startswith("measurement.tau."))
    return ParameterSet(
        membership=MembershipParams(get("membership.asc"), get("membership.gamma"),
                                    get("membership.delta"), get("membership.b")),
        choice=ChoiceParams(get("choice.beta")),
        latent=LatentNetWeights(get("latent.W1"), get("latent.W2")),
        omega=OmegaWeights(get("omega.ids", int), get("omega.w"), data.get("omega_fallback", "zero")),
        measurement=MeasurementParams(get("measurement.alpha"), get("measurement.c"),
                                      [get(f"measurement.tau.{p}") for p in range(n_tau)]),
        spec_hash=data.get("spec_hash", ""),
    )


def save_parameters(params: ParameterSet, filepath: Path) -> Path:
    save_json(parameters_to_dict(params), filepath)
    return Path(filepath)


def load_parameters(filepath: Path) -> ParameterSet:
    filepath = Path(filepath)
    if not filepath.exists():
        raise LoadError(filepath, 0, "parameter file not found")
    params = parameters_from_dict(load_json(filepath), filepath)
    params.validate()
    return params
