"""
Dataset and model-specification types, the comma-separated file loaders and
writers, and the train/test split.

File formats
------------
individuals : header ``id,<socio columns...>,ind_<label>...``. Columns whose
    name starts with ``ind_`` hold ordinal indicator responses; a row either
    fills every indicator cell or leaves all of them empty.
tasks : header ``id,task,alternative,<attribute columns...>,chosen``. One
    row per alternative; ``chosen`` is 1 on exactly one row per task.
"""
import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import sparse

from utils.config import BFGS_DEFAULTS, EARLY_STOP_DEFAULTS, MSTEP_DEFAULTS
from utils.errors import ConfigError, ContractError, LoadError, RangeError, SchemaError
from utils.file_utils import ensure_directory

logger = logging.getLogger(__name__)

INDICATOR_PREFIX = "ind_"
TASK_KEY_COLUMNS = ("id", "task", "alternative")
CHOSEN_COLUMN = "chosen"
DEFAULT_LIKERT_LEVELS = 5
SEPARATORS = {"csv": ",", "tsv": "\t"}


@dataclass(eq=False)
class ChoiceTask:
    """One choice situation: J attribute vectors and the chosen index"""
    alternatives: np.ndarray
    chosen: int

    def __post_init__(self):
        self.alternatives = np.asarray(self.alternatives, dtype=float)
        if self.alternatives.ndim != 2:
            raise SchemaError("alternatives must be a J x A matrix")
        if not 0 <= self.chosen < self.alternatives.shape[0]:
            raise RangeError(f"chosen index {self.chosen} outside [0, {self.alternatives.shape[0]})")


@dataclass(eq=False)
class Individual:
    """One respondent. Generated data numbers ids 0..N-1; loaded files keep their own integer keys"""
    id: int
    socio: np.ndarray
    indicators: Optional[np.ndarray] = None
    tasks: List[ChoiceTask] = field(default_factory=list)

    def __post_init__(self):
        self.socio = np.asarray(self.socio, dtype=float)
        if self.indicators is not None:
            self.indicators = np.asarray(self.indicators, dtype=int)


@dataclass(frozen=True)
class DatasetArrays:
    """Flat numpy view of a Dataset used by every likelihood kernel"""
    ids: np.ndarray               # (N,)
    socio: np.ndarray             # (N, M)
    indicators: np.ndarray        # (N, P) levels 1..L_p, 0 when absent
    has_indicators: np.ndarray    # (N,)
    task_owner: np.ndarray        # (S,) row index of the individual owning each task
    task_X: np.ndarray            # (S, J, A)
    task_chosen: np.ndarray       # (S,)
    panel: sparse.csr_matrix      # (N, S) owner incidence for per-individual sums
    tasks_per_individual: np.ndarray


@dataclass(eq=False)
class Dataset:
    individuals: List[Individual]
    indicator_levels: np.ndarray
    attribute_names: List[str]
    socio_names: List[str]
    indicator_texts: List[str]

    def __post_init__(self):
        self.indicator_levels = np.asarray(self.indicator_levels, dtype=int).reshape(-1)
        self.validate()

    # ------------------------------------------------------------------ sizes
    @property
    def n_individuals(self) -> int:
        return len(self.individuals)

    @property
    def n_socio(self) -> int:
        return len(self.socio_names)

    @property
    def n_attributes(self) -> int:
        return len(self.attribute_names)

    @property
    def n_alternatives(self) -> int:
        return self.individuals[0].tasks[0].alternatives.shape[0]

    @property
    def n_indicators(self) -> int:
        return int(self.indicator_levels.size)

    @property
    def n_observations(self) -> int:
        return sum(len(ind.tasks) for ind in self.individuals)

    @property
    def ids(self) -> np.ndarray:
        return self.arrays.ids

    def validate(self) -> None:
        """Check every type invariant; raises SchemaError / RangeError"""
        if not self.individuals:
            raise SchemaError("dataset holds no individuals")
        M, A, P = self.n_socio, self.n_attributes, self.n_indicators
        if len(self.indicator_texts) != P:
            raise SchemaError(f"{len(self.indicator_texts)} indicator labels for {P} indicators")
        if np.any(self.indicator_levels < 2):
            raise RangeError("every indicator needs at least 2 levels")
        J = None
        seen = set()
        for ind in self.individuals:
            if ind.id in seen:
                raise SchemaError(f"duplicate individual id {ind.id}")
            seen.add(ind.id)
            if ind.socio.shape != (M,):
                raise SchemaError(f"individual {ind.id}: {ind.socio.size} socio values, expected {M}")
            if not np.all(np.isfinite(ind.socio)):
                raise RangeError(f"individual {ind.id}: non-finite socio value")
            if ind.indicators is not None:
                if ind.indicators.shape != (P,):
                    raise SchemaError(f"individual {ind.id}: {ind.indicators.size} indicators, expected {P}")
                bad = np.flatnonzero((ind.indicators < 1) | (ind.indicators > self.indicator_levels))
                if bad.size:
                    p = int(bad[0])
                    raise RangeError(
                        f"individual {ind.id}: indicator '{self.indicator_texts[p]}' response "
                        f"{ind.indicators[p]} outside 1..{self.indicator_levels[p]}")
            if not ind.tasks:
                raise SchemaError(f"individual {ind.id} has no choice tasks")
            for task in ind.tasks:
                J = task.alternatives.shape[0] if J is None else J
                if task.alternatives.shape != (J, A):
                    raise SchemaError(
                        f"individual {ind.id}: task shape {task.alternatives.shape}, expected {(J, A)}")

    @cached_property
    def arrays(self) -> DatasetArrays:
        N, P = self.n_individuals, self.n_indicators
        ids = np.array([ind.id for ind in self.individuals], dtype=int)
        socio = np.vstack([ind.socio for ind in self.individuals]).reshape(N, self.n_socio)
        indicators = np.zeros((N, P), dtype=int)
        has = np.zeros(N, dtype=bool)
        owner, X, chosen = [], [], []
        for row, ind in enumerate(self.individuals):
            if ind.indicators is not None:
                indicators[row] = ind.indicators
                has[row] = True
            for task in ind.tasks:
                owner.append(row)
                X.append(task.alternatives)
                chosen.append(task.chosen)
        owner = np.array(owner, dtype=int)
        S = owner.size
        panel = sparse.csr_matrix((np.ones(S), (owner, np.arange(S))), shape=(N, S))
        return DatasetArrays(
            ids=ids,
            socio=socio,
            indicators=indicators,
            has_indicators=has,
            task_owner=owner,
            task_X=np.stack(X),
            task_chosen=np.array(chosen, dtype=int),
            panel=panel,
            tasks_per_individual=np.bincount(owner, minlength=N),
        )

    def column_indices(self, names: Optional[Sequence[str]]) -> np.ndarray:
        """Socio column positions for `names` (all columns when None)"""
        if names is None:
            return np.arange(self.n_socio)
        lookup = {name: i for i, name in enumerate(self.socio_names)}
        missing = [n for n in names if n not in lookup]
        if missing:
            raise ConfigError(f"unknown socio columns: {missing}")
        return np.array([lookup[n] for n in names], dtype=int)

    def socio_matrix(self, names: Optional[Sequence[str]] = None) -> np.ndarray:
        return self.arrays.socio[:, self.column_indices(names)]

    def subset(self, rows: Sequence[int]) -> "Dataset":
        """New dataset holding the individuals at positions `rows` (original ids kept)"""
        return Dataset(
            individuals=[self.individuals[i] for i in rows],
            indicator_levels=self.indicator_levels.copy(),
            attribute_names=list(self.attribute_names),
            socio_names=list(self.socio_names),
            indicator_texts=list(self.indicator_texts),
        )

    def without_indicators(self) -> "Dataset":
        """Copy with every indicator response dropped (prediction-time view)"""
        return Dataset(
            individuals=[Individual(ind.id, ind.socio, None, ind.tasks) for ind in self.individuals],
            indicator_levels=self.indicator_levels.copy(),
            attribute_names=list(self.attribute_names),
            socio_names=list(self.socio_names),
            indicator_texts=list(self.indicator_texts),
        )

    def equals(self, other: "Dataset") -> bool:
        if (self.socio_names != other.socio_names or self.attribute_names != other.attribute_names
                or self.indicator_texts != other.indicator_texts
                or not np.array_equal(self.indicator_levels, other.indicator_levels)
                or self.n_individuals != other.n_individuals):
            return False
        a, b = self.arrays, other.arrays
        return (np.array_equal(a.ids, b.ids) and np.array_equal(a.socio, b.socio)
                and np.array_equal(a.indicators, b.indicators)
                and np.array_equal(a.has_indicators, b.has_indicators)
                and np.array_equal(a.task_owner, b.task_owner)
                and np.array_equal(a.task_X, b.task_X)
                and np.array_equal(a.task_chosen, b.task_chosen))


@dataclass
class ModelSpec:
    """Hyperparameters and estimation settings; keys match the config file"""
    k: int = 2
    z: int = 2
    h: int = 8
    use_omega: bool = True
    em_iterations: int = 15
    restarts: int = 1
    seed: int = 0
    choice_tol: float = BFGS_DEFAULTS["choice_tol"]
    choice_max_iter: int = BFGS_DEFAULTS["choice_max_iter"]
    gradient_step: float = MSTEP_DEFAULTS["gradient_step"]
    gradient_steps: int = MSTEP_DEFAULTS["gradient_steps"]
    gradient_tol: float = MSTEP_DEFAULTS["gradient_tol"]
    early_stop: bool = False
    early_stop_tol: float = EARLY_STOP_DEFAULTS["early_stop_tol"]
    early_stop_patience: int = EARLY_STOP_DEFAULTS["early_stop_patience"]
    omega_fallback: str = "zero"
    membership_columns: Optional[List[str]] = None
    network_columns: Optional[List[str]] = None
    null_model: str = "uniform"

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.z < 0:
            raise ConfigError(f"z must be >= 0, got {self.z}")
        if self.h < 1:
            raise ConfigError(f"h must be >= 1, got {self.h}")
        if self.k == 1 and (self.z > 0 or self.use_omega):
            raise ConfigError("latent classes required: k must be >= 2 when z > 0 or use_omega is set")
        if self.em_iterations < 1 or self.restarts < 1:
            raise ConfigError("em_iterations and restarts must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be unsigned")
        if self.gradient_step <= 0 or self.gradient_steps < 0:
            raise ConfigError("gradient_step must be positive and gradient_steps non-negative")
        if self.omega_fallback not in ("zero", "mean"):
            raise ConfigError(f"omega_fallback must be 'zero' or 'mean', got {self.omega_fallback!r}")
        if self.null_model not in ("uniform", "market_share"):
            raise ConfigError(f"null_model must be 'uniform' or 'market_share', got {self.null_model!r}")

    @property
    def is_baseline(self) -> bool:
        """No latent variables and no individual effect: a plain LCCM"""
        return self.z == 0 and not self.use_omega

    @property
    def uses_indicators(self) -> bool:
        return not self.is_baseline

    @classmethod
    def from_dict(cls, values: Dict) -> "ModelSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        return cls(**values)

    def to_dict(self) -> Dict:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------- loading

def _read_table(path: Path, sep: str) -> pd.DataFrame:
    if not path.exists():
        raise LoadError(path, 0, "file not found")
    try:
        frame = pd.read_csv(path, sep=sep, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.ParserError as exc:
        raise LoadError(path, 0, f"malformed row ({exc})") from exc
    except pd.errors.EmptyDataError as exc:
        raise LoadError(path, 1, "missing header row") from exc
    frame.columns = [c.strip() for c in frame.columns]
    return frame


def _numeric(frame: pd.DataFrame, column: str, path: Path, allow_empty: bool = False) -> np.ndarray:
    raw = frame[column].str.strip()
    values = pd.to_numeric(raw.replace("", np.nan), errors="coerce").to_numpy(dtype=float)
    bad = np.isnan(values) & ~(allow_empty & (raw == "").to_numpy())
    bad |= np.isinf(values)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise LoadError(path, row + 2, f"column '{column}': not a number: {raw.iloc[row]!r}")
    return values


def _integer(frame: pd.DataFrame, column: str, path: Path) -> np.ndarray:
    values = _numeric(frame, column, path)
    bad = values != np.round(values)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise LoadError(path, row + 2, f"column '{column}': not an integer: {values[row]}")
    return values.astype(int)


def load_dataset(individuals_path, tasks_path, indicator_levels=None, schema: str = "csv") -> Dataset:
    """Load and validate the individuals and tasks files.

    `indicator_levels` is an int (same L for every indicator), a per-indicator
    sequence, or None for the 5-level default.
    """
    if schema not in SEPARATORS:
        raise ConfigError(f"unknown schema {schema!r}; expected one of {sorted(SEPARATORS)}")
    sep = SEPARATORS[schema]
    individuals_path, tasks_path = Path(individuals_path), Path(tasks_path)

    people = _read_table(individuals_path, sep)
    if "id" not in people.columns:
        raise SchemaError(f"{individuals_path}: missing 'id' column")
    indicator_cols = [c for c in people.columns if c.startswith(INDICATOR_PREFIX)]
    socio_cols = [c for c in people.columns if c != "id" and c not in indicator_cols]
    P = len(indicator_cols)

    if indicator_levels is None:
        levels = np.full(P, DEFAULT_LIKERT_LEVELS, dtype=int)
    elif np.isscalar(indicator_levels):
        levels = np.full(P, int(indicator_levels), dtype=int)
    else:
        levels = np.asarray(indicator_levels, dtype=int)
        if levels.size != P:
            raise SchemaError(f"{levels.size} indicator levels configured for {P} indicator columns")

    ids = _integer(people, "id", individuals_path)
    socio = np.column_stack([_numeric(people, c, individuals_path) for c in socio_cols]) \
        if socio_cols else np.zeros((len(people), 0))
    responses = np.column_stack([_numeric(people, c, individuals_path, allow_empty=True)
                                 for c in indicator_cols]) if P else np.zeros((len(people), 0))
    present = ~np.isnan(responses)
    partial = present.any(axis=1) & ~present.all(axis=1)
    if partial.any():
        row = int(np.flatnonzero(partial)[0])
        raise SchemaError(f"{individuals_path}:{row + 2}: indicator cells must be all filled or all empty")
    for p in range(P):
        col = responses[:, p]
        bad = present[:, p] & ((col != np.round(col)) | (col < 1) | (col > levels[p]))
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise RangeError(f"{individuals_path}:{row + 2}: indicator '{indicator_cols[p]}' "
                             f"response {col[row]:g} outside 1..{levels[p]}")

    tasks = _read_table(tasks_path, sep)
    for required in TASK_KEY_COLUMNS + (CHOSEN_COLUMN,):
        if required not in tasks.columns:
            raise SchemaError(f"{tasks_path}: missing '{required}' column")
    attribute_cols = [c for c in tasks.columns if c not in TASK_KEY_COLUMNS + (CHOSEN_COLUMN,)]
    keys = {c: _integer(tasks, c, tasks_path) for c in TASK_KEY_COLUMNS + (CHOSEN_COLUMN,)}
    attrs = np.column_stack([_numeric(tasks, c, tasks_path) for c in attribute_cols]) \
        if attribute_cols else np.zeros((len(tasks), 0))
    if np.any((keys[CHOSEN_COLUMN] != 0) & (keys[CHOSEN_COLUMN] != 1)):
        row = int(np.flatnonzero((keys[CHOSEN_COLUMN] != 0) & (keys[CHOSEN_COLUMN] != 1))[0])
        raise LoadError(tasks_path, row + 2, "chosen flag must be 0 or 1")

    known_ids = set(ids.tolist())
    order = np.lexsort((keys["alternative"], keys["task"], keys["id"]))
    by_person: Dict[int, List[ChoiceTask]] = {}
    J = None
    start = 0
    while start < order.size:
        first = order[start]
        pid, tid = keys["id"][first], keys["task"][first]
        stop = start
        while stop < order.size and keys["id"][order[stop]] == pid and keys["task"][order[stop]] == tid:
            stop += 1
        rows = order[start:stop]
        line = int(rows.min()) + 2
        if pid not in known_ids:
            raise SchemaError(f"{tasks_path}:{line}: task for unknown individual {pid}")
        alt_index = keys["alternative"][rows]
        if not np.array_equal(alt_index, np.arange(rows.size)):
            raise SchemaError(f"{tasks_path}:{line}: alternatives of task {tid} must be numbered 0..J-1")
        J = rows.size if J is None else J
        if rows.size != J:
            raise SchemaError(f"{tasks_path}:{line}: task {tid} of individual {pid} has {rows.size} "
                              f"alternatives, expected {J}")
        flags = keys[CHOSEN_COLUMN][rows]
        if flags.sum() != 1:
            raise SchemaError(f"{tasks_path}:{line}: task {tid} of individual {pid} must have exactly "
                              f"one chosen alternative")
        by_person.setdefault(int(pid), []).append(ChoiceTask(attrs[rows], int(np.argmax(flags))))
        start = stop

    individuals = []
    for row, pid in enumerate(ids):
        indicators = responses[row].astype(int) if present[row].all() and P else None
        individuals.append(Individual(int(pid), socio[row], indicators, by_person.get(int(pid), [])))

    dataset = Dataset(
        individuals=individuals,
        indicator_levels=levels,
        attribute_names=attribute_cols,
        socio_names=socio_cols,
        indicator_texts=[c[len(INDICATOR_PREFIX):] for c in indicator_cols],
    )
    logger.info("Loaded %d individuals (%d with indicators) and %d choice tasks from %s, %s",
                dataset.n_individuals, int(dataset.arrays.has_indicators.sum()),
                dataset.n_observations, individuals_path.name, tasks_path.name)
    return dataset


def save_dataset(dataset: Dataset, individuals_path, tasks_path) -> Tuple[Path, Path]:
    """Write a dataset in the format `load_dataset` reads"""
    individuals_path, tasks_path = Path(individuals_path), Path(tasks_path)
    ensure_directory(individuals_path.parent)
    ensure_directory(tasks_path.parent)

    people = {"id": [ind.id for ind in dataset.individuals]}
    for m, name in enumerate(dataset.socio_names):
        people[name] = [float(ind.socio[m]) for ind in dataset.individuals]
    for p, text in enumerate(dataset.indicator_texts):
        people[INDICATOR_PREFIX + text] = [
            "" if ind.indicators is None else str(int(ind.indicators[p])) for ind in dataset.individuals]
    pd.DataFrame(people).to_csv(individuals_path, index=False)

    rows = []
    for ind in dataset.individuals:
        for t, task in enumerate(ind.tasks):
            for j, x in enumerate(task.alternatives):
                rows.append([ind.id, t, j, *x.tolist(), int(j == task.chosen)])
    columns = list(TASK_KEY_COLUMNS) + list(dataset.attribute_names) + [CHOSEN_COLUMN]
    pd.DataFrame(rows, columns=columns).to_csv(tasks_path, index=False)
    return individuals_path, tasks_path


# ---------------------------------------------------------------------- splits

def split_train_test(d: Dataset, test_fraction: float, seed: int) -> Tuple[Dataset, Optional[Dataset]]:
    """Random partition by individual; train size is floor((1 - fraction) * N).

    A fraction of 0 keeps every individual for estimation and returns no test split.
    """
    N = d.n_individuals
    if test_fraction == 0:
        logger.info("No holdout: all %d individuals used for estimation", N)
        return d.subset(range(N)), None
    if N < 2:
        raise ContractError("split_train_test needs at least 2 individuals")
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must lie in [0, 1), got {test_fraction}")
    n_train = math.floor(round((1.0 - test_fraction) * N, 9))
    if n_train == 0 or n_train == N:
        raise ConfigError(f"test_fraction {test_fraction} leaves an empty partition for N={N}")
    perm = np.random.default_rng(seed).permutation(N)
    train_rows = np.sort(perm[:n_train])
    test_rows = np.sort(perm[n_train:])
    logger.info("Split %d individuals into %d train / %d test (seed %d)", N, n_train, N - n_train, seed)
    return d.subset(train_rows), d.subset(test_rows)


def apply_standardization(d: Dataset, moments: Dict) -> Dataset:
    """Copy of `d` with the moment columns z-scored by the given mean and std"""
    cols = d.column_indices(moments["columns"])
    people = []
    for ind in d.individuals:
        socio = ind.socio.copy()
        socio[cols] = (socio[cols] - moments["mean"]) / moments["std"]
        people.append(Individual(ind.id, socio, ind.indicators, ind.tasks))
    return Dataset(people, d.indicator_levels.copy(), list(d.attribute_names),
                   list(d.socio_names), list(d.indicator_texts))


def standardize_socio(train: Dataset, test: Optional[Dataset] = None,
                      columns: Optional[Sequence[str]] = None):
    """Z-score socio columns using train-split moments; returns (train, test, moments)"""
    cols = train.column_indices(columns)
    values = train.arrays.socio[:, cols]
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    std[std == 0] = 1.0
    moments = {"columns": [train.socio_names[i] for i in cols], "mean": mean, "std": std}
    scaled_test = apply_standardization(test, moments) if test is not None else None
    return apply_standardization(train, moments), scaled_test, moments
