import numpy as np
import pytest

from estimators.self_check import tiny_problem
from tools.data_model import ChoiceTask, Dataset, Individual, ModelSpec
from tools.synthgen import GeneratorConfig, default_generating_parameters, generate


def make_dataset(n: int, n_alternatives: int = 2, n_attributes: int = 1, tasks: int = 1,
                 n_indicators: int = 0, levels: int = 5, seed: int = 0) -> Dataset:
    """Plain in-memory dataset with random attributes, one socio column and chosen alternative 0"""
    rng = np.random.default_rng(seed)
    people = []
    for i in range(n):
        people.append(Individual(
            id=i,
            socio=np.array([float(i % 3)]),
            indicators=rng.integers(1, levels + 1, n_indicators) if n_indicators else None,
            tasks=[ChoiceTask(rng.normal(size=(n_alternatives, n_attributes)), 0) for _ in range(tasks)],
        ))
    return Dataset(people, np.full(n_indicators, levels), [f"x{a + 1}" for a in range(n_attributes)],
                   ["group"], [f"q{p + 1}" for p in range(n_indicators)])


@pytest.fixture
def tiny():
    """(dataset, spec, params) of the enumerable self-check instance"""
    return tiny_problem(0)


@pytest.fixture(scope="session")
def small_config():
    return GeneratorConfig(n_individuals=60, n_tasks=3, n_alternatives=3, n_indicators=3,
                           indicator_levels=4, sigma_omega=0.5)


@pytest.fixture(scope="session")
def small_spec():
    return ModelSpec(k=2, z=1, h=3, use_omega=True, em_iterations=3, gradient_steps=5, seed=3)


@pytest.fixture(scope="session")
def small_data(small_spec, small_config):
    """(dataset, truth, generating params) drawn from the default generator"""
    params = default_generating_parameters(small_spec, small_config, seed=1)
    dataset, truth = generate(small_spec, params, small_config, seed=2)
    return dataset, truth, params


@pytest.fixture
def write_csv(tmp_path):
    def _write(name: str, text: str):
        path = tmp_path / name
        path.write_text(text.strip() + "\n", encoding="utf-8")
        return path
    return _write
