import numpy as np
import pytest

from tests.conftest import make_dataset
from tools.data_model import (ChoiceTask, ModelSpec, load_dataset, save_dataset, split_train_test,
                              standardize_socio)
from utils.errors import ConfigError, ContractError, LoadError, RangeError, SchemaError

INDIVIDUALS = """
id,age,income,ind_safety,ind_comfort
1,30,2.5,4,5
2,45,1.0,,
3,28,3.2,1,2
"""

TASKS = """
id,task,alternative,price,time,chosen
1,0,0,1.0,10,1
1,0,1,2.0,5,0
1,1,0,1.5,12,0
1,1,1,2.5,4,1
2,0,0,1.0,8,0
2,0,1,3.0,3,1
3,0,0,0.5,20,1
3,0,1,1.0,15,0
"""


@pytest.fixture
def files(write_csv):
    return write_csv("individuals.csv", INDIVIDUALS), write_csv("tasks.csv", TASKS)


def test_load_dataset_reads_both_files(files):
    d = load_dataset(*files)
    assert d.n_individuals == 3
    assert d.n_observations == 4
    assert d.n_alternatives == 2
    assert d.socio_names == ["age", "income"]
    assert d.attribute_names == ["price", "time"]
    assert d.indicator_texts == ["safety", "comfort"]
    np.testing.assert_array_equal(d.indicator_levels, [5, 5])
    first = d.individuals[0]
    np.testing.assert_array_equal(first.indicators, [4, 5])
    assert [t.chosen for t in first.tasks] == [0, 1]
    assert d.individuals[1].indicators is None
    np.testing.assert_array_equal(d.arrays.has_indicators, [True, False, True])
    np.testing.assert_array_equal(d.arrays.tasks_per_individual, [2, 1, 1])


def test_partial_indicators_are_rejected(write_csv):
    people = write_csv("individuals.csv", "id,age,ind_a,ind_b\n1,30,3,\n")
    tasks = write_csv("tasks.csv", "id,task,alternative,price,chosen\n1,0,0,1,1\n1,0,1,2,0\n")
    with pytest.raises(SchemaError):
        load_dataset(people, tasks)


def test_out_of_range_indicator_reports_line(write_csv):
    people = write_csv("individuals.csv", "id,age,ind_a\n1,30,3\n2,31,7\n")
    tasks = write_csv("tasks.csv", "id,task,alternative,price,chosen\n1,0,0,1,1\n1,0,1,2,0\n"
                                   "2,0,0,1,0\n2,0,1,2,1\n")
    with pytest.raises(RangeError, match=":3:"):
        load_dataset(people, tasks)


def test_non_numeric_value_is_a_load_error(write_csv):
    people = write_csv("individuals.csv", "id,age\n1,thirty\n")
    tasks = write_csv("tasks.csv", "id,task,alternative,price,chosen\n1,0,0,1,1\n1,0,1,2,0\n")
    with pytest.raises(LoadError) as info:
        load_dataset(people, tasks)
    assert info.value.line == 2


def test_missing_file_is_a_load_error(tmp_path, files):
    with pytest.raises(LoadError):
        load_dataset(tmp_path / "absent.csv", files[1])


@pytest.mark.parametrize("tasks_text, message", [
    ("id,task,alternative,price,chosen\n1,0,0,1,1\n1,0,1,2,0\n1,1,0,1,0\n1,1,1,2,0\n1,1,2,3,1\n",
     "alternatives"),
    ("id,task,alternative,price,chosen\n1,0,0,1,1\n1,0,1,2,1\n", "exactly one"),
    ("id,task,alternative,price,chosen\n9,0,0,1,1\n9,0,1,2,0\n", "unknown individual"),
])
def test_inconsistent_tasks_are_schema_errors(write_csv, tasks_text, message):
    people = write_csv("individuals.csv", "id,age\n1,30\n")
    tasks = write_csv("tasks.csv", tasks_text)
    with pytest.raises(SchemaError, match=message):
        load_dataset(people, tasks)


def test_individual_without_tasks_is_rejected(write_csv):
    people = write_csv("individuals.csv", "id,age\n1,30\n2,40\n")
    tasks = write_csv("tasks.csv", "id,task,alternative,price,chosen\n1,0,0,1,1\n1,0,1,2,0\n")
    with pytest.raises(SchemaError, match="no choice tasks"):
        load_dataset(people, tasks)


def test_tab_separated_schema(tmp_path):
    people = tmp_path / "individuals.tsv"
    tasks = tmp_path / "tasks.tsv"
    people.write_text("id\tage\n1\t30\n", encoding="utf-8")
    tasks.write_text("id\ttask\talternative\tprice\tchosen\n1\t0\t0\t1\t0\n1\t0\t1\t2\t1\n", encoding="utf-8")
    d = load_dataset(people, tasks, schema="tsv")
    assert d.individuals[0].tasks[0].chosen == 1
    with pytest.raises(ConfigError):
        load_dataset(people, tasks, schema="xml")


def test_save_then_load_preserves_the_dataset(files, tmp_path):
    d = load_dataset(*files)
    paths = save_dataset(d, tmp_path / "out" / "people.csv", tmp_path / "out" / "tasks.csv")
    again = load_dataset(*paths)
    assert again.equals(d)


def test_chosen_index_must_be_in_range():
    with pytest.raises(RangeError):
        ChoiceTask(np.zeros((2, 1)), 2)


def test_split_sizes_and_determinism():
    d = make_dataset(542)
    train, test = split_train_test(d, 0.2, seed=0)
    assert (train.n_individuals, test.n_individuals) == (433, 109)
    assert set(train.ids) | set(test.ids) == set(d.ids)
    assert not set(train.ids) & set(test.ids)
    again, _ = split_train_test(d, 0.2, seed=0)
    np.testing.assert_array_equal(train.ids, again.ids)
    other, _ = split_train_test(d, 0.2, seed=1)
    assert not np.array_equal(train.ids, other.ids)


def test_split_preconditions():
    with pytest.raises(ContractError):
        split_train_test(make_dataset(1), 0.5, seed=0)
    with pytest.raises(ConfigError):
        split_train_test(make_dataset(10), 1.0, seed=0)
    with pytest.raises(ConfigError):
        split_train_test(make_dataset(2), 0.9, seed=0)


def test_zero_test_fraction_keeps_everyone_for_estimation():
    d = make_dataset(7)
    train, test = split_train_test(d, 0.0, seed=0)
    assert test is None
    np.testing.assert_array_equal(train.ids, d.ids)
    with pytest.raises(ConfigError):
        split_train_test(d, -0.1, seed=0)


def test_standardize_uses_train_moments():
    d = make_dataset(30)
    train, test = split_train_test(d, 0.3, seed=4)
    scaled_train, scaled_test, moments = standardize_socio(train, test)
    col = scaled_train.arrays.socio[:, 0]
    assert col.mean() == pytest.approx(0.0, abs=1e-12)
    assert col.std() == pytest.approx(1.0)
    expected = (test.arrays.socio[:, 0] - moments["mean"][0]) / moments["std"][0]
    np.testing.assert_allclose(scaled_test.arrays.socio[:, 0], expected)


@pytest.mark.parametrize("kwargs", [
    {"k": 0},
    {"k": 1, "z": 1, "use_omega": False},
    {"k": 1, "z": 0, "use_omega": True},
    {"h": 0},
    {"restarts": 0},
    {"omega_fallback": "median"},
    {"null_model": "logit"},
])
def test_model_spec_rejects_invalid_settings(kwargs):
    with pytest.raises(ConfigError):
        ModelSpec(**kwargs)


def test_model_spec_dict_round_trip_and_fingerprint():
    spec = ModelSpec(k=3, z=2, h=8, seed=5)
    assert ModelSpec.from_dict(spec.to_dict()) == spec
    assert spec.fingerprint() == ModelSpec(k=3, z=2, h=8, seed=5).fingerprint()
    assert spec.fingerprint() != ModelSpec(k=3, z=2, h=8, seed=6).fingerprint()
    with pytest.raises(ConfigError):
        ModelSpec.from_dict({"classes": 3})
    assert ModelSpec(k=2, z=0, use_omega=False).is_baseline
