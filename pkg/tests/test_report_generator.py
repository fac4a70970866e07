import numpy as np
import pandas as pd
import pytest

from tools.report_generator import (REPORT_JSON, REPORT_TEXT, FitReport, comparison_table, load_fit_report,
                                    render_comparison, render_text, save_fit_report)
from utils.errors import ConfigError, LoadError


@pytest.fixture
def report():
    profiles = pd.DataFrame({"class1": [0.25, 0.75], "class2": [0.6, 0.4]},
                            index=pd.MultiIndex.from_tuples([("female", 0.0), ("female", 1.0)],
                                                            names=["feature", "value"]))
    choice = pd.DataFrame({"name": ["beta_class1_x1"], "estimate": [1.2], "std_error": [0.1],
                           "z": [12.0], "p_value": [0.0]})
    summary = {"model": "lccm-net", "k": 2, "z": 1, "n_params": 30, "train_ll": -1599.41,
               "train_null_ll": -2000.0, "test_ll": -400.5, "test_null_ll": -450.0, "aic": 3258.82,
               "bic": 3400.1, "rho_squared": 0.2, "ll_variance": 0.5, "test_ll_variance": float("nan"),
               "train_hit_rate": 0.6, "test_hit_rate": 0.55, "class_shares": [0.4, 0.6]}
    return FitReport("lccm-net", {"k": 2, "z": 1}, summary, {"choice": choice, "profiles": profiles},
                     ["Standard errors are conditional."])


def test_text_report_has_sections(report):
    text = render_text(report)
    assert text.startswith("## Model: lccm-net")
    assert "## Choice parameters" in text
    assert "## Posterior class profiles" in text
    assert "beta_class1_x1" in text
    assert "[0.4000, 0.6000]" in text
    assert "test_ll_variance" in text


def test_json_round_trip(report, tmp_path):
    written = save_fit_report(report, tmp_path)
    assert sorted(p.name for p in written) == [REPORT_JSON, REPORT_TEXT]
    loaded = load_fit_report(tmp_path)
    assert loaded.model == "lccm-net"
    assert loaded.summary["aic"] == pytest.approx(3258.82)
    assert loaded.tables["profiles"].shape == (2, 4)
    assert loaded.tables["choice"]["name"].tolist() == ["beta_class1_x1"]


def test_document_formats(report, tmp_path):
    written = save_fit_report(report, tmp_path, formats=("docx", "pdf"))
    assert all(p.exists() and p.stat().st_size > 0 for p in written)
    assert (tmp_path / "fit_report.pdf").read_bytes().startswith(b"%PDF")


def test_unknown_format_is_rejected(report, tmp_path):
    with pytest.raises(ConfigError):
        save_fit_report(report, tmp_path, formats=("html",))


def test_missing_report_is_a_load_error(tmp_path):
    with pytest.raises(LoadError):
        load_fit_report(tmp_path)


def test_comparison_table_uses_labels(report):
    other = FitReport("lccm", {"k": 2, "z": 0}, {**report.summary, "model": "lccm", "train_ll": -1650.0}, {}, [])
    table = comparison_table([report, other], labels=["proposed", "baseline"])
    assert table["Model"].tolist() == ["proposed", "baseline"]
    assert table["Train LL"].tolist() == [-1599.41, -1650.0]
    assert np.isnan(table["Variance Test LL"].iloc[0])
    text = render_comparison(table)
    assert text.startswith("## Model comparison")
    assert "proposed" in text
