"""
Report generation for fitted models: FitReport text, JSON, DOCX and PDF
files, and the side-by-side comparison of several fits
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from utils.errors import ConfigError, LoadError
from utils.file_utils import create_docx_report, ensure_directory, load_json, save_json, text_to_pdf

logger = logging.getLogger(__name__)

REPORT_TEXT = "fit_report.txt"
REPORT_JSON = "fit_report.json"
REPORT_DOCX = "fit_report.docx"
REPORT_PDF = "fit_report.pdf"
REPORT_FORMATS = ("txt", "json", "docx", "pdf")

# Comparison columns in display order: (summary key, heading)
COMPARISON_COLUMNS = [
    ("model", "Model"),
    ("k", "K"),
    ("z", "Z"),
    ("n_params", "Params"),
    ("train_null_ll", "Train null LL"),
    ("train_ll", "Train LL"),
    ("test_null_ll", "Test null LL"),
    ("test_ll", "Test LL"),
    ("aic", "AIC"),
    ("bic", "BIC"),
    ("rho_squared", "Rho2"),
    ("ll_variance", "Variance LL"),
    ("test_ll_variance", "Variance Test LL"),
    ("train_hit_rate", "Train hit rate"),
    ("test_hit_rate", "Test hit rate"),
]

TABLE_SECTIONS = [
    ("restarts", "Restarts"),
    ("choice", "Choice parameters"),
    ("membership", "Class membership parameters"),
    ("measurement", "Measurement parameters"),
    ("profiles", "Posterior class profiles"),
]


@dataclass
class FitReport:
    model: str
    spec: Dict[str, Any]
    summary: Dict[str, Any]
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model": self.model,
            "spec": self.spec,
            "summary": self.summary,
            "tables": {name: _frame_records(frame) for name, frame in self.tables.items()},
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FitReport":
        tables = {name: pd.DataFrame(rows) for name, rows in data.get("tables", {}).items()}
        return cls(data.get("model", "?"), data.get("spec", {}), data.get("summary", {}), tables,
                   list(data.get("notes", [])))


def _frame_records(frame: pd.DataFrame) -> List[Dict[str, Any]]:
    flat = frame.reset_index() if not isinstance(frame.index, pd.RangeIndex) else frame
    records = flat.to_dict(orient="records")
    # NaN is not valid JSON
    return [{k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in row.items()}
            for row in records]


def _format_value(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, (float, np.floating)):
        return "-" if not np.isfinite(value) else f"{value:.4f}"
    if isinstance(value, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    return str(value)


def render_text(report: FitReport) -> str:
    """Plain-text report; sections start with '## ' so the document renderers can pick them up"""
    lines = [f"## Model: {report.model}", ""]
    lines.append("Specification")
    for key in sorted(report.spec):
        lines.append(f"  {key:<22} {_format_value(report.spec[key])}")
    lines += ["", "## Model comparison", ""]
    for key in sorted(report.summary):
        lines.append(f"  {key:<22} {_format_value(report.summary[key])}")
    for name, heading in TABLE_SECTIONS:
        frame = report.tables.get(name)
        if frame is None or frame.empty:
            continue
        lines += ["", f"## {heading}", ""]
        lines.append(frame.to_string(index=not isinstance(frame.index, pd.RangeIndex),
                                     float_format=lambda v: f"{v:.4f}"))
    if report.notes:
        lines += ["", "## Notes", ""]
        lines += [f"  - {note}" for note in report.notes]
    return "\n".join(lines) + "\n"


def save_fit_report(report: FitReport, output_dir: Path, formats: Sequence[str] = ("txt", "json")) -> List[Path]:
    """Write the report in the requested formats; returns the written paths"""
    output_dir = Path(output_dir)
    ensure_directory(output_dir)
    text = render_text(report)
    title = f"Fit report: {report.model}"
    written = []
    for fmt in formats:
        if fmt == "txt":
            path = output_dir / REPORT_TEXT
            path.write_text(text, encoding="utf-8")
        elif fmt == "json":
            path = output_dir / REPORT_JSON
            save_json(report.to_dict(), path)
        elif fmt == "docx":
            path = create_docx_report(text, output_dir / REPORT_DOCX, title)
        elif fmt == "pdf":
            path = text_to_pdf(text, output_dir / REPORT_PDF, title)
        else:
            raise ConfigError(f"unknown report format {fmt!r}; expected one of {REPORT_FORMATS}")
        written.append(Path(path))
    logger.info("Fit report written to %s (%s)", output_dir, ", ".join(formats))
    return written


def load_fit_report(path: Path) -> FitReport:
    """Read fit_report.json from a file or a fit directory"""
    path = Path(path)
    if path.is_dir():
        path = path / REPORT_JSON
    if not path.exists():
        raise LoadError(path, 0, "fit report not found")
    return FitReport.from_dict(load_json(path))


def comparison_table(reports: Sequence[FitReport], labels: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """One row per fit with the model comparison columns"""
    rows = []
    for i, report in enumerate(reports):
        row = {heading: report.summary.get(key) for key, heading in COMPARISON_COLUMNS}
        row["Model"] = labels[i] if labels else report.model
        rows.append(row)
    return pd.DataFrame(rows, columns=[heading for _, heading in COMPARISON_COLUMNS])


def render_comparison(table: pd.DataFrame) -> str:
    return "## Model comparison\n\n" + table.to_string(index=False, na_rep="-",
                                                       float_format=lambda v: f"{v:.2f}") + "\n"
