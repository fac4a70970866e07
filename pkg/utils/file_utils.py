"""
Utility functions for file operations
"""
import hashlib
import json
from pathlib import Path
from typing import Any, Dict, List

import numpy as np


def ensure_directory(path: Path) -> None:
    """Ensure a directory exists, create if it doesn't"""
    path.mkdir(parents=True, exist_ok=True)


def _to_builtin(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def save_json(data: Dict[str, Any], filepath: Path) -> None:
    """Save data to JSON file"""
    filepath = Path(filepath)
    ensure_directory(filepath.parent)
    with open(filepath, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, ensure_ascii=False, sort_keys=True, default=_to_builtin)
        f.write("\n")


def load_json(filepath: Path) -> Dict[str, Any]:
    """Load data from JSON file"""
    filepath = Path(filepath)
    if not filepath.exists():
        return {}
    with open(filepath, 'r', encoding='utf-8') as f:
        return json.load(f)


def file_digest(filepath: Path) -> str:
    """SHA-256 hex digest of a file's bytes"""
    sha = hashlib.sha256()
    with open(filepath, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            sha.update(chunk)
    return sha.hexdigest()


def describe_outputs(paths: List[Path]) -> List[Dict[str, str]]:
    """Manifest entries (path + digest) for a list of written files"""
    return [{"path": str(p), "sha256": file_digest(p)} for p in sorted(Path(p) for p in paths)]


def create_docx_report(content: str, filepath: Path, title: str = "Report") -> Path:
    """Create a DOCX report; blank-line separated blocks become paragraphs, '## ' lines headings"""
    from docx import Document

    filepath = Path(filepath)
    ensure_directory(filepath.parent)

    doc = Document()
    title_paragraph = doc.add_heading(title, 0)
    title_paragraph.alignment = 1  # Center alignment

    for block in content.split("\n\n"):
        block = block.rstrip()
        if not block:
            continue
        if block.startswith("## "):
            head, _, rest = block.partition("\n")
            doc.add_heading(head[3:], level=1)
            block = rest
            if not block:
                continue
        paragraph = doc.add_paragraph()
        run = paragraph.add_run(block)
        run.font.name = "Courier New"

    doc.save(filepath)
    return filepath


def text_to_pdf(content: str, pdf_path: Path, title: str = "Report") -> Path:
    """Render a plain-text report to PDF, keeping table alignment"""
    from reportlab.lib.pagesizes import landscape, letter
    from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
    from reportlab.platypus import Paragraph, Preformatted, SimpleDocTemplate, Spacer

    pdf_path = Path(pdf_path)
    ensure_directory(pdf_path.parent)

    doc = SimpleDocTemplate(str(pdf_path), pagesize=landscape(letter))
    styles = getSampleStyleSheet()
    title_style = ParagraphStyle(
        'ReportTitle',
        parent=styles['Heading1'],
        fontSize=16,
        spaceAfter=20,
        alignment=1  # Center
    )
    code_style = ParagraphStyle(
        'ReportBody',
        parent=styles['Code'],
        fontSize=7,
        leading=8.5,
    )
    story = [Paragraph(title, title_style), Spacer(1, 12)]
    for block in content.split("\n\n"):
        if block.strip():
            story.append(Preformatted(block, code_style))
            story.append(Spacer(1, 6))

    doc.build(story)
    return pdf_path
