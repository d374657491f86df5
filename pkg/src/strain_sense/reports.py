"""Report files: cost curves, confusion matrices and embedding scatter plots."""
from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .training import TrainReport
from .tsne import Embedding

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"]


def write_text_atomic(path, text: str) -> Path:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)
    return path


def confusion_csv(confusion: np.ndarray, labels) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["truth\\predicted", *labels])
    for lab, row in zip(labels, confusion):
        w.writerow([lab, *[int(v) for v in row]])
    return buf.getvalue()


def embedding_csv(emb: Embedding) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    dims = emb.coords.shape[1]
    axes = ["x", "y", "z"][:dims] if dims <= 3 else [f"d{i}" for i in range(dims)]
    w.writerow([*axes, "label"])
    for row, lab in zip(emb.coords, emb.labels):
        w.writerow([*(repr(float(v)) for v in row), "" if lab is None else lab])
    return buf.getvalue()


def embedding_svg(emb: Embedding, panel: int = 260, margin: int = 24) -> str:
    """Three orthographic projections (x-y, x-z, y-z), one colour per label."""
    coords = np.asarray(emb.coords, dtype=np.float64)
    if coords.shape[1] < 3:
        coords = np.pad(coords, ((0, 0), (0, 3 - coords.shape[1])))
    labels = [str(l) for l in emb.labels]
    classes = list(dict.fromkeys(labels))
    colour = {c: PALETTE[i % len(PALETTE)] for i, c in enumerate(classes)}
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    width = 3 * panel + 4 * margin
    legend_h = 18 * len(classes) + margin
    height = panel + 2 * margin + legend_h
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for k, (a, b) in enumerate([(0, 1), (0, 2), (1, 2)]):
        x0 = margin + k * (panel + margin)
        y0 = margin
        out.append(f'<rect x="{x0}" y="{y0}" width="{panel}" height="{panel}" fill="none" stroke="#999"/>')
        out.append(f'<text x="{x0 + 4}" y="{y0 - 6}">{"xyz"[a]} vs {"xyz"[b]}</text>')
        for p, lab in zip(coords, labels):
            px = x0 + 6 + (p[a] - lo[a]) / span[a] * (panel - 12)
            py = y0 + panel - 6 - (p[b] - lo[b]) / span[b] * (panel - 12)
            out.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="2.5" fill="{colour[lab]}" fill-opacity="0.8"/>')
    ly = panel + 2 * margin
    for i, c in enumerate(classes):
        out.append(f'<rect x="{margin}" y="{ly + 18 * i}" width="10" height="10" fill="{colour[c]}"/>')
        out.append(f'<text x="{margin + 16}" y="{ly + 18 * i + 9}">{_escape(c)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def emit_reports(artifact, out_dir) -> list:
    """Write the report files for a TrainReport or an Embedding into ``out_dir``.

    Returns the written paths.  Identical inputs give byte-identical files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if isinstance(artifact, TrainReport):
        written.append(write_text_atomic(out_dir / "report.json", artifact.to_json()))
        written.append(write_text_atomic(out_dir / "cost_curve.csv", artifact.cost_curve_csv()))
        if artifact.confusion is not None:
            written.append(write_text_atomic(out_dir / "confusion.csv", confusion_csv(artifact.confusion, artifact.label_map)))
    elif isinstance(artifact, Embedding):
        written.append(write_text_atomic(out_dir / "embedding.csv", embedding_csv(artifact)))
        written.append(write_text_atomic(out_dir / "embedding.svg", embedding_svg(artifact)))
    else:
        raise TypeError(f"cannot emit reports for {type(artifact).__name__}")
    return written
