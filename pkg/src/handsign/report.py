"""Figure rendering for results tables.

Turns the evaluation JSON tables into per-subject bar summaries, written
as PNG files next to the delimited output. Headless backend only; no
interactive windows.
"""

from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  backend must be set first

import numpy as np  # noqa: E402

from .errors import InputError
from .evaluate import ResultsTable

logger = logging.getLogger(__name__)


def render_table_figure(table: ResultsTable, out_path: Path | str) -> Path:
    """Grouped per-subject bars, one group per subject, one bar per row."""
    if not table.rows:
        raise InputError(f"table {table.name!r} has no rows to plot")
    subjects = table.subjects()
    n_rows = len(table.rows)
    x = np.arange(len(subjects), dtype=float)
    width = 0.8 / n_rows
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(subjects) + 2), 4))
    for i, row in enumerate(table.rows):
        vals = [row.per_subject.get(s, np.nan) for s in subjects]
        offset = (i - (n_rows - 1) / 2) * width
        bars = ax.bar(x + offset, vals, width, label=f"{row.name} (avg {row.average:.3f})")
        for b in bars:
            b.set_linewidth(0.5)
            b.set_edgecolor("black")
    ax.set_xticks(x)
    ax.set_xticklabels(subjects, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.05)
    ax.set_title(table.name)
    ax.legend(fontsize=8, loc="lower right")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def render_results_dir(results_dir: Path | str, figures_dir: Path | str | None = None) -> list[Path]:
    """Render one figure per saved table JSON under a results directory."""
    results_dir = Path(results_dir)
    figures_dir = Path(figures_dir) if figures_dir else results_dir / "figures"
    tables = []
    for path in sorted(results_dir.glob("*.json")):
        try:
            tables.append(ResultsTable.load(path))
        except (KeyError, TypeError):
            continue  # other JSON artifacts (ledgers, checksums) live here too
    if not tables:
        raise InputError(f"no results tables found under {results_dir}")
    written = []
    for table in tables:
        written.append(render_table_figure(table, figures_dir / f"{table.name}.png"))
        logger.info("rendered %s", written[-1])
    return written
