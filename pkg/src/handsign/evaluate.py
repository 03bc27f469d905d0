"""Cross-subject evaluation protocol.

Leave-one-subject-out: every subject takes one turn as the unseen test
subject while the rest train. Results aggregate into tables with one row
per configuration, one column per test subject, and an unweighted
average column. A table is persisted both as JSON and as an aligned
plain-text render.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import InputError, StateError

logger = logging.getLogger(__name__)

ABLATION_AXES = ("iterations", "hands", "joint")


@dataclass(frozen=True)
class SplitPlan:
    test_subject: str
    train_subjects: tuple[str, ...]

    def __post_init__(self):
        if self.test_subject in self.train_subjects:
            raise InputError(f"test subject {self.test_subject!r} also appears in training")
        if not self.train_subjects:
            raise InputError("a split needs at least one training subject")


def make_splits(subjects: Sequence[str]) -> list[SplitPlan]:
    """One leave-one-out plan per subject, in sorted subject order."""
    uniq = sorted(set(subjects))
    if len(uniq) < 2:
        raise InputError(f"need at least two subjects for cross-subject splits, got {len(uniq)}")
    if len(uniq) != len(list(subjects)):
        logger.warning("duplicate subject ids collapsed: %d -> %d", len(list(subjects)), len(uniq))
    return [
        SplitPlan(test_subject=s, train_subjects=tuple(x for x in uniq if x != s)) for s in uniq
    ]


def accuracy(predictions: Sequence[int], labels: Sequence[int]) -> float:
    if len(predictions) == 0:
        raise InputError("cannot compute accuracy of zero predictions")
    if len(predictions) != len(labels):
        raise InputError(f"{len(predictions)} predictions for {len(labels)} labels")
    correct = sum(1 for p, y in zip(predictions, labels) if int(p) == int(y))
    return correct / len(predictions)


def audit_no_overlap(train_ids: Iterable, test_ids: Iterable, context: str = "") -> dict:
    """Assert id-level disjointness between a training pool and the test set.

    Every evaluation run funnels through this; leakage is a hard error,
    never a warning.
    """
    train_set = set(train_ids)
    test_set = set(test_ids)
    leaked = sorted(train_set & test_set, key=str)
    record = {
        "context": context,
        "train_count": len(train_set),
        "test_count": len(test_set),
        "leaked": [str(x) for x in leaked],
    }
    if leaked:
        raise StateError(
            f"split leakage in {context or 'audit'}: {len(leaked)} test ids inside "
            f"the training pool, e.g. {leaked[:3]}"
        )
    return record


# ---------------------------------------------------------------------------
# results tables


@dataclass
class ResultRow:
    name: str
    per_subject: dict[str, float]
    average: float

    @classmethod
    def build(cls, name: str, per_subject: dict[str, float]) -> "ResultRow":
        if not per_subject:
            raise InputError(f"row {name!r} has no per-subject results")
        avg = sum(per_subject.values()) / len(per_subject)
        return cls(name=name, per_subject=dict(per_subject), average=avg)

    def check(self) -> None:
        expected = sum(self.per_subject.values()) / len(self.per_subject)
        if abs(expected - self.average) > 1e-9:
            raise StateError(
                f"row {self.name!r} average {self.average} drifted from mean {expected}"
            )


class ResultsTable:
    """Rows of per-subject accuracies with an unweighted average column."""

    def __init__(self, name: str, rows: Optional[list[ResultRow]] = None):
        self.name = name
        self.rows = rows or []

    def add(self, row_name: str, per_subject: dict[str, float]) -> ResultRow:
        row = ResultRow.build(row_name, per_subject)
        self.rows.append(row)
        return row

    def subjects(self) -> list[str]:
        seen: dict[str, None] = {}
        for row in self.rows:
            for s in sorted(row.per_subject):
                seen.setdefault(s)
        return list(seen)

    def check(self) -> None:
        for row in self.rows:
            row.check()

    def row(self, name: str) -> ResultRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise InputError(f"no row named {name!r} in table {self.name!r}")

    # ------------------------------------------------------------------ I/O

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "rows": [
                {
                    "name": r.name,
                    "per_subject": {k: r.per_subject[k] for k in sorted(r.per_subject)},
                    "average": r.average,
                }
                for r in self.rows
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ResultsTable":
        table = cls(d["name"])
        for r in d["rows"]:
            table.rows.append(
                ResultRow(name=r["name"], per_subject=dict(r["per_subject"]), average=r["average"])
            )
        table.check()
        return table

    def render(self) -> str:
        """Aligned plain-text table, subjects as columns."""
        subjects = self.subjects()
        headers = ["config"] + subjects + ["average"]
        lines = []
        for r in self.rows:
            cells = [r.name]
            cells += [f"{r.per_subject.get(s, float('nan')):.4f}" for s in subjects]
            cells.append(f"{r.average:.4f}")
            lines.append(cells)
        widths = [max(len(h), *(len(row[i]) for row in lines)) if lines else len(h)
                  for i, h in enumerate(headers)]
        def fmt(cells):
            return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
        out = [fmt(headers), fmt(["-" * w for w in widths])]
        out += [fmt(row) for row in lines]
        return "\n".join(out) + "\n"

    def save(self, out_dir: Path | str) -> tuple[Path, Path]:
        self.check()
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        json_path = out / f"{self.name}.json"
        txt_path = out / f"{self.name}.txt"
        json_path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        txt_path.write_text(self.render())
        return json_path, txt_path

    @classmethod
    def load(cls, path: Path | str) -> "ResultsTable":
        return cls.from_dict(json.loads(Path(path).read_text()))


def run_ablation(dataset, axis: str, config, workdir: Path | str,
                 build_missing: bool = False) -> ResultsTable:
    """Run one ablation axis over all leave-one-subject-out splits.

    Axes: "iterations" (embedder bootstrap depth), "hands" (left / right /
    both-max / both-concat / both-mean), "joint" (frozen-embedder separate
    training vs end-to-end joint training). Each axis needs the per-split
    trained artifacts in workdir; with build_missing=False a missing
    checkpoint is a state error naming the artifact, with True the full
    pipeline builds it first.
    """
    from . import pipeline  # local import; pipeline depends on this module

    if axis not in ABLATION_AXES:
        raise InputError(f"axis must be one of {ABLATION_AXES}, got {axis!r}")
    return pipeline.run_axis(dataset, axis, config, Path(workdir), build_missing=build_missing)
