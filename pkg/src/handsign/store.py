"""Hand-shape label store: provenance-tracked records and the iteration ledger.

The labeling loop alternates between model predictions and human review.
Iteration 1 is fully manual; every later iteration enqueues
high-confidence predictions for review, and reviewed records join the
training pool with provenance manual / accepted / corrected. The ledger
tracks, per class and iteration, the predicted count P, the
confirmed-as-predicted count C and the cumulative total T with
T_k = T_{k-1} + C_k.

Persistence is an append-only labels.jsonl event log plus snapshot
ledger.json / catalogue.json files, all human-inspectable.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .errors import ConflictError, InputError, StateError

logger = logging.getLogger(__name__)

GARBAGE_CLASS = "garbage"
REST_CLASS = "rest-position"

PROVENANCES = ("manual", "accepted", "corrected")

# (video_id, frame_index, side)
PatchRef = tuple[str, int, str]


def ref_key(ref: PatchRef) -> str:
    video_id, frame_index, side = ref
    return f"{video_id}/{side}/{int(frame_index)}"


def parse_ref(key: str) -> PatchRef:
    parts = key.rsplit("/", 2)
    if len(parts) != 3:
        raise InputError(f"malformed patch ref {key!r}")
    return (parts[0], int(parts[2]), parts[1])


@dataclass(frozen=True)
class ClassCatalogue:
    """Named hand-shape classes, always including garbage and rest-position once each."""

    names: tuple[str, ...]

    DEFAULT_SIZE = 41

    def __post_init__(self):
        if len(self.names) < 3:
            raise InputError("catalogue needs at least one shape class plus garbage and rest-position")
        if len(set(self.names)) != len(self.names):
            raise InputError("catalogue class names must be unique")
        for special in (GARBAGE_CLASS, REST_CLASS):
            if self.names.count(special) != 1:
                raise InputError(f"catalogue must contain {special!r} exactly once")

    @classmethod
    def default(cls) -> "ClassCatalogue":
        shapes = [f"shape-{i:02d}" for i in range(cls.DEFAULT_SIZE - 2)]
        return cls(tuple(shapes + [GARBAGE_CLASS, REST_CLASS]))

    def __len__(self) -> int:
        return len(self.names)

    def name(self, class_id: int) -> str:
        self.check(class_id)
        return self.names[class_id]

    def check(self, class_id: int) -> int:
        if not 0 <= int(class_id) < len(self.names):
            raise InputError(f"class id {class_id} outside catalogue of {len(self.names)} classes")
        return int(class_id)

    @property
    def garbage_id(self) -> int:
        return self.names.index(GARBAGE_CLASS)

    @property
    def rest_id(self) -> int:
        return self.names.index(REST_CLASS)

    @property
    def uninformative_ids(self) -> frozenset[int]:
        return frozenset((self.garbage_id, self.rest_id))

    def save(self, path: Path | str) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump({"classes": list(self.names)}, f, indent=1)

    @classmethod
    def load(cls, path: Path | str) -> "ClassCatalogue":
        with open(path) as f:
            doc = json.load(f)
        return cls(tuple(doc["classes"]))


@dataclass
class LabelRecord:
    """One resolved hand-shape label with provenance and iteration number."""

    video_id: str
    frame_index: int
    side: str
    class_id: int
    provenance: str
    iteration: int
    confidence: Optional[float] = None
    predicted_class: Optional[int] = None

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise InputError(f"provenance must be one of {PROVENANCES}, got {self.provenance!r}")
        if self.iteration < 1:
            raise InputError(f"iteration must be positive, got {self.iteration}")
        if self.provenance == "manual" and self.confidence is not None:
            raise InputError("manual records carry no confidence")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise InputError(f"confidence must lie in [0, 1], got {self.confidence}")

    @property
    def ref(self) -> PatchRef:
        return (self.video_id, self.frame_index, self.side)


@dataclass
class PendingItem:
    """A high-confidence prediction awaiting human review."""

    video_id: str
    frame_index: int
    side: str
    predicted_class: int
    confidence: float
    iteration: int

    @property
    def ref(self) -> PatchRef:
        return (self.video_id, self.frame_index, self.side)


@dataclass
class IterationLedgerRow:
    class_id: int
    iteration: int
    predicted: int
    correct: int
    total: int


@dataclass
class IngestSummary:
    enqueued: int = 0
    discarded: int = 0
    skipped: int = 0


@dataclass
class CorrectionSummary:
    confirmed: int = 0
    relabeled: int = 0
    rejected: int = 0


class HandShapeStore:
    """Single-writer, multi-reader store for hand-shape labels.

    All mutations serialize on one lock, so the store can be handed
    between threads (the annotation service relies on this). When bound
    to a directory, every mutation appends an event line to labels.jsonl
    immediately; save() additionally snapshots the ledger.
    """

    def __init__(self, catalogue: ClassCatalogue, root: Optional[Path | str] = None):
        self.catalogue = catalogue
        self._lock = threading.Lock()
        self._records: dict[str, LabelRecord] = {}
        self._pending: dict[str, PendingItem] = {}
        # rejected patches keep their enqueue-time item so P counts survive round trips
        self._tombstones: dict[str, Optional[PendingItem]] = {}
        # enqueue counts survive queue resolution: {(class_id, iteration): count}
        self._enqueued: dict[tuple[int, int], int] = {}
        self._root: Optional[Path] = None
        if root is not None:
            self._root = Path(root)
            self._root.mkdir(parents=True, exist_ok=True)
            self.catalogue.save(self._root / "catalogue.json")
            log = self._root / "labels.jsonl"
            if log.exists():
                self._replay(log)

    # ------------------------------------------------------------------ I/O

    @classmethod
    def open(cls, root: Path | str) -> "HandShapeStore":
        root = Path(root)
        catalogue = ClassCatalogue.load(root / "catalogue.json")
        return cls(catalogue, root=root)

    def _append(self, event: dict) -> None:
        if self._root is None:
            return
        with open(self._root / "labels.jsonl", "a") as f:
            f.write(json.dumps(event, sort_keys=True) + "\n")

    def _replay(self, log: Path) -> None:
        with open(log) as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                event = json.loads(line)
                kind = event.pop("event")
                if kind == "record":
                    rec = LabelRecord(**event)
                    self._records[ref_key(rec.ref)] = rec
                    self._pending.pop(ref_key(rec.ref), None)
                elif kind == "pending":
                    item = PendingItem(**event)
                    self._pending[ref_key(item.ref)] = item
                    key = (item.predicted_class, item.iteration)
                    self._enqueued[key] = self._enqueued.get(key, 0) + 1
                elif kind == "tombstone":
                    key = event["ref"]
                    self._tombstones[key] = self._pending.pop(key, None)
                else:
                    raise InputError(f"unknown event kind {kind!r} in {log}")

    def save(self, root: Optional[Path | str] = None) -> Path:
        """Snapshot the store. Rewrites labels.jsonl and ledger.json under root."""
        root = Path(root) if root is not None else self._root
        if root is None:
            raise StateError("store has no directory to save into")
        root.mkdir(parents=True, exist_ok=True)
        self.catalogue.save(root / "catalogue.json")
        with self._lock:
            # Rewrite the log in a replay-safe order: every historical
            # enqueue first (so P counts reconstruct), then tombstones,
            # then resolved records (which supersede their pending line).
            with open(root / "labels.jsonl", "w") as f:
                for key, item in sorted(self._pending.items()):
                    f.write(json.dumps({"event": "pending", **_pending_dict(item)}, sort_keys=True) + "\n")
                for key, item in sorted(self._tombstones.items()):
                    if item is not None:
                        f.write(json.dumps({"event": "pending", **_pending_dict(item)}, sort_keys=True) + "\n")
                for key, rec in sorted(self._records.items()):
                    if rec.predicted_class is not None:
                        item = PendingItem(
                            rec.video_id, rec.frame_index, rec.side,
                            rec.predicted_class, rec.confidence or 0.0, rec.iteration,
                        )
                        f.write(json.dumps({"event": "pending", **_pending_dict(item)}, sort_keys=True) + "\n")
                for key in sorted(self._tombstones):
                    f.write(json.dumps({"event": "tombstone", "ref": key}, sort_keys=True) + "\n")
                for key, rec in sorted(self._records.items()):
                    f.write(json.dumps({"event": "record", **_record_dict(rec)}, sort_keys=True) + "\n")
            rows = self._ledger_rows()
        with open(root / "ledger.json", "w") as f:
            json.dump({"rows": [vars(r) for r in rows]}, f, indent=1, sort_keys=True)
        self._root = root
        return root

    # ------------------------------------------------------------- mutations

    def ingest_manual(self, labels: Iterable[tuple[PatchRef, int]]) -> int:
        """Store manually assigned labels as iteration 1. Duplicates conflict."""
        labels = list(labels)
        with self._lock:
            seen: set[str] = set()
            for ref, class_id in labels:
                key = ref_key(ref)
                self.catalogue.check(class_id)
                if key in self._records or key in seen:
                    raise ConflictError(f"patch {key} already labeled")
                seen.add(key)
            added = 0
            for ref, class_id in labels:
                rec = LabelRecord(
                    video_id=ref[0],
                    frame_index=int(ref[1]),
                    side=ref[2],
                    class_id=int(class_id),
                    provenance="manual",
                    iteration=1,
                )
                self._records[ref_key(ref)] = rec
                self._append({"event": "record", **_record_dict(rec)})
                added += 1
        return added

    def ingest_predictions(
        self,
        predictions: Iterable[tuple[PatchRef, int, float]],
        threshold: float,
        iteration: int,
    ) -> IngestSummary:
        """Queue high-confidence predictions for review at iteration >= 2.

        Predictions below the confidence threshold are discarded; patches
        already labeled, already queued or previously rejected are
        skipped with a warning count.
        """
        if iteration < 2:
            raise InputError(f"prediction ingestion starts at iteration 2, got {iteration}")
        if not 0.0 <= threshold <= 1.0:
            raise InputError(f"threshold must lie in [0, 1], got {threshold}")
        summary = IngestSummary()
        with self._lock:
            for ref, class_id, confidence in predictions:
                key = ref_key(ref)
                self.catalogue.check(class_id)
                if key in self._records or key in self._tombstones or key in self._pending:
                    summary.skipped += 1
                    continue
                if confidence < threshold:
                    summary.discarded += 1
                    continue
                item = PendingItem(
                    video_id=ref[0],
                    frame_index=int(ref[1]),
                    side=ref[2],
                    predicted_class=int(class_id),
                    confidence=float(confidence),
                    iteration=int(iteration),
                )
                self._pending[key] = item
                count_key = (item.predicted_class, item.iteration)
                self._enqueued[count_key] = self._enqueued.get(count_key, 0) + 1
                self._append({"event": "pending", **_pending_dict(item)})
                summary.enqueued += 1
        if summary.skipped:
            logger.warning("skipped %d already-known patches during prediction ingest", summary.skipped)
        return summary

    def apply_corrections(
        self,
        decisions: Iterable[tuple[PatchRef, Optional[int]]],
        iteration: int,
    ) -> CorrectionSummary:
        """Resolve queued predictions: (ref, final_class) keeps the patch, (ref, None) rejects it.

        final_class equal to the prediction confirms it (provenance
        accepted); a different final_class relabels it (provenance
        corrected). Rejected patches are tombstoned so later ingestion
        skips them.
        """
        summary = CorrectionSummary()
        with self._lock:
            for ref, final_class in decisions:
                key = ref_key(ref)
                item = self._pending.get(key)
                if item is None or item.iteration != iteration:
                    raise InputError(f"patch {key} is not queued for iteration {iteration}")
                if final_class is None:
                    self._tombstones[key] = self._pending.pop(key)
                    self._append({"event": "tombstone", "ref": key})
                    summary.rejected += 1
                    continue
                self.catalogue.check(final_class)
                provenance = "accepted" if int(final_class) == item.predicted_class else "corrected"
                rec = LabelRecord(
                    video_id=item.video_id,
                    frame_index=item.frame_index,
                    side=item.side,
                    class_id=int(final_class),
                    provenance=provenance,
                    iteration=iteration,
                    confidence=item.confidence,
                    predicted_class=item.predicted_class,
                )
                del self._pending[key]
                self._records[key] = rec
                self._append({"event": "record", **_record_dict(rec)})
                if provenance == "accepted":
                    summary.confirmed += 1
                else:
                    summary.relabeled += 1
        return summary

    # ----------------------------------------------------------------- views

    def training_pool(self, up_to_iteration: int) -> list[LabelRecord]:
        """All resolved records with iteration <= k. Pending items never appear."""
        if up_to_iteration < 1:
            raise InputError(f"iteration must be positive, got {up_to_iteration}")
        with self._lock:
            pool = [r for r in self._records.values() if r.iteration <= up_to_iteration]
        pool.sort(key=lambda r: ref_key(r.ref))
        return pool

    def pool_class_counts(self, up_to_iteration: int) -> dict[int, int]:
        counts: dict[int, int] = {}
        for rec in self.training_pool(up_to_iteration):
            counts[rec.class_id] = counts.get(rec.class_id, 0) + 1
        return counts

    def pending_queue(
        self,
        iteration: int,
        sort: str = "confidence",
        class_id: Optional[int] = None,
    ) -> list[PendingItem]:
        """Review queue for one iteration, hardest (lowest confidence) first by default."""
        with self._lock:
            items = [p for p in self._pending.values() if p.iteration == iteration]
        if class_id is not None:
            items = [p for p in items if p.predicted_class == class_id]
        if sort == "confidence":
            items.sort(key=lambda p: (p.confidence, ref_key(p.ref)))
        elif sort == "ref":
            items.sort(key=lambda p: ref_key(p.ref))
        else:
            raise InputError(f"unknown sort {sort!r}")
        return items

    def max_iteration(self) -> int:
        with self._lock:
            its = [r.iteration for r in self._records.values()]
            its += [p.iteration for p in self._pending.values()]
            its += [it for (_, it) in self._enqueued]
        return max(its, default=0)

    def ledger(self) -> list[IterationLedgerRow]:
        with self._lock:
            return self._ledger_rows()

    def _ledger_rows(self) -> list[IterationLedgerRow]:
        """Derive P/C/T rows for every class and iteration seen so far.

        Iteration 1 is the manual pass, so P_1 = C_1 = manual count.
        For later iterations P counts enqueued predictions (whatever
        their outcome), C counts records whose final label equals the
        prediction, and T_k = T_{k-1} + C_k. Records corrected to a
        different class join that class's pool but no C count.
        """
        max_it = 0
        correct: dict[tuple[int, int], int] = {}
        for r in self._records.values():
            max_it = max(max_it, r.iteration)
            if r.iteration == 1 and r.provenance == "manual":
                key = (r.class_id, 1)
                correct[key] = correct.get(key, 0) + 1
            elif r.predicted_class is not None and r.class_id == r.predicted_class:
                key = (r.predicted_class, r.iteration)
                correct[key] = correct.get(key, 0) + 1
        for p in self._pending.values():
            max_it = max(max_it, p.iteration)
        for _, it in self._enqueued:
            max_it = max(max_it, it)
        rows: list[IterationLedgerRow] = []
        for class_id in range(len(self.catalogue)):
            total = 0
            for it in range(1, max_it + 1):
                c = correct.get((class_id, it), 0)
                p = c if it == 1 else self._enqueued.get((class_id, it), 0)
                total += c
                rows.append(IterationLedgerRow(class_id, it, p, c, total))
        return rows

    def exemplars(self, class_id: int, up_to_iteration: Optional[int] = None, limit: int = 6) -> list[PatchRef]:
        """Training-pool examples of one class, for reviewer reference thumbnails."""
        self.catalogue.check(class_id)
        k = up_to_iteration if up_to_iteration is not None else max(self.max_iteration(), 1)
        refs = [r.ref for r in self.training_pool(k) if r.class_id == class_id]
        return refs[:limit]

    def records(self) -> list[LabelRecord]:
        with self._lock:
            recs = list(self._records.values())
        recs.sort(key=lambda r: ref_key(r.ref))
        return recs

    def is_known(self, ref: PatchRef) -> bool:
        key = ref_key(ref)
        with self._lock:
            return key in self._records or key in self._pending or key in self._tombstones


def _record_dict(rec: LabelRecord) -> dict:
    return {
        "video_id": rec.video_id,
        "frame_index": rec.frame_index,
        "side": rec.side,
        "class_id": rec.class_id,
        "provenance": rec.provenance,
        "iteration": rec.iteration,
        "confidence": rec.confidence,
        "predicted_class": rec.predicted_class,
    }


def _pending_dict(item: PendingItem) -> dict:
    return {
        "video_id": item.video_id,
        "frame_index": item.frame_index,
        "side": item.side,
        "predicted_class": item.predicted_class,
        "confidence": item.confidence,
        "iteration": item.iteration,
    }
