"""End-to-end orchestration.

Drives the whole loop for one corpus: extract hand patches, simulate the
iterative labeling process with an oracle annotator, train embedders per
iteration, train sign classifiers on top, and evaluate leave-one-subject-
out. Every per-split artifact lands under workdir/splits/<subject>/ so
ablations can reuse checkpoints instead of retraining.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .embedder import EmbedderConfig, HandShapeEmbedder
from .errors import InputError, StateError
from .evaluate import ResultsTable, SplitPlan, accuracy, audit_no_overlap, make_splits
from .pose import CropConfig, GestureSample, extract_gesture, load_frames, load_keypoints
from .sequence import (
    SequenceModelConfig,
    SignModel,
    build_sequences,
    train_sign_classifier,
)
from .store import HandShapeStore, PatchRef
from .synth import OracleAnnotator, SynthDataset

logger = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    sequence: SequenceModelConfig = field(default_factory=SequenceModelConfig)
    iterations: int = 3
    confidence_threshold: float = 0.9
    oracle_policy: str = "relabel"
    eval_iterations: Optional[tuple[int, ...]] = None  # default: 0, 1, final
    joint_max_epochs: int = 4  # the joint-learning ablation is costly; cap it
    mirror_left: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise InputError("need at least the manual iteration")
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise InputError("confidence_threshold must lie in [0, 1]")
        if self.eval_iterations is not None:
            self.eval_iterations = tuple(sorted(set(int(k) for k in self.eval_iterations)))
            if any(k < 0 or k > self.iterations for k in self.eval_iterations):
                raise InputError("eval_iterations must lie in [0, iterations]")

    def iterations_to_evaluate(self) -> tuple[int, ...]:
        if self.eval_iterations is not None:
            return self.eval_iterations
        return tuple(sorted({0, 1, self.iterations}))

    def to_dict(self) -> dict:
        return {
            "embedder": self.embedder.to_dict(),
            "sequence": self.sequence.to_dict(),
            "iterations": self.iterations,
            "confidence_threshold": self.confidence_threshold,
            "oracle_policy": self.oracle_policy,
            "eval_iterations": list(self.eval_iterations) if self.eval_iterations else None,
            "joint_max_epochs": self.joint_max_epochs,
            "mirror_left": self.mirror_left,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        d["embedder"] = EmbedderConfig.from_dict(d["embedder"])
        d["sequence"] = SequenceModelConfig.from_dict(d["sequence"])
        if d.get("eval_iterations"):
            d["eval_iterations"] = tuple(d["eval_iterations"])
        return cls(**d)


def desk_config(dataset: SynthDataset, seed: int = 0) -> ExperimentConfig:
    """Small-model configuration sized for CPU-only synthetic runs."""
    n_shapes = len(dataset.catalogue.names)
    n_signs = dataset.index["num_sign_classes"]
    embedder = EmbedderConfig(
        num_classes=n_shapes,
        backbone="micro",
        patch_size=dataset.spec.patch_size,
        learning_rate=1e-3,
        batch_size=128,
        epochs=3,
        augment=True,  # tint invariance matters cross-subject
    )
    sequence = SequenceModelConfig(
        num_layers=2,
        hidden_size=128,
        frames_per_sequence=20,
        num_classes=n_signs,
        batch_size=32,
        learning_rate=3e-3,
        max_epochs=40,
        patience=8,
    )
    return ExperimentConfig(embedder=embedder, sequence=sequence, seed=seed)


# ---------------------------------------------------------------------------
# corpus extraction


def extract_corpus(
    dataset: SynthDataset,
    crop: Optional[CropConfig] = None,
    mirror_left: bool = False,
) -> dict[str, GestureSample]:
    """Crop every hand of every video; returns samples keyed by video id."""
    torch.set_num_threads(1)
    crop = crop or dataset.crop_config()
    samples: dict[str, GestureSample] = {}
    for meta in dataset.videos:
        vid = meta["video_id"]
        frames = load_frames(dataset.frames_dir(vid))
        _, poses = load_keypoints(dataset.keypoints_path(vid))
        sample = extract_gesture(frames, poses, crop, video_id=vid)
        sample.subject = meta["subject"]
        sample.sign_class = meta["sign_class"]
        if mirror_left:
            for patch in sample.left:
                patch.image = np.ascontiguousarray(patch.image[:, ::-1])
        samples[vid] = sample
    logger.info("extracted %d videos", len(samples))
    return samples


class PatchLookup:
    """Images by (video_id, frame_index, side), for turning store refs into pixels."""

    def __init__(self, samples: dict[str, GestureSample]):
        self._images: dict[PatchRef, np.ndarray] = {}
        for sample in samples.values():
            for side in ("left", "right"):
                for p in sample.patches(side):
                    self._images[(sample.video_id, p.frame_index, side)] = p.image

    def images(self, refs: Sequence[PatchRef]) -> np.ndarray:
        try:
            return np.stack([self._images[tuple(r)] for r in refs])
        except KeyError as e:
            raise InputError(f"no patch for ref {e.args[0]}") from None

    def refs_for_videos(self, samples: Sequence[GestureSample]) -> list[PatchRef]:
        out = []
        for sample in samples:
            for side in ("left", "right"):
                for p in sample.patches(side):
                    out.append((sample.video_id, p.frame_index, side))
        return out


# ---------------------------------------------------------------------------
# iterative labeling simulation


def _split_samples(samples: dict[str, GestureSample], split: SplitPlan):
    train = [s for v, s in sorted(samples.items()) if s.subject in split.train_subjects]
    test = [s for v, s in sorted(samples.items()) if s.subject == split.test_subject]
    if not train or not test:
        raise InputError(f"split {split.test_subject} has an empty side")
    return train, test


def _reps_by_video(dataset: SynthDataset) -> dict[str, int]:
    return {meta["video_id"]: meta["rep"] for meta in dataset.videos}


def simulate_iterative_labeling(
    dataset: SynthDataset,
    samples: dict[str, GestureSample],
    split: SplitPlan,
    config: ExperimentConfig,
    split_dir: Path,
) -> tuple[HandShapeStore, dict[int, HandShapeEmbedder]]:
    """Run the bootstrap labeling loop for one split's training subjects.

    Iteration 1 labels the first repetition of every sign manually (via
    the oracle); each later iteration k predicts on repetition k-1 with
    the previous embedder, queues the confident predictions, resolves
    the queue with the oracle, and retrains. Returns the store plus one
    frozen embedder per iteration (0 = untrained baseline).
    """
    if config.iterations > dataset.spec.reps_per_sign:
        raise InputError(
            f"{config.iterations} iterations need {config.iterations} repetitions per sign, "
            f"corpus has {dataset.spec.reps_per_sign}"
        )
    torch.set_num_threads(1)
    split_dir.mkdir(parents=True, exist_ok=True)
    store_dir = split_dir / "store"
    store_dir.mkdir(exist_ok=True)
    dataset.catalogue.save(store_dir / "catalogue.json")
    store = HandShapeStore(dataset.catalogue)
    oracle = OracleAnnotator(dataset, policy=config.oracle_policy)
    lookup = PatchLookup(samples)
    train_samples, test_samples = _split_samples(samples, split)
    reps = _reps_by_video(dataset)
    by_rep: dict[int, list[GestureSample]] = {}
    for s in train_samples:
        by_rep.setdefault(reps[s.video_id], []).append(s)

    audit_no_overlap(
        [s.video_id for s in train_samples],
        [s.video_id for s in test_samples],
        context=f"split {split.test_subject} videos",
    )

    embedders: dict[int, HandShapeEmbedder] = {}
    base = HandShapeEmbedder(config.embedder, seed=config.seed)
    base.freeze()
    base.save(split_dir / "embedder-iter0.pt")
    embedders[0] = base

    manual_refs = lookup.refs_for_videos(by_rep.get(0, []))
    store.ingest_manual(oracle.label(manual_refs))
    logger.info("split %s: %d manual labels", split.test_subject, len(manual_refs))

    for k in range(1, config.iterations + 1):
        pool = store.training_pool(k)
        refs = [r.ref for r in pool]
        classes = [r.class_id for r in pool]
        audit_no_overlap(
            {r[0] for r in refs},
            [s.video_id for s in test_samples],
            context=f"split {split.test_subject} pool iter {k}",
        )
        emb = HandShapeEmbedder(config.embedder, seed=config.seed)
        emb.train(lookup.images(refs), classes)
        emb.freeze()
        emb.save(split_dir / f"embedder-iter{k}.pt")
        embedders[k] = emb
        if k < config.iterations:
            next_refs = lookup.refs_for_videos(by_rep.get(k, []))
            preds = emb.predict(lookup.images(next_refs), refs=next_refs)
            store.ingest_predictions(
                [(p.patch_ref, p.class_id, p.confidence) for p in preds],
                threshold=config.confidence_threshold,
                iteration=k + 1,
            )
            decisions = oracle.decide(store.pending_queue(iteration=k + 1))
            store.apply_corrections(decisions, iteration=k + 1)
    store.save(store_dir)
    return store, embedders


# ---------------------------------------------------------------------------
# sign training + evaluation per split


def evaluate_split_iteration(
    dataset: SynthDataset,
    samples: dict[str, GestureSample],
    split: SplitPlan,
    embedder: HandShapeEmbedder,
    config: ExperimentConfig,
    iteration: int,
    split_dir: Path,
) -> tuple[SignModel, float]:
    """Train sign models on one split with one iteration's embedder; test accuracy."""
    train_samples, test_samples = _split_samples(samples, split)
    audit_no_overlap(
        [s.video_id for s in train_samples],
        [s.video_id for s in test_samples],
        context=f"split {split.test_subject} signs iter {iteration}",
    )
    model, _ = train_sign_classifier(
        train_samples, embedder, config.sequence, seed=config.seed
    )
    model.save(split_dir / f"signs-iter{iteration}.pt")
    acc = _score(model, test_samples, embedder, config.sequence)
    return model, acc


def _score(model: SignModel, test_samples, embedder, seq_config, fusion=None, side=None) -> float:
    left, right, labels, vids = build_sequences(test_samples, embedder, seq_config)
    if side is not None:
        preds = model.predict_single_hand(left if side == "left" else right, side, vids)
    else:
        preds = model.predict(left, right, vids, fusion=fusion)
    return accuracy([p.predicted_class for p in preds], labels)


# ---------------------------------------------------------------------------
# full runs


def _split_dir(workdir: Path, split: SplitPlan) -> Path:
    return Path(workdir) / "splits" / split.test_subject


def _require(path: Path, build_missing: bool, hint: str) -> None:
    if not path.exists() and not build_missing:
        raise StateError(f"missing artifact {path}; {hint}")


def run_cross_subject(
    dataset: SynthDataset,
    config: ExperimentConfig,
    workdir: Path | str,
) -> tuple[ResultsTable, dict]:
    """Iterations-axis table over every leave-one-subject-out split."""
    workdir = Path(workdir)
    samples = extract_corpus(dataset, mirror_left=config.mirror_left)
    splits = make_splits(dataset.subjects)
    eval_iters = config.iterations_to_evaluate()
    per_iter: dict[int, dict[str, float]] = {k: {} for k in eval_iters}
    ledgers = {}
    for split in splits:
        sdir = _split_dir(workdir, split)
        store, embedders = simulate_iterative_labeling(dataset, samples, split, config, sdir)
        ledgers[split.test_subject] = [vars(r) for r in store.ledger()]
        for k in eval_iters:
            _, acc = evaluate_split_iteration(
                dataset, samples, split, embedders[k], config, k, sdir
            )
            per_iter[k][split.test_subject] = acc
            logger.info("split %s iteration %d accuracy %.4f", split.test_subject, k, acc)
    table = ResultsTable("iterations")
    for k in eval_iters:
        table.add(f"iteration-{k}", per_iter[k])
    table.save(workdir / "results")
    (workdir / "results" / "ledgers.json").write_text(
        json.dumps(ledgers, indent=2, sort_keys=True)
    )
    return table, {"ledgers": ledgers}


def run_axis(
    dataset: SynthDataset,
    axis: str,
    config: ExperimentConfig,
    workdir: Path,
    build_missing: bool = False,
) -> ResultsTable:
    """Dispatch one ablation axis; see evaluate.run_ablation for the contract."""
    workdir = Path(workdir)
    if axis == "iterations":
        first = _split_dir(workdir, make_splits(dataset.subjects)[0])
        final = first / f"embedder-iter{config.iterations}.pt"
        if final.exists() and not build_missing:
            # artifacts present: reuse them rather than retraining
            return _iterations_from_artifacts(dataset, config, workdir)
        _require(final, build_missing, "run with build_missing=True to train it")
        table, _ = run_cross_subject(dataset, config, workdir)
        return table
    if axis == "hands":
        return _run_hands_axis(dataset, config, workdir, build_missing)
    if axis == "joint":
        return _run_joint_axis(dataset, config, workdir, build_missing)
    raise InputError(f"unknown ablation axis {axis!r}")


def _ensure_split_artifacts(dataset, samples, split, config, workdir, build_missing):
    sdir = _split_dir(workdir, split)
    final = sdir / f"embedder-iter{config.iterations}.pt"
    if not final.exists():
        _require(final, build_missing, "run the iterations axis first or pass build_missing=True")
        simulate_iterative_labeling(dataset, samples, split, config, sdir)
    return sdir


def _iterations_from_artifacts(dataset, config, workdir) -> ResultsTable:
    samples = extract_corpus(dataset, mirror_left=config.mirror_left)
    splits = make_splits(dataset.subjects)
    eval_iters = config.iterations_to_evaluate()
    table = ResultsTable("iterations")
    per_iter: dict[int, dict[str, float]] = {k: {} for k in eval_iters}
    for split in splits:
        sdir = _split_dir(workdir, split)
        _, test_samples = _split_samples(samples, split)
        for k in eval_iters:
            emb_path = sdir / f"embedder-iter{k}.pt"
            model_path = sdir / f"signs-iter{k}.pt"
            _require(emb_path, False, "rerun the iterations axis")
            embedder = HandShapeEmbedder.load(emb_path)
            if model_path.exists():
                model = SignModel.load(model_path)
                acc = _score(model, test_samples, embedder, config.sequence)
            else:
                _, acc = evaluate_split_iteration(
                    dataset, samples, split, embedder, config, k, sdir
                )
            per_iter[k][split.test_subject] = acc
    for k in eval_iters:
        table.add(f"iteration-{k}", per_iter[k])
    table.save(workdir / "results")
    return table


def _run_hands_axis(dataset, config, workdir, build_missing) -> ResultsTable:
    """left / right / both-max / both-concat / both-mean on the final embedder."""
    samples = extract_corpus(dataset, mirror_left=config.mirror_left)
    splits = make_splits(dataset.subjects)
    rows = ("left", "right", "both-max", "both-concat", "both-mean")
    per_row: dict[str, dict[str, float]] = {r: {} for r in rows}
    concat_config = copy.deepcopy(config.sequence)
    concat_config.fusion = "concat"
    for split in splits:
        sdir = _ensure_split_artifacts(dataset, samples, split, config, workdir, build_missing)
        embedder = HandShapeEmbedder.load(sdir / f"embedder-iter{config.iterations}.pt")
        model_path = sdir / "signs-hands.pt"
        train_samples, test_samples = _split_samples(samples, split)
        if model_path.exists():
            model = SignModel.load(model_path)
        else:
            model, _ = train_sign_classifier(
                train_samples, embedder, concat_config, seed=config.seed
            )
            model.save(model_path)
        for row, kwargs in (
            ("left", {"side": "left"}),
            ("right", {"side": "right"}),
            ("both-max", {"fusion": "max"}),
            ("both-concat", {"fusion": "concat"}),
            ("both-mean", {"fusion": "mean"}),
        ):
            per_row[row][split.test_subject] = _score(
                model, test_samples, embedder, concat_config, **kwargs
            )
    table = ResultsTable("hands")
    for row in rows:
        table.add(row, per_row[row])
    table.save(workdir / "results")
    return table


def _run_joint_axis(dataset, config, workdir, build_missing) -> ResultsTable:
    """Separate (frozen embedder) vs joint (end-to-end unfrozen) training."""
    samples = extract_corpus(dataset, mirror_left=config.mirror_left)
    splits = make_splits(dataset.subjects)
    per_row: dict[str, dict[str, float]] = {"separate": {}, "joint": {}}
    joint_config = copy.deepcopy(config.sequence)
    joint_config.max_epochs = config.joint_max_epochs
    joint_config.patience = config.joint_max_epochs
    checksums = {}
    for split in splits:
        sdir = _ensure_split_artifacts(dataset, samples, split, config, workdir, build_missing)
        final_emb = sdir / f"embedder-iter{config.iterations}.pt"
        train_samples, test_samples = _split_samples(samples, split)

        embedder = HandShapeEmbedder.load(final_emb)
        model_path = sdir / f"signs-iter{config.iterations}.pt"
        if model_path.exists():
            model = SignModel.load(model_path)
        else:
            model, _ = train_sign_classifier(
                train_samples, embedder, config.sequence, seed=config.seed
            )
            model.save(model_path)
        per_row["separate"][split.test_subject] = _score(
            model, test_samples, embedder, config.sequence
        )

        joint_emb = HandShapeEmbedder.load(final_emb)
        before = joint_emb.checksum()
        joint_model, _ = train_sign_classifier(
            train_samples, joint_emb, joint_config, seed=config.seed, joint_embedder=True
        )
        after = joint_emb.checksum()
        checksums[split.test_subject] = {"before": before, "after": after}
        joint_model.save(sdir / "signs-joint.pt")
        joint_emb.save(sdir / "embedder-joint.pt")
        per_row["joint"][split.test_subject] = _score(
            joint_model, test_samples, joint_emb, joint_config
        )
    table = ResultsTable("joint")
    table.add("separate", per_row["separate"])
    table.add("joint", per_row["joint"])
    table.save(workdir / "results")
    (Path(workdir) / "results" / "joint-checksums.json").write_text(
        json.dumps(checksums, indent=2, sort_keys=True)
    )
    return table
