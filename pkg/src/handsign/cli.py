"""Command-line interface.

Subcommands cover the full workflow: generate or ingest data, extract
hand patches, run the iterative labeling loop (predict + serve the
review UI + retrain), train sign classifiers, evaluate cross-subject,
export embeddings, and render report figures. Every command writes a
manifest beside its outputs and is deterministic given its seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

import cv2
import numpy as np

from .errors import InputError, StateError
from .manifest import write_manifest

logger = logging.getLogger(__name__)

DATA_ROOT_ENV = "HANDSIGN_DATA_ROOT"


def _data_root(value: Optional[str]) -> Path:
    if value:
        return Path(value)
    env = os.environ.get(DATA_ROOT_ENV)
    if env:
        return Path(env)
    raise InputError(f"no dataset given: pass --data or set {DATA_ROOT_ENV}")


def _load_experiment_config(path: Optional[str], dataset, seed: Optional[int]):
    from .pipeline import ExperimentConfig, desk_config

    if path:
        config = ExperimentConfig.from_dict(json.loads(Path(path).read_text()))
    else:
        config = desk_config(dataset)
    if seed is not None:
        config.seed = seed
    return config


def _open_store(store_dir: Path, catalogue_path: Optional[str]):
    from .store import ClassCatalogue, HandShapeStore

    store_dir.mkdir(parents=True, exist_ok=True)
    if (store_dir / "catalogue.json").exists():
        return HandShapeStore.open(store_dir)
    if catalogue_path:
        catalogue = ClassCatalogue.load(catalogue_path)
    else:
        catalogue = ClassCatalogue.default()
    catalogue.save(store_dir / "catalogue.json")
    return HandShapeStore(catalogue, root=store_dir)


def _read_patch(patches_root: Path, ref) -> np.ndarray:
    video_id, frame_index, side = ref
    path = patches_root / video_id / side / f"{frame_index:05d}.png"
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise InputError(f"missing patch image {path}")
    return img


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    from .synth import SynthSpec, generate

    if args.spec:
        spec = SynthSpec.from_dict(json.loads(Path(args.spec).read_text()))
    else:
        spec = SynthSpec(
            num_sign_classes=args.signs,
            num_subjects=args.subjects,
            num_handshape_classes=args.shapes,
            frames_per_video=args.frames,
            reps_per_sign=args.reps,
            patch_size=args.patch_size,
            subject_style_jitter=args.jitter,
            seed=args.seed,
        )
    out = Path(args.out)
    dataset = generate(spec, out)
    write_manifest(out, "synth", spec.to_dict(), seed=spec.seed)
    print(f"generated {len(dataset.videos)} videos under {out}")
    return 0


def cmd_extract(args) -> int:
    from .pose import CropConfig, extract_gesture, load_frames, load_keypoints, save_patches
    from .synth import SynthDataset

    dataset = SynthDataset(_data_root(args.data))
    if args.crop_config:
        crop = CropConfig.from_dict(json.loads(Path(args.crop_config).read_text()))
    else:
        crop = dataset.crop_config()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for meta in dataset.videos:
        vid = meta["video_id"]
        frames = load_frames(dataset.frames_dir(vid))
        _, poses = load_keypoints(dataset.keypoints_path(vid))
        sample = extract_gesture(frames, poses, crop, video_id=vid)
        save_patches(sample, out)
    write_manifest(out, "extract", {"crop": crop.to_dict(), "data": str(dataset.root)})
    print(f"extracted {len(dataset.videos)} videos into {out}")
    return 0


def cmd_ingest_labels(args) -> int:
    store = _open_store(Path(args.store), args.catalogue)
    rows = json.loads(Path(args.labels).read_text())
    labels = [((r["video_id"], r["frame_index"], r["side"]), r["class_id"]) for r in rows]
    added = store.ingest_manual(labels)
    store.save()
    write_manifest(Path(args.store), "ingest-labels", {"labels": str(args.labels), "count": added})
    print(f"ingested {added} manual labels")
    return 0


def cmd_predict_shapes(args) -> int:
    from .embedder import HandShapeEmbedder

    store = _open_store(Path(args.store), args.catalogue)
    embedder = HandShapeEmbedder.load(args.embedder)
    patches_root = Path(args.patches)
    refs = []
    for meta_path in sorted(patches_root.glob("*/meta.json")):
        meta = json.loads(meta_path.read_text())
        vid = meta["video_id"]
        for side, entries in sorted(meta["sides"].items()):
            for entry in entries:
                ref = (vid, int(entry["frame_index"]), side)
                if entry["valid"] and not store.is_known(ref):
                    refs.append(ref)
    if not refs:
        print("nothing to predict: every patch is already labeled, queued or rejected")
        return 0
    images = np.stack([_read_patch(patches_root, r) for r in refs])
    preds = embedder.predict(images, refs=refs)
    summary = store.ingest_predictions(
        [(p.patch_ref, p.class_id, p.confidence) for p in preds],
        threshold=args.threshold,
        iteration=args.iteration,
    )
    store.save()
    write_manifest(
        Path(args.store),
        "predict-shapes",
        {
            "embedder": str(args.embedder),
            "iteration": args.iteration,
            "threshold": args.threshold,
        },
    )
    print(
        f"iteration {args.iteration}: enqueued {summary.enqueued}, "
        f"discarded {summary.discarded}, skipped {summary.skipped}"
    )
    return 0


def cmd_serve_annotate(args) -> int:
    from .service import serve
    from .store import HandShapeStore

    store = HandShapeStore.open(args.store)
    serve(
        store,
        patches_root=args.patches,
        host=args.host,
        port=args.port,
        frontend_dir=args.frontend,
    )
    return 0


def cmd_train_embedder(args) -> int:
    from .embedder import EmbedderConfig, HandShapeEmbedder
    from .store import HandShapeStore

    store = HandShapeStore.open(args.store)
    iteration = args.iteration if args.iteration is not None else max(store.max_iteration(), 1)
    pool = store.training_pool(iteration)
    if not pool:
        raise StateError(f"training pool for iteration {iteration} is empty")
    patches_root = Path(args.patches)
    images = np.stack([_read_patch(patches_root, rec.ref) for rec in pool])
    labels = [rec.class_id for rec in pool]
    config = EmbedderConfig(
        num_classes=len(store.catalogue.names),
        backbone=args.backbone,
        pretrained=args.pretrained,
        patch_size=args.patch_size,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
    )
    embedder = HandShapeEmbedder(config, seed=args.seed)
    history = embedder.train(images, labels)
    embedder.freeze()
    out = Path(args.out)
    embedder.save(out)
    metrics_path = out.with_name(out.stem + "-metrics.jsonl")
    with open(metrics_path, "w") as f:
        for row in history:
            f.write(json.dumps(row, sort_keys=True) + "\n")
    write_manifest(
        out.parent,
        "train-embedder",
        {"config": config.to_dict(), "iteration": iteration, "pool_size": len(pool)},
        seed=args.seed,
    )
    print(
        f"trained on {len(pool)} patches (iteration <= {iteration}); "
        f"final val accuracy {history[-1]['val_accuracy']:.4f}; saved {out}"
    )
    return 0


def cmd_train_signs(args) -> int:
    from .embedder import HandShapeEmbedder
    from .pipeline import extract_corpus
    from .sequence import SequenceModelConfig, train_sign_classifier
    from .synth import SynthDataset

    dataset = SynthDataset(_data_root(args.data))
    if not args.joint and not args.embedder:
        raise StateError("separate-mode training needs a frozen embedder checkpoint: pass --embedder")
    if args.embedder:
        if not Path(args.embedder).exists():
            raise StateError(f"no embedder checkpoint at {args.embedder} (from --embedder)")
        embedder = HandShapeEmbedder.load(args.embedder)
    else:
        # joint mode from scratch: a fresh unfrozen backbone
        from .embedder import EmbedderConfig

        embedder = HandShapeEmbedder(
            EmbedderConfig(
                num_classes=len(dataset.catalogue.names),
                backbone="micro",
                patch_size=dataset.spec.patch_size,
            ),
            seed=args.seed,
        )
    samples = extract_corpus(dataset)
    chosen = [
        s for s in samples.values() if s.subject not in set(args.exclude_subject or [])
    ]
    chosen.sort(key=lambda s: s.video_id)
    config = SequenceModelConfig(
        num_classes=dataset.index["num_sign_classes"],
        hidden_size=args.hidden_size,
        frames_per_sequence=args.frames_per_sequence,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        fusion=args.fusion,
        max_epochs=args.epochs,
        filter_uninformative=args.filter_uninformative,
    )
    model, metrics = train_sign_classifier(
        chosen, embedder, config, seed=args.seed, joint_embedder=args.joint
    )
    out = Path(args.out)
    model.save(out)
    metrics_path = out.with_name(out.stem + "-metrics.jsonl")
    with open(metrics_path, "w") as f:
        for name, history in sorted(metrics.items()):
            for row in history:
                f.write(json.dumps({"model": name, **row}, sort_keys=True) + "\n")
    write_manifest(
        out.parent,
        "train-signs",
        {"config": config.to_dict(), "joint": args.joint, "videos": len(chosen)},
        seed=args.seed,
    )
    print(f"trained sign classifier on {len(chosen)} videos; saved {out}")
    return 0


def cmd_evaluate(args) -> int:
    from .evaluate import run_ablation
    from .synth import SynthDataset

    dataset = SynthDataset(_data_root(args.data))
    config = _load_experiment_config(args.config, dataset, args.seed)
    workdir = Path(args.workdir)
    table = run_ablation(dataset, args.axis, config, workdir, build_missing=args.build)
    write_manifest(
        workdir / "results",
        f"evaluate-{args.axis}",
        {"axis": args.axis, "config": config.to_dict(), "data": str(dataset.root)},
        seed=config.seed,
    )
    print(table.render(), end="")
    return 0


def cmd_export_embeddings(args) -> int:
    from .embedder import HandShapeEmbedder
    from .pipeline import extract_corpus
    from .synth import SynthDataset

    dataset = SynthDataset(_data_root(args.data))
    embedder = HandShapeEmbedder.load(args.embedder)
    samples = extract_corpus(dataset)
    refs, images = [], []
    for vid in sorted(samples):
        sample = samples[vid]
        for side in ("left", "right"):
            for p in sample.patches(side):
                refs.append(f"{vid}/{side}/{p.frame_index}")
                images.append(p.image)
    embeddings = embedder.embed(np.stack(images))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(out, refs=np.array(refs), embeddings=embeddings)
    write_manifest(
        out.parent,
        "export-embeddings",
        {"embedder": str(args.embedder), "count": len(refs), "dim": int(embeddings.shape[1])},
    )
    print(f"exported {len(refs)} embeddings of dim {embeddings.shape[1]} to {out}")
    return 0


def cmd_report(args) -> int:
    from .report import render_results_dir

    written = render_results_dir(args.results, args.out)
    write_manifest(
        Path(args.out) if args.out else Path(args.results) / "figures",
        "report",
        {"results": str(args.results), "figures": [p.name for p in written]},
    )
    for p in written:
        print(f"wrote {p}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="handsign",
        description="two-stage sign recognition: hand-shape embedder + per-hand sequence models",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a deterministic synthetic gesture corpus")
    p.add_argument("--spec", help="JSON file with generator settings (overrides the flags)")
    p.add_argument("--signs", type=int, default=8)
    p.add_argument("--subjects", type=int, default=6)
    p.add_argument("--shapes", type=int, default=10)
    p.add_argument("--frames", type=int, default=30)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--patch-size", type=int, default=32)
    p.add_argument("--jitter", type=float, default=0.35)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="crop hand patches for every video")
    p.add_argument("--data", help=f"corpus root (default ${DATA_ROOT_ENV})")
    p.add_argument("--crop-config", help="JSON crop settings; default: corpus recommendation")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("ingest-labels", help="store manual hand-shape labels (iteration 1)")
    p.add_argument("--store", required=True)
    p.add_argument("--catalogue", help="class catalogue JSON for a fresh store")
    p.add_argument("--labels", required=True, help="JSON list of {video_id, frame_index, side, class_id}")
    p.set_defaults(func=cmd_ingest_labels)

    p = sub.add_parser("predict-shapes", help="queue confident predictions for review")
    p.add_argument("--store", required=True)
    p.add_argument("--catalogue")
    p.add_argument("--embedder", required=True)
    p.add_argument("--patches", required=True)
    p.add_argument("--iteration", type=int, required=True)
    p.add_argument("--threshold", type=float, default=0.9)
    p.set_defaults(func=cmd_predict_shapes)

    p = sub.add_parser("serve-annotate", help="serve the review queue over HTTP")
    p.add_argument("--store", required=True)
    p.add_argument("--patches", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--frontend", help="static directory with the annotation UI build")
    p.set_defaults(func=cmd_serve_annotate)

    p = sub.add_parser("train-embedder", help="fine-tune the hand-shape embedder on the store pool")
    p.add_argument("--store", required=True)
    p.add_argument("--patches", required=True)
    p.add_argument("--iteration", type=int, help="use pool up to this iteration (default: latest)")
    p.add_argument("--backbone", default="micro", help="micro or resnet50")
    p.add_argument("--pretrained", action="store_true")
    p.add_argument("--patch-size", type=int)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_embedder)

    p = sub.add_parser("train-signs", help="train per-hand sequence classifiers")
    p.add_argument("--data", help=f"corpus root (default ${DATA_ROOT_ENV})")
    p.add_argument("--embedder", help="frozen embedder checkpoint (required unless --joint)")
    p.add_argument("--joint", action="store_true", help="unfreeze the embedder and train end to end")
    p.add_argument("--exclude-subject", action="append", help="leave these subjects out of training")
    p.add_argument("--fusion", default="mean", choices=["mean", "max", "concat"])
    p.add_argument("--filter-uninformative", action="store_true")
    p.add_argument("--hidden-size", type=int, default=128)
    p.add_argument("--frames-per-sequence", type=int, default=20)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_signs)

    p = sub.add_parser("evaluate", help="leave-one-subject-out evaluation and ablations")
    p.add_argument("--data", help=f"corpus root (default ${DATA_ROOT_ENV})")
    p.add_argument("--workdir", required=True)
    p.add_argument("--axis", default="iterations", choices=["iterations", "hands", "joint"])
    p.add_argument("--build", action="store_true", help="train missing artifacts instead of failing")
    p.add_argument("--config", help="experiment config JSON (default: desk-scale settings)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-embeddings", help="dump every patch embedding to an npz file")
    p.add_argument("--data", help=f"corpus root (default ${DATA_ROOT_ENV})")
    p.add_argument("--embedder", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_embeddings)

    p = sub.add_parser("report", help="render figures for saved results tables")
    p.add_argument("--results", required=True)
    p.add_argument("--out", help="figures directory (default <results>/figures)")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except StateError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
