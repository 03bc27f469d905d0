"""Deterministic synthetic gesture corpus.

Renders short videos of two "hands", each showing a parametric glyph that
stands in for a hand shape. Every sign class is a fixed ordered triple of
glyph shapes performed by the right hand (the left hand joins for half
the classes and idles in the rest pose otherwise), with rest frames at
the clip boundaries and garbage frames at shape transitions. Subjects
differ by persistent style (tint, background texture, scale and rotation
bias) so cross-subject generalization is a real, if small, gap.

Everything is derived from integer seeds via independent seed sequences,
so regenerating a corpus is bit-identical and per-video content does not
depend on generation order.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import cv2
import numpy as np

from .errors import InputError
from .pose import CropConfig, HAND_KEYPOINTS, PoseFrame, save_keypoints
from .store import ClassCatalogue, GARBAGE_CLASS, PendingItem, PatchRef, REST_CLASS

logger = logging.getLogger(__name__)

FRAME_WIDTH = 224
FRAME_HEIGHT = 168

# Informative glyph kinds, in catalogue order. Garbage and rest are drawn
# by dedicated renderers and always occupy the last two catalogue slots.
# Ordered so small catalogues use the most mutually distinct shapes;
# rotation-ambiguous pairs (plus/cross, hbars/vbars) sit far apart.
GLYPH_KINDS = (
    "ring",
    "square",
    "triangle",
    "plus",
    "star",
    "hbars",
    "target",
    "halfdisk",
    "wedge",
    "diamond",
    "tee",
    "vbars",
    "hexagon",
    "cross",
)


@dataclass
class SynthSpec:
    num_sign_classes: int = 8
    num_subjects: int = 6
    num_handshape_classes: int = 10  # includes the garbage and rest slots
    frames_per_video: int = 30
    reps_per_sign: int = 3
    patch_size: int = 32
    glyph_size: int = 56
    subject_style_jitter: float = 0.35
    two_handed_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.num_sign_classes < 2:
            raise InputError("need at least two sign classes")
        if self.num_subjects < 2:
            raise InputError("need at least two subjects for cross-subject splits")
        if self.num_handshape_classes < 5:
            raise InputError("need at least three informative shapes plus garbage and rest")
        if self.num_handshape_classes - 2 > len(GLYPH_KINDS):
            raise InputError(
                f"at most {len(GLYPH_KINDS) + 2} hand-shape classes are supported, "
                f"got {self.num_handshape_classes}"
            )
        if self.frames_per_video < 12:
            raise InputError("videos need at least 12 frames to fit rest/transition structure")
        if self.reps_per_sign < 1:
            raise InputError("reps_per_sign must be positive")
        n_informative = self.num_handshape_classes - 2
        if n_informative**3 < self.num_sign_classes:
            raise InputError("not enough shape triples to give every sign a distinct signature")
        if not 0.0 <= self.two_handed_fraction <= 1.0:
            raise InputError("two_handed_fraction must be in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        return cls(**d)


def _catalogue_for(spec: SynthSpec) -> ClassCatalogue:
    informative = [GLYPH_KINDS[i] for i in range(spec.num_handshape_classes - 2)]
    return ClassCatalogue(tuple(informative) + (GARBAGE_CLASS, REST_CLASS))


def _rotated(points: np.ndarray, cx: float, cy: float, degrees: float) -> np.ndarray:
    theta = math.radians(degrees)
    rot = np.array(
        [[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]]
    )
    return (points - (cx, cy)) @ rot.T + (cx, cy)


def _poly(canvas, points, color, thickness=None):
    pts = np.round(points).astype(np.int32).reshape(-1, 1, 2)
    if thickness is None:
        cv2.fillPoly(canvas, [pts], color)
    else:
        cv2.polylines(canvas, [pts], True, color, thickness, lineType=cv2.LINE_AA)


def draw_glyph(canvas: np.ndarray, kind: str, cx: float, cy: float, size: float,
               rot: float, color: tuple, rng: np.random.Generator) -> None:
    """Draw one glyph centered at (cx, cy) into a HxWx3 uint8 canvas."""
    r = size / 2
    t = max(2, int(round(size / 9)))

    def rp(pts):
        return _rotated(np.asarray(pts, dtype=float), cx, cy, rot)

    if kind == "ring":
        cv2.circle(canvas, (int(round(cx)), int(round(cy))), int(r * 0.85), color, t, cv2.LINE_AA)
    elif kind == "square":
        _poly(canvas, rp([(cx - r * 0.8, cy - r * 0.8), (cx + r * 0.8, cy - r * 0.8),
                          (cx + r * 0.8, cy + r * 0.8), (cx - r * 0.8, cy + r * 0.8)]), color)
    elif kind == "triangle":
        _poly(canvas, rp([(cx, cy - r), (cx + r * 0.95, cy + r * 0.75), (cx - r * 0.95, cy + r * 0.75)]), color)
    elif kind == "plus":
        _poly(canvas, rp([(cx - r, cy - t), (cx + r, cy - t), (cx + r, cy + t), (cx - r, cy + t)]), color)
        _poly(canvas, rp([(cx - t, cy - r), (cx + t, cy - r), (cx + t, cy + r), (cx - t, cy + r)]), color)
    elif kind == "cross":
        for sign in (1, -1):
            a = rp([(cx - r * 0.9, cy - sign * r * 0.9), (cx + r * 0.9, cy + sign * r * 0.9)])
            cv2.line(canvas, tuple(np.round(a[0]).astype(int)), tuple(np.round(a[1]).astype(int)),
                     color, t, cv2.LINE_AA)
    elif kind == "star":
        pts = []
        for i in range(10):
            rad = r if i % 2 == 0 else r * 0.45
            ang = math.pi / 2 + i * math.pi / 5
            pts.append((cx + rad * math.cos(ang), cy - rad * math.sin(ang)))
        _poly(canvas, rp(pts), color)
    elif kind == "hbars":
        for k in (-1, 0, 1):
            yy = cy + k * r * 0.7
            _poly(canvas, rp([(cx - r, yy - t / 1.5), (cx + r, yy - t / 1.5),
                              (cx + r, yy + t / 1.5), (cx - r, yy + t / 1.5)]), color)
    elif kind == "vbars":
        for k in (-1, 0, 1):
            xx = cx + k * r * 0.7
            _poly(canvas, rp([(xx - t / 1.5, cy - r), (xx + t / 1.5, cy - r),
                              (xx + t / 1.5, cy + r), (xx - t / 1.5, cy + r)]), color)
    elif kind == "diamond":
        _poly(canvas, rp([(cx, cy - r), (cx + r, cy), (cx, cy + r), (cx - r, cy)]), color, thickness=t)
    elif kind == "target":
        cv2.circle(canvas, (int(round(cx)), int(round(cy))), int(r * 0.9), color, t, cv2.LINE_AA)
        cv2.circle(canvas, (int(round(cx)), int(round(cy))), max(2, int(r * 0.35)), color, -1, cv2.LINE_AA)
    elif kind == "tee":
        _poly(canvas, rp([(cx - r, cy - r * 0.9), (cx + r, cy - r * 0.9),
                          (cx + r, cy - r * 0.9 + 2 * t), (cx - r, cy - r * 0.9 + 2 * t)]), color)
        _poly(canvas, rp([(cx - t, cy - r * 0.9), (cx + t, cy - r * 0.9),
                          (cx + t, cy + r), (cx - t, cy + r)]), color)
    elif kind == "wedge":
        _poly(canvas, rp([(cx - r * 0.9, cy - r * 0.9), (cx + r * 0.9, cy + r * 0.9),
                          (cx - r * 0.9, cy + r * 0.9)]), color)
    elif kind == "hexagon":
        pts = [(cx + r * math.cos(math.pi / 6 + i * math.pi / 3),
                cy + r * math.sin(math.pi / 6 + i * math.pi / 3)) for i in range(6)]
        _poly(canvas, rp(pts), color, thickness=t)
    elif kind == "halfdisk":
        cv2.ellipse(canvas, (int(round(cx)), int(round(cy))), (int(r * 0.95), int(r * 0.95)),
                    rot, 180, 360, color, -1, cv2.LINE_AA)
    elif kind == GARBAGE_CLASS:
        # unstructured clutter: random dots, no stable geometry
        for _ in range(18):
            px = cx + rng.uniform(-r, r)
            py = cy + rng.uniform(-r, r)
            rad = int(rng.integers(1, max(2, int(r * 0.22))))
            shade = tuple(int(v) for v in rng.integers(30, 220, size=3))
            cv2.circle(canvas, (int(px), int(py)), rad, shade, -1, cv2.LINE_AA)
    elif kind == REST_CLASS:
        cv2.ellipse(canvas, (int(round(cx)), int(round(cy))), (int(r * 0.9), int(r * 0.3)),
                    rot * 0.2, 0, 360, color, -1, cv2.LINE_AA)
    else:
        raise InputError(f"unknown glyph kind {kind!r}")


# 21 keypoint template positions in the glyph box unit square. The four
# box corners are exact so downstream crop geometry can be checked
# against ground truth; the rest get small per-frame jitter.
_KP_TEMPLATE = np.array(
    [
        (0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0),
        (0.5, 0.0), (0.0, 0.5), (1.0, 0.5), (0.5, 1.0),
        (0.2, 0.2), (0.5, 0.2), (0.8, 0.2),
        (0.2, 0.5), (0.35, 0.35), (0.65, 0.35),
        (0.5, 0.5), (0.8, 0.5), (0.35, 0.65),
        (0.65, 0.65), (0.2, 0.8), (0.5, 0.8), (0.8, 0.8),
    ]
)
assert len(_KP_TEMPLATE) == HAND_KEYPOINTS


@dataclass
class _SubjectStyle:
    base_bg: np.ndarray  # 3-vector
    texture: np.ndarray  # low-frequency HxWx1 field
    tint: np.ndarray  # 3-vector added to glyph color
    scale: float
    rot_bias: float
    center_shift: np.ndarray  # 2-vector, pixels

    @classmethod
    def sample(cls, spec: SynthSpec, subject_index: int) -> "_SubjectStyle":
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1000 + subject_index]))
        j = spec.subject_style_jitter
        base = rng.uniform(150, 215, size=3)
        grid = rng.uniform(-1, 1, size=(5, 7))
        texture = cv2.resize(grid, (FRAME_WIDTH, FRAME_HEIGHT), interpolation=cv2.INTER_CUBIC)
        texture = texture[..., None] * 24 * j
        tint = rng.uniform(-70, 70, size=3) * j
        scale = 1.0 + rng.uniform(-0.07, 0.07) * (1 + j)
        rot_bias = rng.uniform(-7, 7) * (1 + j)
        shift = rng.uniform(-5, 5, size=2)
        return cls(base, texture, tint, scale, rot_bias, shift)


def _timeline(spec: SynthSpec, signature: tuple[int, ...], rest_id: int, garbage_id: int) -> list[int]:
    """Per-frame shape ids: rest at both ends, garbage at segment joins."""
    F = spec.frames_per_video
    n_rest = max(1, int(round(0.08 * F)))
    interior = F - 2 * n_rest
    n_gap = len(signature) - 1
    seg_total = interior - n_gap
    base, extra = divmod(seg_total, len(signature))
    timeline = [rest_id] * n_rest
    for i, shape in enumerate(signature):
        length = base + (1 if i < extra else 0)
        timeline.extend([shape] * length)
        if i < n_gap:
            timeline.append(garbage_id)
    timeline.extend([rest_id] * (F - len(timeline)))
    return timeline


def sign_signatures(spec: SynthSpec) -> dict[int, dict]:
    """Ordered shape triples per sign class, plus handedness.

    Right-hand signatures are distinct across signs; two-handed signs get
    an independent left-hand triple. Derived from the corpus seed only.
    """
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 424242]))
    n_informative = spec.num_handshape_classes - 2
    seen = set()
    out = {}
    n_two_handed = int(round(spec.two_handed_fraction * spec.num_sign_classes))
    for sign in range(spec.num_sign_classes):
        while True:
            sig = tuple(int(v) for v in rng.integers(0, n_informative, size=3))
            if sig not in seen:
                seen.add(sig)
                break
        two_handed = sign < n_two_handed
        left = None
        if two_handed:
            left = tuple(int(v) for v in rng.integers(0, n_informative, size=3))
        out[sign] = {"right": sig, "left": left, "two_handed": two_handed}
    return out


def _hand_frame(canvas, rng, style, spec, shape_name, cx, cy):
    """Draw one hand; returns (glyph box, 21x3 keypoints)."""
    g = spec.glyph_size * style.scale * rng.uniform(0.92, 1.08)
    rot = style.rot_bias + rng.uniform(-10, 10)
    cx = cx + style.center_shift[0] + rng.uniform(-4, 4)
    cy = cy + style.center_shift[1] + rng.uniform(-4, 4)
    base_color = np.clip(np.array([60.0, 60.0, 60.0]) + style.tint + rng.uniform(-8, 8, 3), 5, 160)
    color = tuple(int(v) for v in base_color)
    draw_glyph(canvas, shape_name, cx, cy, g, rot, color, rng)
    x0, y0 = cx - g / 2, cy - g / 2
    kps = np.empty((HAND_KEYPOINTS, 3))
    kps[:, 0] = x0 + _KP_TEMPLATE[:, 0] * g
    kps[:, 1] = y0 + _KP_TEMPLATE[:, 1] * g
    kps[4:, :2] += rng.uniform(-2, 2, size=(HAND_KEYPOINTS - 4, 2))
    kps[:, 2] = rng.uniform(0.7, 1.0, size=HAND_KEYPOINTS)
    box = (float(x0), float(y0), float(x0 + g), float(y0 + g))
    return box, kps


def _body_keypoints(rng) -> np.ndarray:
    anchors = np.array(
        [
            (0.50, 0.12), (0.50, 0.25), (0.30, 0.28), (0.70, 0.28),
            (0.24, 0.45), (0.76, 0.45), (0.40, 0.85), (0.60, 0.85),
        ]
    )
    pts = np.empty((len(anchors), 3))
    pts[:, 0] = anchors[:, 0] * FRAME_WIDTH + rng.uniform(-3, 3, len(anchors))
    pts[:, 1] = anchors[:, 1] * FRAME_HEIGHT + rng.uniform(-3, 3, len(anchors))
    pts[:, 2] = rng.uniform(0.85, 1.0, len(anchors))
    return pts


def render_video(spec: SynthSpec, subject_index: int, sign: int, rep: int,
                 signatures: Optional[dict] = None):
    """Render one clip; returns (frames, pose frames, per-frame truth)."""
    if signatures is None:
        signatures = sign_signatures(spec)
    catalogue = _catalogue_for(spec)
    style = _SubjectStyle.sample(spec, subject_index)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, subject_index, sign, rep]))
    sig = signatures[sign]
    right_line = _timeline(spec, sig["right"], catalogue.rest_id, catalogue.garbage_id)
    if sig["two_handed"]:
        left_line = _timeline(spec, sig["left"], catalogue.rest_id, catalogue.garbage_id)
    else:
        left_line = [catalogue.rest_id] * spec.frames_per_video

    frames, poses, truth = [], [], []
    for f in range(spec.frames_per_video):
        canvas = np.clip(
            style.base_bg[None, None, :] + style.texture + rng.normal(0, 4, (FRAME_HEIGHT, FRAME_WIDTH, 3)),
            0, 255,
        ).astype(np.uint8)
        right_box, right_kps = _hand_frame(
            canvas, rng, style, spec, catalogue.name(right_line[f]), 0.72 * FRAME_WIDTH, 0.58 * FRAME_HEIGHT
        )
        left_box, left_kps = _hand_frame(
            canvas, rng, style, spec, catalogue.name(left_line[f]), 0.28 * FRAME_WIDTH, 0.58 * FRAME_HEIGHT
        )
        frames.append(canvas)
        poses.append(
            PoseFrame(
                frame_index=f,
                body_keypoints=_body_keypoints(rng),
                left_hand_keypoints=left_kps,
                right_hand_keypoints=right_kps,
            )
        )
        truth.append(
            {
                "frame_index": f,
                "left": {"shape": int(left_line[f]), "box": [round(v, 2) for v in left_box]},
                "right": {"shape": int(right_line[f]), "box": [round(v, 2) for v in right_box]},
            }
        )
    return frames, poses, truth


def video_id_for(subject_index: int, sign: int, rep: int) -> str:
    return f"s{subject_index:02d}_g{sign:03d}_r{rep:02d}"


def recommended_crop_config(spec: SynthSpec) -> CropConfig:
    # scale 1.2 keeps the crop tight around the glyph box the keypoints span
    return CropConfig(scale=1.2, min_side=16, patch_size=spec.patch_size)


def generate(spec: SynthSpec, out_dir: Path | str) -> "SynthDataset":
    """Write a full corpus under out_dir and return a reader for it."""
    out = Path(out_dir)
    if (out / "index.json").exists():
        raise InputError(f"{out} already holds a generated corpus")
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "keypoints").mkdir(exist_ok=True)
    (out / "truth").mkdir(exist_ok=True)
    catalogue = _catalogue_for(spec)
    catalogue.save(out / "catalogue.json")
    signatures = sign_signatures(spec)

    videos = []
    for subject in range(spec.num_subjects):
        for sign in range(spec.num_sign_classes):
            for rep in range(spec.reps_per_sign):
                vid = video_id_for(subject, sign, rep)
                frames, poses, truth = render_video(spec, subject, sign, rep, signatures)
                frame_dir = out / "frames" / vid
                frame_dir.mkdir(parents=True, exist_ok=True)
                for i, frame in enumerate(frames):
                    cv2.imwrite(str(frame_dir / f"{i:05d}.png"), frame)
                save_keypoints(out / "keypoints" / f"{vid}.json", vid, poses)
                (out / "truth" / f"{vid}.json").write_text(
                    json.dumps({"video_id": vid, "frames": truth}, indent=None, sort_keys=True)
                )
                videos.append(
                    {
                        "video_id": vid,
                        "subject": f"subject-{subject:02d}",
                        "sign_class": sign,
                        "rep": rep,
                        "num_frames": spec.frames_per_video,
                    }
                )
        logger.info("rendered subject %d/%d", subject + 1, spec.num_subjects)

    index = {
        "spec": spec.to_dict(),
        "subjects": [f"subject-{i:02d}" for i in range(spec.num_subjects)],
        "num_sign_classes": spec.num_sign_classes,
        "videos": videos,
        "crop": recommended_crop_config(spec).to_dict(),
        "signatures": {
            str(k): {"right": list(v["right"]),
                     "left": list(v["left"]) if v["left"] else None,
                     "two_handed": v["two_handed"]}
            for k, v in signatures.items()
        },
    }
    (out / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True))
    return SynthDataset(out)


class SynthDataset:
    """Reader over a generated corpus directory."""

    def __init__(self, root: Path | str):
        self.root = Path(root)
        index_path = self.root / "index.json"
        if not index_path.exists():
            raise InputError(f"no corpus index at {index_path}")
        self.index = json.loads(index_path.read_text())
        self.spec = SynthSpec.from_dict(self.index["spec"])
        self.catalogue = ClassCatalogue.load(self.root / "catalogue.json")
        self.videos = self.index["videos"]
        self.subjects = self.index["subjects"]
        self._truth_cache: dict[str, dict[int, dict]] = {}

    def crop_config(self) -> CropConfig:
        return CropConfig.from_dict(self.index["crop"])

    def video_ids(self) -> list[str]:
        return [v["video_id"] for v in self.videos]

    def frames_dir(self, video_id: str) -> Path:
        return self.root / "frames" / video_id

    def keypoints_path(self, video_id: str) -> Path:
        return self.root / "keypoints" / f"{video_id}.json"

    def truth(self, video_id: str) -> dict[int, dict]:
        if video_id not in self._truth_cache:
            blob = json.loads((self.root / "truth" / f"{video_id}.json").read_text())
            self._truth_cache[video_id] = {f["frame_index"]: f for f in blob["frames"]}
        return self._truth_cache[video_id]

    def shape_label(self, ref: PatchRef) -> int:
        video_id, frame_index, side = ref
        return int(self.truth(video_id)[frame_index][side]["shape"])

    def glyph_box(self, ref: PatchRef) -> tuple[float, float, float, float]:
        video_id, frame_index, side = ref
        return tuple(self.truth(video_id)[frame_index][side]["box"])


class OracleAnnotator:
    """Ground-truth-backed stand-in for the human in the labeling loop."""

    def __init__(self, dataset: SynthDataset, policy: str = "relabel"):
        if policy not in ("relabel", "discard"):
            raise InputError(f"policy must be 'relabel' or 'discard', got {policy!r}")
        self.dataset = dataset
        self.policy = policy

    def label(self, refs: list[PatchRef]) -> list[tuple[PatchRef, int]]:
        """Manual-style labels straight from ground truth."""
        return [(ref, self.dataset.shape_label(ref)) for ref in refs]

    def decide(self, pending: list[PendingItem]) -> list[tuple[PatchRef, Optional[int]]]:
        """Resolve queued predictions: confirm when right, else relabel or discard."""
        out: list[tuple[PatchRef, Optional[int]]] = []
        for item in pending:
            true_class = self.dataset.shape_label(item.ref)
            if item.predicted_class == true_class:
                out.append((item.ref, true_class))
            elif self.policy == "relabel":
                out.append((item.ref, true_class))
            else:
                out.append((item.ref, None))
        return out
