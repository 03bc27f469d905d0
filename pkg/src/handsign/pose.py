"""Pose keypoint parsing and hand-patch cropping.

Input is one keypoint document per video (2D body + 21-joint hand
estimates with confidences, as produced by off-the-shelf pose
estimators). Output is a fixed-size left/right patch sequence per video,
aligned with the frame index; frames where a hand was not detected keep
an all-zero patch flagged invalid so both hands stay index-aligned.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import cv2
import numpy as np

from .errors import InputError

logger = logging.getLogger(__name__)

HAND_KEYPOINTS = 21
SIDES = ("left", "right")

# x0, y0, x1, y1 in source-image pixels
CropBox = tuple[int, int, int, int]


@dataclass
class CropConfig:
    """Parameters of the keypoint-driven square crop."""

    scale: float = 2.2
    min_side: int = 32
    patch_size: int = 224
    kp_conf_threshold: float = 0.1
    min_valid_kp: int = 4

    def __post_init__(self):
        if self.scale <= 0:
            raise InputError(f"scale must be positive, got {self.scale}")
        if self.min_side <= 0:
            raise InputError(f"min_side must be positive, got {self.min_side}")
        if self.patch_size <= 0:
            raise InputError(f"patch_size must be positive, got {self.patch_size}")
        if not 0.0 <= self.kp_conf_threshold <= 1.0:
            raise InputError(
                f"kp_conf_threshold must lie in [0, 1], got {self.kp_conf_threshold}"
            )
        if self.min_valid_kp < 1:
            raise InputError(f"min_valid_kp must be at least 1, got {self.min_valid_kp}")

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "min_side": self.min_side,
            "patch_size": self.patch_size,
            "kp_conf_threshold": self.kp_conf_threshold,
            "min_valid_kp": self.min_valid_kp,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CropConfig":
        return cls(**d)


@dataclass
class PoseFrame:
    """Per-frame 2D keypoints: body plus 21 joints per hand, each (x, y, confidence)."""

    frame_index: int
    body_keypoints: np.ndarray
    left_hand_keypoints: np.ndarray
    right_hand_keypoints: np.ndarray

    def __post_init__(self):
        if self.frame_index < 0:
            raise InputError(f"frame_index must be non-negative, got {self.frame_index}")
        self.body_keypoints = _as_keypoint_array(self.body_keypoints, arity=None, name="body")
        self.left_hand_keypoints = _as_keypoint_array(
            self.left_hand_keypoints, arity=HAND_KEYPOINTS, name="left_hand"
        )
        self.right_hand_keypoints = _as_keypoint_array(
            self.right_hand_keypoints, arity=HAND_KEYPOINTS, name="right_hand"
        )

    def hand(self, side: str) -> np.ndarray:
        if side not in SIDES:
            raise InputError(f"side must be one of {SIDES}, got {side!r}")
        return self.left_hand_keypoints if side == "left" else self.right_hand_keypoints


@dataclass
class HandPatch:
    """A cropped, resized hand image tied to (video, frame, side)."""

    video_id: str
    frame_index: int
    side: str
    image: np.ndarray
    crop_box: Optional[CropBox]
    valid: bool


@dataclass
class GestureSample:
    """One sign video: per-hand patch sequences aligned with the frame count."""

    video_id: str
    left: list[HandPatch]
    right: list[HandPatch]
    subject: str = ""
    sign_class: int = -1

    @property
    def num_frames(self) -> int:
        return len(self.left)

    def patches(self, side: str) -> list[HandPatch]:
        if side not in SIDES:
            raise InputError(f"side must be one of {SIDES}, got {side!r}")
        return self.left if side == "left" else self.right


def _as_keypoint_array(points, arity: Optional[int], name: str) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InputError(f"{name} keypoints must be an Nx3 array of (x, y, conf), got shape {arr.shape}")
    if arity is not None and arr.shape[0] != arity:
        raise InputError(f"{name} keypoints must have {arity} entries, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr[:, :2])):
        raise InputError(f"{name} keypoint coordinates must be finite")
    conf = arr[:, 2]
    if np.any(conf < 0) or np.any(conf > 1):
        raise InputError(f"{name} keypoint confidences must lie in [0, 1]")
    return arr


def compute_crop_box(
    hand_keypoints: np.ndarray,
    scale: float,
    min_side: int,
    kp_conf_threshold: float = 0.1,
    min_valid_kp: int = 4,
) -> Optional[CropBox]:
    """Square crop box around the detected hand, or None when the hand is absent.

    Keypoints with confidence >= kp_conf_threshold vote; with fewer than
    min_valid_kp votes the hand counts as undetected. The box is centered
    at the centroid of the voting keypoints with side
    max(min_side, ceil(scale * max(span_x, span_y))). The box is not
    clamped here; clamping to image bounds happens at crop time.
    """
    if scale <= 0:
        raise InputError(f"scale must be positive, got {scale}")
    if min_side <= 0:
        raise InputError(f"min_side must be positive, got {min_side}")
    kp = _as_keypoint_array(hand_keypoints, arity=HAND_KEYPOINTS, name="hand")
    valid = kp[:, 2] >= kp_conf_threshold
    if int(valid.sum()) < min_valid_kp:
        return None
    xs = kp[valid, 0]
    ys = kp[valid, 1]
    span = max(xs.max() - xs.min(), ys.max() - ys.min())
    side = max(int(min_side), int(math.ceil(scale * span)))
    cx = int(round(float(xs.mean())))
    cy = int(round(float(ys.mean())))
    x0 = cx - side // 2
    y0 = cy - side // 2
    return (x0, y0, x0 + side, y0 + side)


def clamp_box(box: CropBox, width: int, height: int) -> CropBox:
    """Intersect a box with [0, width) x [0, height) image bounds."""
    x0, y0, x1, y1 = box
    return (max(0, x0), max(0, y0), min(width, x1), min(height, y1))


def crop_hand(
    frame_image: np.ndarray,
    crop_box: Optional[CropBox],
    patch_size: int,
    video_id: str = "",
    frame_index: int = 0,
    side: str = "right",
) -> HandPatch:
    """Crop a box out of a frame and resize it to patch_size x patch_size.

    A None box (undetected hand) yields an all-zero patch with
    valid=False. Boxes reaching outside the frame are clamped first; a
    box that clamps to zero area is treated like an undetected hand.
    """
    if patch_size <= 0:
        raise InputError(f"patch_size must be positive, got {patch_size}")
    frame_image = np.asarray(frame_image)
    if frame_image.size == 0 or frame_image.ndim != 3 or frame_image.shape[2] != 3:
        raise InputError(f"frame image must be a non-empty HxWx3 array, got shape {frame_image.shape}")
    zero = np.zeros((patch_size, patch_size, 3), dtype=np.uint8)
    if crop_box is None:
        return HandPatch(video_id, frame_index, side, zero, None, False)
    h, w = frame_image.shape[:2]
    x0, y0, x1, y1 = clamp_box(crop_box, w, h)
    if x1 <= x0 or y1 <= y0:
        logger.debug("crop box %s fully outside %dx%d frame", crop_box, w, h)
        return HandPatch(video_id, frame_index, side, zero, crop_box, False)
    region = frame_image[y0:y1, x0:x1]
    image = cv2.resize(region, (patch_size, patch_size), interpolation=cv2.INTER_AREA)
    return HandPatch(video_id, frame_index, side, image.astype(np.uint8), crop_box, True)


def extract_gesture(
    frames: Sequence[np.ndarray],
    pose_frames: Sequence[Optional[PoseFrame]],
    config: CropConfig,
    video_id: str = "",
) -> GestureSample:
    """Crop both hands from every frame of one video.

    pose_frames aligns with frames; a None entry (missing pose) marks
    both hands undetected for that frame. Both output sequences always
    have length len(frames).
    """
    if len(frames) == 0:
        raise InputError("cannot extract a gesture from zero frames")
    if len(pose_frames) != len(frames):
        raise InputError(
            f"expected one pose frame per video frame, got {len(pose_frames)} poses for {len(frames)} frames"
        )
    left: list[HandPatch] = []
    right: list[HandPatch] = []
    for i, (frame, pose) in enumerate(zip(frames, pose_frames)):
        for side, dest in (("left", left), ("right", right)):
            box = None
            if pose is not None:
                box = compute_crop_box(
                    pose.hand(side),
                    scale=config.scale,
                    min_side=config.min_side,
                    kp_conf_threshold=config.kp_conf_threshold,
                    min_valid_kp=config.min_valid_kp,
                )
            dest.append(
                crop_hand(frame, box, config.patch_size, video_id=video_id, frame_index=i, side=side)
            )
    return GestureSample(video_id=video_id, left=left, right=right)


# ---------------------------------------------------------------------------
# file formats


def load_keypoints(path: Path | str) -> tuple[str, list[Optional[PoseFrame]]]:
    """Read one per-video keypoint JSON document.

    Layout: {video_id, frames: [{frame_index, body, left_hand, right_hand}]}
    where each keypoint is [x, y, confidence]. Returns the pose list
    indexed by frame_index; indices absent from the document are None.
    """
    with open(path) as f:
        doc = json.load(f)
    if "video_id" not in doc or "frames" not in doc:
        raise InputError(f"keypoint file {path} missing video_id/frames")
    frames = doc["frames"]
    n = 1 + max((int(fr["frame_index"]) for fr in frames), default=-1)
    poses: list[Optional[PoseFrame]] = [None] * n
    for fr in frames:
        pose = PoseFrame(
            frame_index=int(fr["frame_index"]),
            body_keypoints=fr["body"],
            left_hand_keypoints=fr["left_hand"],
            right_hand_keypoints=fr["right_hand"],
        )
        poses[pose.frame_index] = pose
    return str(doc["video_id"]), poses


def save_keypoints(path: Path | str, video_id: str, poses: Sequence[Optional[PoseFrame]]) -> None:
    frames = []
    for pose in poses:
        if pose is None:
            continue
        frames.append(
            {
                "frame_index": pose.frame_index,
                "body": pose.body_keypoints.tolist(),
                "left_hand": pose.left_hand_keypoints.tolist(),
                "right_hand": pose.right_hand_keypoints.tolist(),
            }
        )
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump({"video_id": video_id, "frames": frames}, f)


_FRAME_FILE = re.compile(r"^(\d+)\.(png|jpg|jpeg|bmp)$", re.IGNORECASE)


def load_frames(frames_dir: Path | str) -> list[np.ndarray]:
    """Read a directory of numbered image files, ordered by their number."""
    frames_dir = Path(frames_dir)
    if not frames_dir.is_dir():
        raise InputError(f"no frame directory at {frames_dir}")
    numbered = []
    for p in frames_dir.iterdir():
        m = _FRAME_FILE.match(p.name)
        if m:
            numbered.append((int(m.group(1)), p))
    if not numbered:
        raise InputError(f"no numbered image files in {frames_dir}")
    frames = []
    for _, p in sorted(numbered):
        img = cv2.imread(str(p), cv2.IMREAD_COLOR)
        if img is None:
            raise InputError(f"unreadable image file {p}")
        frames.append(img)
    return frames


def save_patches(sample: GestureSample, root: Path | str) -> Path:
    """Write a gesture's patches as patches/<video_id>/<side>/<frame>.png plus meta.json."""
    root = Path(root)
    video_dir = root / sample.video_id
    meta: dict = {"video_id": sample.video_id, "num_frames": sample.num_frames, "sides": {}}
    for side in SIDES:
        side_dir = video_dir / side
        side_dir.mkdir(parents=True, exist_ok=True)
        entries = []
        for patch in sample.patches(side):
            cv2.imwrite(str(side_dir / f"{patch.frame_index:05d}.png"), patch.image)
            entries.append(
                {
                    "frame_index": patch.frame_index,
                    "valid": bool(patch.valid),
                    "crop_box": list(patch.crop_box) if patch.crop_box is not None else None,
                }
            )
        meta["sides"][side] = entries
    with open(video_dir / "meta.json", "w") as f:
        json.dump(meta, f, indent=1, sort_keys=True)
    return video_dir


def load_patches(root: Path | str, video_id: str) -> GestureSample:
    """Read one video's patch tree back into a GestureSample."""
    video_dir = Path(root) / video_id
    meta_path = video_dir / "meta.json"
    if not meta_path.exists():
        raise InputError(f"no patch metadata at {meta_path}")
    with open(meta_path) as f:
        meta = json.load(f)
    sequences: dict[str, list[HandPatch]] = {}
    for side in SIDES:
        patches = []
        for entry in meta["sides"][side]:
            idx = int(entry["frame_index"])
            img = cv2.imread(str(video_dir / side / f"{idx:05d}.png"), cv2.IMREAD_COLOR)
            if img is None:
                raise InputError(f"missing patch image {video_dir / side / f'{idx:05d}.png'}")
            box = tuple(entry["crop_box"]) if entry["crop_box"] is not None else None
            patches.append(HandPatch(video_id, idx, side, img, box, bool(entry["valid"])))
        patches.sort(key=lambda p: p.frame_index)
        sequences[side] = patches
    return GestureSample(video_id=video_id, left=sequences["left"], right=sequences["right"])
