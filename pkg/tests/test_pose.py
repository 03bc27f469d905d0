import math

import numpy as np
import pytest

from handsign.errors import InputError
from handsign.pose import (
    CropConfig,
    HAND_KEYPOINTS,
    PoseFrame,
    clamp_box,
    compute_crop_box,
    crop_hand,
    extract_gesture,
    load_frames,
    load_keypoints,
    load_patches,
    save_keypoints,
    save_patches,
)


def _kps(xs, ys, conf=1.0):
    """21 keypoints cycling through the given coordinate lists."""
    pts = np.zeros((HAND_KEYPOINTS, 3))
    for i in range(HAND_KEYPOINTS):
        pts[i] = (xs[i % len(xs)], ys[i % len(ys)], conf)
    return pts


def test_crop_box_span_formula():
    # span_x = 40 > span_y = 20, so side = ceil(2.2 * 40) = 88
    kps = _kps([80, 120, 100], [90, 110, 100])
    box = compute_crop_box(kps, scale=2.2, min_side=32)
    x0, y0, x1, y1 = box
    assert x1 - x0 == 88
    assert y1 - y0 == 88
    xs = kps[:, 0]
    ys = kps[:, 1]
    cx = int(round(float(xs.mean())))
    cy = int(round(float(ys.mean())))
    assert box == (cx - 44, cy - 44, cx + 44, cy + 44)


def test_crop_box_min_side_floor():
    kps = _kps([100], [100])
    box = compute_crop_box(kps, scale=2.2, min_side=32)
    assert box == (84, 84, 116, 116)


def test_crop_box_low_confidence_hand_absent():
    kps = _kps([100], [100], conf=0.05)
    assert compute_crop_box(kps, scale=2.2, min_side=32) is None
    # exactly at the threshold the points count
    kps[:, 2] = 0.1
    assert compute_crop_box(kps, scale=2.2, min_side=32) is not None
    # three confident points are fewer than min_valid_kp
    kps[:, 2] = 0.0
    kps[:3, 2] = 1.0
    assert compute_crop_box(kps, scale=2.2, min_side=32) is None


def test_crop_box_translation_equivariance():
    rng = np.random.default_rng(3)
    for _ in range(50):
        pts = np.column_stack(
            [
                rng.uniform(0, 300, HAND_KEYPOINTS),
                rng.uniform(0, 300, HAND_KEYPOINTS),
                rng.uniform(0.2, 1.0, HAND_KEYPOINTS),
            ]
        )
        dx, dy = int(rng.integers(-200, 200)), int(rng.integers(-200, 200))
        shifted = pts.copy()
        shifted[:, 0] += dx
        shifted[:, 1] += dy
        a = compute_crop_box(pts, scale=2.2, min_side=32)
        b = compute_crop_box(shifted, scale=2.2, min_side=32)
        assert b == (a[0] + dx, a[1] + dy, a[2] + dx, a[3] + dy)


def test_crop_box_rejects_bad_inputs():
    kps = _kps([100], [100])
    with pytest.raises(InputError):
        compute_crop_box(kps, scale=0, min_side=32)
    with pytest.raises(InputError):
        compute_crop_box(kps, scale=2.2, min_side=0)
    with pytest.raises(InputError):
        compute_crop_box(kps[:5], scale=2.2, min_side=32)
    bad = kps.copy()
    bad[0, 2] = 1.5
    with pytest.raises(InputError):
        compute_crop_box(bad, scale=2.2, min_side=32)


def test_clamp_box():
    assert clamp_box((-10, 5, 50, 200), 100, 100) == (0, 5, 50, 100)
    assert clamp_box((10, 10, 20, 20), 100, 100) == (10, 10, 20, 20)


def test_crop_hand_paths():
    frame = np.full((100, 120, 3), 200, dtype=np.uint8)
    patch = crop_hand(frame, (10, 10, 50, 50), patch_size=16)
    assert patch.valid
    assert patch.image.shape == (16, 16, 3)

    missing = crop_hand(frame, None, patch_size=16)
    assert not missing.valid
    assert missing.image.sum() == 0

    outside = crop_hand(frame, (500, 500, 600, 600), patch_size=16)
    assert not outside.valid
    assert outside.crop_box == (500, 500, 600, 600)

    with pytest.raises(InputError):
        crop_hand(frame, (0, 0, 10, 10), patch_size=0)
    with pytest.raises(InputError):
        crop_hand(np.zeros((0, 0, 3), dtype=np.uint8), (0, 0, 10, 10), patch_size=16)


def test_pose_frame_validation():
    good = np.column_stack([np.arange(21.0), np.arange(21.0), np.full(21, 0.5)])
    body = np.array([[1.0, 2.0, 0.9]])
    frame = PoseFrame(0, body, good, good)
    assert frame.hand("left").shape == (21, 3)
    with pytest.raises(InputError):
        frame.hand("up")

    bad_conf = good.copy()
    bad_conf[0, 2] = -0.1
    with pytest.raises(InputError):
        PoseFrame(0, body, bad_conf, good)
    bad_coord = good.copy()
    bad_coord[0, 0] = np.nan
    with pytest.raises(InputError):
        PoseFrame(0, body, good, bad_coord)
    with pytest.raises(InputError):
        PoseFrame(0, body, good[:20], good)


def _pose(seed=0, frame_index=0):
    rng = np.random.default_rng(seed)
    def hand(cx, cy):
        pts = np.column_stack(
            [
                rng.uniform(cx - 20, cx + 20, HAND_KEYPOINTS),
                rng.uniform(cy - 20, cy + 20, HAND_KEYPOINTS),
                rng.uniform(0.5, 1.0, HAND_KEYPOINTS),
            ]
        )
        return pts
    return PoseFrame(frame_index, np.array([[50.0, 20.0, 1.0]]), hand(40, 60), hand(120, 60))


def test_extract_gesture_alignment():
    frames = [np.full((120, 160, 3), 128, dtype=np.uint8)] * 3
    poses = [_pose(i) for i in range(2)] + [None]
    config = CropConfig(scale=2.0, min_side=16, patch_size=24)
    sample = extract_gesture(frames, poses, config, video_id="v0")
    assert sample.num_frames == 3
    assert len(sample.left) == len(sample.right) == 3
    assert sample.left[0].valid and sample.right[0].valid
    # missing pose marks both hands undetected
    assert not sample.left[2].valid and not sample.right[2].valid
    assert [p.frame_index for p in sample.left] == [0, 1, 2]


def test_extract_gesture_errors():
    config = CropConfig(scale=2.0, min_side=16, patch_size=24)
    with pytest.raises(InputError):
        extract_gesture([], [], config)
    frames = [np.zeros((50, 50, 3), dtype=np.uint8)]
    with pytest.raises(InputError):
        extract_gesture(frames, [], config)


def test_crop_config_validation_and_round_trip():
    config = CropConfig(scale=2.2, min_side=32, patch_size=224)
    assert CropConfig.from_dict(config.to_dict()) == config
    with pytest.raises(InputError):
        CropConfig(scale=-1, min_side=32, patch_size=224)
    with pytest.raises(InputError):
        CropConfig(scale=2.2, min_side=32, patch_size=224, kp_conf_threshold=2.0)


def test_keypoints_round_trip(tmp_path):
    poses = [_pose(0, frame_index=0), None, _pose(1, frame_index=2)]
    path = tmp_path / "kp.json"
    save_keypoints(path, "vid-1", poses)
    vid, loaded = load_keypoints(path)
    assert vid == "vid-1"
    assert len(loaded) == 3
    assert loaded[1] is None
    np.testing.assert_allclose(loaded[0].left_hand_keypoints, poses[0].left_hand_keypoints)
    np.testing.assert_allclose(loaded[2].right_hand_keypoints, poses[2].right_hand_keypoints)


def test_load_frames_orders_numerically(tmp_path):
    import cv2

    d = tmp_path / "frames"
    d.mkdir()
    for i in (2, 0, 10, 1):
        cv2.imwrite(str(d / f"{i}.png"), np.full((8, 8, 3), i, dtype=np.uint8))
    (d / "notes.txt").write_text("ignored")
    frames = load_frames(d)
    assert [int(f[0, 0, 0]) for f in frames] == [0, 1, 2, 10]
    with pytest.raises(InputError):
        load_frames(tmp_path / "nope")


def test_patch_tree_round_trip_and_determinism(tmp_path):
    frames = [np.random.default_rng(5).integers(0, 255, (120, 160, 3)).astype(np.uint8)] * 2
    poses = [_pose(3), _pose(4)]
    config = CropConfig(scale=2.0, min_side=16, patch_size=24)
    sample = extract_gesture(frames, poses, config, video_id="v9")

    root_a = tmp_path / "a"
    root_b = tmp_path / "b"
    save_patches(sample, root_a)
    save_patches(sample, root_b)
    files_a = sorted(p.relative_to(root_a) for p in root_a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(root_b) for p in root_b.rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (root_a / rel).read_bytes() == (root_b / rel).read_bytes()

    loaded = load_patches(root_a, "v9")
    assert loaded.num_frames == 2
    for side in ("left", "right"):
        for orig, back in zip(sample.patches(side), loaded.patches(side)):
            assert orig.valid == back.valid
            np.testing.assert_array_equal(orig.image, back.image)
    with pytest.raises(InputError):
        load_patches(root_a, "missing-video")
