"""Hand-shape embedder tests: training, inference, freezing and persistence."""

import logging

import numpy as np
import pytest

from handsign.embedder import (
    BACKBONES,
    EmbedderConfig,
    HandShapeEmbedder,
    train_embedder,
)
from handsign.errors import InputError, StateError
from handsign.synth import GLYPH_KINDS, draw_glyph


def _micro_config(n_classes=5, **overrides):
    defaults = dict(num_classes=n_classes, backbone="micro", epochs=2, batch_size=32)
    defaults.update(overrides)
    return EmbedderConfig(**defaults)


def _patch_pool(n_classes=5, per_class=40, seed=0, size=32):
    """Glyph patches on a noisy background, one glyph kind per class."""
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for c in range(n_classes):
        for _ in range(per_class):
            bg = rng.uniform(150, 200)
            canvas = np.clip(bg + rng.normal(0, 6, (size, size, 3)), 0, 255).astype(np.uint8)
            draw_glyph(
                canvas,
                GLYPH_KINDS[c],
                size / 2 + rng.uniform(-2, 2),
                size / 2 + rng.uniform(-2, 2),
                size * 0.62 * rng.uniform(0.9, 1.1),
                rng.uniform(-10, 10),
                (40, 40, 40),
                rng,
            )
            images.append(canvas)
            labels.append(c)
    order = rng.permutation(len(labels))
    return np.stack(images)[order], np.asarray(labels)[order]


def test_config_validation_and_resolution():
    config = EmbedderConfig(backbone="micro")
    assert config.embedding_dim == BACKBONES["micro"][1]
    assert config.patch_size == BACKBONES["micro"][2]
    assert EmbedderConfig(backbone="resnet50").embedding_dim == 2048
    assert EmbedderConfig.from_dict(config.to_dict()) == config
    with pytest.raises(InputError):
        EmbedderConfig(backbone="vit-h")
    with pytest.raises(InputError):
        EmbedderConfig(num_classes=1)
    with pytest.raises(InputError):
        EmbedderConfig(backbone="micro", embedding_dim=2048)


def test_untrained_embeddings_and_prediction_gate():
    emb = HandShapeEmbedder(_micro_config(), seed=3)
    images, _ = _patch_pool(per_class=4)
    features = emb.embed(images)
    assert features.shape == (len(images), 64)
    assert np.all(np.isfinite(features))
    with pytest.raises(StateError):
        emb.predict(images)
    preds = emb.predict(images, _allow_untrained=True)
    assert len(preds) == len(images)


def test_probabilities_normalized():
    images, labels = _patch_pool(per_class=10)
    emb, _ = train_embedder(images, labels, _micro_config(epochs=1), seed=0)
    probs, features = emb.predict_and_embed(images[:16])
    assert probs.shape == (16, 5)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-5)
    assert np.all(probs >= 0)
    preds = emb.predict(images[:16], refs=[("v", i, "right") for i in range(16)])
    for i, p in enumerate(preds):
        assert p.patch_ref == ("v", i, "right")
        assert p.class_id == int(np.argmax(probs[i]))
        assert p.confidence == pytest.approx(probs[i].max())
        np.testing.assert_allclose(p.probabilities, probs[i])
    np.testing.assert_allclose(features, emb.embed(images[:16]))


def test_train_input_errors(caplog):
    emb = HandShapeEmbedder(_micro_config(), seed=0)
    images, labels = _patch_pool(per_class=6)
    with pytest.raises(InputError):
        emb.train(np.empty((0, 32, 32, 3), np.uint8), [])
    with pytest.raises(InputError):
        emb.train(images, np.full_like(labels, 99))
    with pytest.raises(InputError):
        emb.predict_and_embed(np.zeros((2, 32, 32, 4), np.uint8))
    # a pool missing classes trains but warns
    mask = labels < 3
    with caplog.at_level(logging.WARNING, logger="handsign.embedder"):
        emb.train(images[mask], labels[mask])
    assert any("no samples" in r.message for r in caplog.records)


def test_training_deterministic():
    images, labels = _patch_pool(per_class=8)

    def checksum(seed):
        emb, history = train_embedder(images, labels, _micro_config(epochs=1), seed=seed)
        return emb.checksum(), history

    sum_a, hist_a = checksum(5)
    sum_b, hist_b = checksum(5)
    assert sum_a == sum_b
    assert hist_a == hist_b
    sum_c, _ = checksum(6)
    assert sum_c != sum_a


def test_freeze_semantics():
    images, labels = _patch_pool(per_class=6)
    emb, _ = train_embedder(images, labels, _micro_config(epochs=1), seed=0)
    before = emb.checksum()
    emb.freeze()
    assert emb.frozen
    assert emb.checksum() == before  # freezing never rewrites parameters
    assert all(not p.requires_grad for p in emb.parameters())
    emb.freeze()  # idempotent
    with pytest.raises(StateError):
        emb.train(images, labels)
    emb.embed(images[:4])  # inference still allowed
    emb.unfreeze()
    assert all(p.requires_grad for p in emb.parameters())
    emb.train(images, labels)


def test_save_load_round_trip(tmp_path):
    images, labels = _patch_pool(per_class=6)
    emb, _ = train_embedder(images, labels, _micro_config(epochs=1), seed=2)
    emb.freeze()
    emb.save(tmp_path / "emb.pt")
    loaded = HandShapeEmbedder.load(tmp_path / "emb.pt")
    assert loaded.config == emb.config
    assert loaded.trained and loaded.frozen
    assert loaded.checksum() == emb.checksum()
    np.testing.assert_allclose(loaded.embed(images[:8]), emb.embed(images[:8]), atol=1e-6)
    with pytest.raises(StateError):
        HandShapeEmbedder.load(tmp_path / "missing.pt")


def test_duplicate_patches_embed_identically():
    emb = HandShapeEmbedder(_micro_config(), seed=1)
    patch = _patch_pool(per_class=1)[0][0]
    batch = np.stack([patch, patch, patch])
    features = emb.embed(batch)
    np.testing.assert_array_equal(features[0], features[1])
    np.testing.assert_array_equal(features[0], features[2])
    zero = emb.embed(np.zeros((1, 32, 32, 3), np.uint8))
    assert np.all(np.isfinite(zero))


def test_training_loss_mostly_decreasing():
    images, labels = _patch_pool(per_class=30, seed=3)
    config = _micro_config(epochs=5, learning_rate=1e-3)
    _, history = train_embedder(images, labels, config, seed=0)
    losses = [h["loss"] for h in history]
    # transient bumps up to 5% allowed, trend must go down
    for prev, cur in zip(losses, losses[1:]):
        assert cur <= prev * 1.05
    assert losses[-1] < losses[0]


def test_resize_path_accepts_other_patch_sizes():
    emb = HandShapeEmbedder(_micro_config(), seed=0)
    big = np.random.default_rng(0).integers(0, 255, (3, 48, 40, 3)).astype(np.uint8)
    assert emb.embed(big).shape == (3, 64)
    single = emb.embed(big[0])
    assert single.shape == (1, 64)


def test_learns_separable_pool():
    # 5 classes x 200 patches; held-out fifth per class must be nearly solved
    images, labels = _patch_pool(n_classes=5, per_class=200, seed=1)
    rng = np.random.default_rng(7)
    holdout = np.zeros(len(labels), bool)
    for c in range(5):
        idx = np.flatnonzero(labels == c)
        holdout[rng.choice(idx, size=len(idx) // 5, replace=False)] = True
    config = _micro_config(epochs=3, learning_rate=1e-3, batch_size=64)
    emb, history = train_embedder(images[~holdout], labels[~holdout], config, seed=0)
    assert [h["epoch"] for h in history] == [0, 1, 2]
    preds = emb.predict(images[holdout])
    accuracy = np.mean([p.class_id for p in preds] == labels[holdout])
    assert accuracy >= 0.95
