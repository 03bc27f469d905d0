"""Convolutional hand-shape embedder.

A residual backbone fine-tuned to classify hand-shape patches; the
penultimate (pooled) feature vector is the embedding consumed by the
sequence models. Two backbones are registered: "resnet50" (2048-d, the
full-scale default) and "micro" (64-d), a small residual net for
desk-scale runs and tests. An untrained embedder still produces valid
embeddings, which is what the iteration-0 baseline uses.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import cv2
import numpy as np
import torch
from torch import nn

from .errors import InputError, StateError

logger = logging.getLogger(__name__)


@dataclass
class EmbedderConfig:
    num_classes: int = 41
    backbone: str = "resnet50"
    pretrained: bool = False
    embedding_dim: Optional[int] = None  # resolved from the backbone when None
    patch_size: Optional[int] = None  # canonical backbone input size when None
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 10
    val_fraction: float = 0.1
    augment: bool = False  # photometric jitter during fine-tuning

    def __post_init__(self):
        if self.num_classes < 2:
            raise InputError(f"need at least two classes, got {self.num_classes}")
        if self.backbone not in BACKBONES:
            raise InputError(f"unknown backbone {self.backbone!r}, have {sorted(BACKBONES)}")
        dim, canonical = BACKBONES[self.backbone][1:]
        if self.embedding_dim is None:
            self.embedding_dim = dim
        elif self.embedding_dim != dim:
            raise InputError(
                f"embedding_dim {self.embedding_dim} does not match backbone "
                f"{self.backbone!r} penultimate width {dim}"
            )
        if self.patch_size is None:
            self.patch_size = canonical

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EmbedderConfig":
        return cls(**d)


@dataclass
class HandShapePrediction:
    """Class distribution over the catalogue for one patch."""

    patch_ref: Optional[tuple]
    class_id: int
    probabilities: np.ndarray
    confidence: float


class _BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.relu = nn.ReLU(inplace=True)
        self.down = None
        if stride != 1 or cin != cout:
            self.down = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride=stride, bias=False), nn.BatchNorm2d(cout)
            )

    def forward(self, x):
        identity = x if self.down is None else self.down(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + identity)


class _MicroResNet(nn.Module):
    """Three-stage residual net with global average pooling; 64-d features."""

    def __init__(self, width: int = 16):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(3, width, 3, padding=1, bias=False), nn.BatchNorm2d(width), nn.ReLU(inplace=True)
        )
        self.stage1 = _BasicBlock(width, width)
        self.stage2 = _BasicBlock(width, width * 2, stride=2)
        self.stage3 = _BasicBlock(width * 2, width * 4, stride=2)
        self.pool = nn.AdaptiveAvgPool2d(1)

    def forward(self, x):
        x = self.stem(x)
        x = self.stage1(x)
        x = self.stage2(x)
        x = self.stage3(x)
        return torch.flatten(self.pool(x), 1)


def _build_micro(pretrained: bool) -> nn.Module:
    if pretrained:
        logger.warning("no pretrained weights exist for the micro backbone; using random init")
    return _MicroResNet()


def _build_resnet50(pretrained: bool) -> nn.Module:
    from torchvision import models

    weights = models.ResNet50_Weights.IMAGENET1K_V2 if pretrained else None
    model = models.resnet50(weights=weights)
    model.fc = nn.Identity()
    return model


# name -> (builder, penultimate width, canonical input size)
BACKBONES = {
    "micro": (_build_micro, 64, 32),
    "resnet50": (_build_resnet50, 2048, 224),
}


class HandShapeEmbedder:
    """Backbone + classification head over the hand-shape catalogue."""

    def __init__(self, config: EmbedderConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        torch.manual_seed(seed)
        builder, dim, _ = BACKBONES[config.backbone]
        self.backbone = builder(config.pretrained)
        self.head = nn.Linear(dim, config.num_classes)
        self.trained = False
        self.frozen = False

    # ----------------------------------------------------------------- prep

    def _prepare(self, images: Sequence[np.ndarray] | np.ndarray) -> torch.Tensor:
        arr = np.asarray(images)
        if arr.ndim == 3:
            arr = arr[None]
        if arr.ndim != 4 or arr.shape[3] != 3:
            raise InputError(f"expected patches of shape BxHxWx3, got {arr.shape}")
        size = self.config.patch_size
        if arr.shape[1] != size or arr.shape[2] != size:
            arr = np.stack(
                [cv2.resize(img, (size, size), interpolation=cv2.INTER_AREA) for img in arr]
            )
        x = torch.from_numpy(np.ascontiguousarray(arr)).float().permute(0, 3, 1, 2) / 255.0
        return (x - 0.5) / 0.25

    def _forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        features = self.backbone(x)
        return features, self.head(features)

    # ------------------------------------------------------------- training

    def train(self, images: np.ndarray, labels: Sequence[int]) -> list[dict]:
        """Fine-tune on a labeled patch pool; returns per-epoch loss and held-out accuracy.

        The pool is split 90/10 stratified by class; pools too small to
        spare a held-out sample validate on the training data itself.
        """
        if self.frozen:
            raise StateError("embedder is frozen")
        labels = np.asarray(labels, dtype=np.int64)
        if len(labels) == 0:
            raise InputError("cannot train on an empty pool")
        if labels.min() < 0 or labels.max() >= self.config.num_classes:
            raise InputError("pool contains labels outside the catalogue")
        present = set(int(c) for c in np.unique(labels))
        missing = [c for c in range(self.config.num_classes) if c not in present]
        if missing:
            logger.warning("%d classes have no samples in the pool: %s", len(missing), missing[:8])

        rng = np.random.default_rng(self.seed)
        val_idx: list[int] = []
        for c in sorted(present):
            idx = np.flatnonzero(labels == c)
            rng.shuffle(idx)
            n_val = int(len(idx) * self.config.val_fraction)
            val_idx.extend(idx[:n_val].tolist())
        train_idx = np.setdiff1d(np.arange(len(labels)), np.array(val_idx, dtype=int))
        if len(val_idx) == 0 or len(train_idx) == 0:
            train_idx = np.arange(len(labels))
            val_idx = list(range(len(labels)))
        x_train = self._prepare(np.asarray(images)[train_idx])
        y_train = torch.from_numpy(labels[train_idx])
        x_val = np.asarray(images)[np.asarray(val_idx, dtype=int)]
        y_val = labels[np.asarray(val_idx, dtype=int)]

        params = list(self.backbone.parameters()) + list(self.head.parameters())
        optimizer = torch.optim.Adam(params, lr=self.config.learning_rate)
        criterion = nn.CrossEntropyLoss()
        gen = torch.Generator().manual_seed(self.seed)
        history = []
        self.backbone.train()
        self.head.train()
        n = len(train_idx)
        bs = self.config.batch_size
        for epoch in range(self.config.epochs):
            order = torch.randperm(n, generator=gen)
            losses = []
            for start in range(0, n, bs):
                batch = order[start : start + bs]
                xb = x_train[batch]
                if self.config.augment:
                    # photometric jitter: per-sample channel gain and bias, in
                    # normalized units. Counters reliance on subject tints.
                    gain = 1.0 + (torch.rand(len(batch), 3, 1, 1, generator=gen) - 0.5) * 0.5
                    bias = (torch.rand(len(batch), 3, 1, 1, generator=gen) - 0.5) * 0.8
                    xb = xb * gain + bias
                optimizer.zero_grad()
                _, logits = self._forward(xb)
                loss = criterion(logits, y_train[batch])
                loss.backward()
                optimizer.step()
                losses.append(float(loss.detach()))
            self.trained = True
            val_acc = self._accuracy(x_val, y_val)
            self.backbone.train()
            self.head.train()
            history.append(
                {"epoch": epoch, "loss": float(np.mean(losses)), "val_accuracy": val_acc}
            )
            logger.info("embedder epoch %d loss %.4f val_acc %.4f", epoch, history[-1]["loss"], val_acc)
        self.backbone.eval()
        self.head.eval()
        return history

    def _accuracy(self, images: np.ndarray, labels: np.ndarray) -> float:
        preds = self.predict(images, _allow_untrained=True)
        correct = sum(1 for p, y in zip(preds, labels) if p.class_id == int(y))
        return correct / max(1, len(labels))

    # ------------------------------------------------------------ inference

    def predict(
        self,
        images: Sequence[np.ndarray] | np.ndarray,
        refs: Optional[Sequence[tuple]] = None,
        _allow_untrained: bool = False,
    ) -> list[HandShapePrediction]:
        """Class distributions for a batch of patches; deterministic in eval mode."""
        if not self.trained and not _allow_untrained:
            raise StateError("embedder has not been trained; call train() first")
        probs, _ = self.predict_and_embed(images)
        out = []
        for i, p in enumerate(probs):
            ref = tuple(refs[i]) if refs is not None else None
            class_id = int(np.argmax(p))
            out.append(HandShapePrediction(ref, class_id, p, float(p[class_id])))
        return out

    def predict_and_embed(self, images) -> tuple[np.ndarray, np.ndarray]:
        """One forward pass returning (softmax probabilities, embeddings)."""
        x = self._prepare(images)
        self.backbone.eval()
        self.head.eval()
        probs_out, emb_out = [], []
        with torch.no_grad():
            for start in range(0, len(x), 256):
                features, logits = self._forward(x[start : start + 256])
                probs_out.append(torch.softmax(logits, dim=1).double().numpy())
                emb_out.append(features.numpy())
        return np.concatenate(probs_out), np.concatenate(emb_out)

    def embed(self, images) -> np.ndarray:
        """B x D embedding matrix; valid even before fine-tuning (iteration-0 mode)."""
        _, emb = self.predict_and_embed(images)
        if not np.all(np.isfinite(emb)):
            raise StateError("embedder produced non-finite embeddings")
        return emb

    # ----------------------------------------------------------------- state

    def freeze(self) -> "HandShapeEmbedder":
        """Make parameters immutable for downstream sequence training. Idempotent."""
        for p in self.backbone.parameters():
            p.requires_grad_(False)
        for p in self.head.parameters():
            p.requires_grad_(False)
        self.backbone.eval()
        self.head.eval()
        self.frozen = True
        return self

    def unfreeze(self) -> "HandShapeEmbedder":
        for p in self.backbone.parameters():
            p.requires_grad_(True)
        for p in self.head.parameters():
            p.requires_grad_(True)
        self.frozen = False
        return self

    def parameters(self):
        return list(self.backbone.parameters()) + list(self.head.parameters())

    def checksum(self) -> str:
        """Digest of all parameters and buffers; invariant under freezing."""
        digest = hashlib.sha256()
        state = {}
        state.update({f"b.{k}": v for k, v in self.backbone.state_dict().items()})
        state.update({f"h.{k}": v for k, v in self.head.state_dict().items()})
        for key in sorted(state):
            digest.update(key.encode())
            digest.update(state[key].numpy().tobytes())
        return digest.hexdigest()

    # ------------------------------------------------------------------- I/O

    def save(self, path: Path | str) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "config": self.config.to_dict(),
                "seed": self.seed,
                "backbone_state": self.backbone.state_dict(),
                "head_state": self.head.state_dict(),
                "trained": self.trained,
                "frozen": self.frozen,
            },
            path,
        )

    @classmethod
    def load(cls, path: Path | str) -> "HandShapeEmbedder":
        if not Path(path).exists():
            raise StateError(f"no embedder checkpoint at {path}")
        blob = torch.load(path, map_location="cpu", weights_only=False)
        config = EmbedderConfig.from_dict(blob["config"])
        emb = cls(config, seed=blob.get("seed", 0))
        emb.backbone.load_state_dict(blob["backbone_state"])
        emb.head.load_state_dict(blob["head_state"])
        emb.trained = blob["trained"]
        if blob.get("frozen"):
            emb.freeze()
        return emb


def train_embedder(
    images: np.ndarray, labels: Sequence[int], config: EmbedderConfig, seed: int = 0
) -> tuple[HandShapeEmbedder, list[dict]]:
    """Build and fine-tune an embedder on a labeled patch pool."""
    emb = HandShapeEmbedder(config, seed=seed)
    history = emb.train(images, labels)
    return emb, history
