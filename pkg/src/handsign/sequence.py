"""Sequence models over hand-shape embeddings.

Each video becomes two T x D matrices (one per hand) by uniform frame
sampling and embedding; a two-layer LSTM per hand maps its matrix to
class logits, and the two score vectors are fused (mean or max) at
inference. The concat mode instead trains one joint head over both
hands' final hidden states. Training minimizes average cross entropy;
a plain numpy reference of that loss and its gradient lives here too so
the torch path can be checked against it.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .errors import InputError, StateError
from .pose import GestureSample

logger = logging.getLogger(__name__)

FUSION_MODES = ("mean", "max", "concat")


@dataclass
class SequenceModelConfig:
    num_layers: int = 2
    hidden_size: int = 512
    frames_per_sequence: int = 20
    num_classes: int = 51
    batch_size: int = 64
    learning_rate: float = 1e-4
    fusion: str = "mean"
    filter_uninformative: bool = False
    max_epochs: int = 100
    patience: int = 10  # epochs without val-accuracy improvement before stopping
    val_fraction: float = 0.1

    def __post_init__(self):
        for name in ("num_layers", "hidden_size", "frames_per_sequence", "num_classes",
                     "batch_size", "max_epochs", "patience"):
            if getattr(self, name) <= 0:
                raise InputError(f"{name} must be positive, got {getattr(self, name)}")
        if self.learning_rate <= 0:
            raise InputError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.fusion not in FUSION_MODES:
            raise InputError(f"fusion must be one of {FUSION_MODES}, got {self.fusion!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SequenceModelConfig":
        return cls(**d)


@dataclass
class EmbeddingSequence:
    """T sampled frames of one hand as a T x D matrix."""

    video_id: str
    side: str
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float32)
        if self.matrix.ndim != 2:
            raise InputError(f"embedding sequence must be TxD, got shape {self.matrix.shape}")
        if not np.all(np.isfinite(self.matrix)):
            raise InputError(f"non-finite embedding values in {self.video_id}/{self.side}")


@dataclass
class SignPrediction:
    video_id: str
    left_logits: np.ndarray
    right_logits: np.ndarray
    fused_logits: np.ndarray
    predicted_class: int


# ---------------------------------------------------------------------------
# frame selection


def sample_uniform(num_frames: int, target: int) -> list[int]:
    """Uniformly spread target indices over [0, num_frames).

    indices[i] = floor(i * F / T); short clips repeat frames, long clips
    stride. Integer arithmetic, so no float edge cases.
    """
    if num_frames <= 0:
        raise InputError(f"cannot sample from {num_frames} frames")
    if target <= 0:
        raise InputError(f"target frame count must be positive, got {target}")
    return [(i * num_frames) // target for i in range(target)]


def filter_uninformative(
    items: Sequence,
    frame_classes: Sequence[int],
    uninformative_ids: Sequence[int],
    enabled: bool = True,
) -> list:
    """Drop frames whose predicted shape carries no sign information.

    Falls back to the full sequence when everything would be dropped, so
    a clip that never leaves the rest pose still yields a sequence.
    """
    items = list(items)
    if not enabled:
        return items
    if len(frame_classes) != len(items):
        raise InputError(
            f"got {len(frame_classes)} frame classes for {len(items)} frames"
        )
    drop = set(int(u) for u in uninformative_ids)
    kept = [item for item, c in zip(items, frame_classes) if int(c) not in drop]
    if not kept:
        return items
    return kept


# ---------------------------------------------------------------------------
# loss reference (numpy)


def average_cross_entropy(probs: np.ndarray, onehot: np.ndarray, eps: float = 1e-12) -> float:
    """Mean over the batch of -sum_j y_ij log p_ij, with p clamped below by eps."""
    probs = np.asarray(probs, dtype=np.float64)
    onehot = np.asarray(onehot, dtype=np.float64)
    if probs.shape != onehot.shape:
        raise InputError(f"probs {probs.shape} and labels {onehot.shape} must align")
    p = np.clip(probs, eps, None)
    return float(-(onehot * np.log(p)).sum() / probs.shape[0])


def cross_entropy_gradient(probs: np.ndarray, onehot: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """d loss / d probs; zero inside the clamp region where log is flat."""
    probs = np.asarray(probs, dtype=np.float64)
    onehot = np.asarray(onehot, dtype=np.float64)
    grad = np.zeros_like(probs)
    live = probs > eps
    grad[live] = -onehot[live] / (probs[live] * probs.shape[0])
    return grad


def one_hot(labels: Sequence[int], num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise InputError("labels outside [0, num_classes)")
    out = np.zeros((len(labels), num_classes), dtype=np.float64)
    out[np.arange(len(labels)), labels] = 1.0
    return out


# ---------------------------------------------------------------------------
# fusion


def fuse(left_logits: np.ndarray, right_logits: np.ndarray, mode: str) -> np.ndarray:
    """Combine per-hand score vectors. Concat is not a score-level op; the
    joint head produces its logits directly, so asking for it here is an error."""
    left = np.asarray(left_logits, dtype=np.float64)
    right = np.asarray(right_logits, dtype=np.float64)
    if left.shape != right.shape:
        raise InputError(f"logit shapes differ: {left.shape} vs {right.shape}")
    if mode == "mean":
        return (left + right) / 2.0
    if mode == "max":
        return np.maximum(left, right)
    if mode == "concat":
        raise InputError("concat fusion happens inside the joint head, not over logits")
    raise InputError(f"fusion must be one of {FUSION_MODES}, got {mode!r}")


def argmax_class(logits: np.ndarray) -> int:
    """Ties break to the lowest class index."""
    return int(np.argmax(logits))


# ---------------------------------------------------------------------------
# torch modules


class HandSequenceEncoder(nn.Module):
    """LSTM over one hand's embedding sequence; last-step hidden state -> logits."""

    def __init__(self, embedding_dim: int, config: SequenceModelConfig):
        super().__init__()
        self.embedding_dim = embedding_dim
        self.lstm = nn.LSTM(
            input_size=embedding_dim,
            hidden_size=config.hidden_size,
            num_layers=config.num_layers,
            batch_first=True,
        )
        self.head = nn.Linear(config.hidden_size, config.num_classes)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        out, _ = self.lstm(x)
        hidden = out[:, -1, :]
        return hidden, self.head(hidden)

    def encode(self, matrix: np.ndarray) -> np.ndarray:
        """Final hidden state for one T x D matrix, eval mode."""
        matrix = np.asarray(matrix, dtype=np.float32)
        if matrix.ndim != 2 or matrix.shape[1] != self.embedding_dim:
            raise InputError(
                f"expected a TxD matrix with D={self.embedding_dim}, got shape {matrix.shape}"
            )
        self.eval()
        with torch.no_grad():
            hidden, _ = self.forward(torch.from_numpy(matrix)[None])
        return hidden[0].numpy()


class ConcatHandClassifier(nn.Module):
    """Joint head over both hands' hidden states (fusion before the classifier)."""

    def __init__(self, left: HandSequenceEncoder, right: HandSequenceEncoder,
                 config: SequenceModelConfig):
        super().__init__()
        self.left = left
        self.right = right
        self.head = nn.Linear(2 * config.hidden_size, config.num_classes)

    def forward(self, xl: torch.Tensor, xr: torch.Tensor) -> torch.Tensor:
        hl, _ = self.left(xl)
        hr, _ = self.right(xr)
        return self.head(torch.cat([hl, hr], dim=1))


# ---------------------------------------------------------------------------
# sequence construction


def build_sequences(
    samples: Sequence[GestureSample],
    embedder,
    config: SequenceModelConfig,
    uninformative_ids: Optional[Sequence[int]] = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[str]]:
    """Embed and uniformly sample every video into per-hand T x D matrices.

    Returns (left, right, labels, video_ids) with left/right of shape
    N x T x D. All patches go through the embedder in one batch per hand
    so the call is cheap even for hundreds of videos. When filtering is
    on, uninformative_ids defaults to the last two catalogue slots (the
    garbage and rest classes by construction).
    """
    if len(samples) == 0:
        raise InputError("no samples to build sequences from")
    T = config.frames_per_sequence
    per_hand = {"left": [], "right": []}
    for side in ("left", "right"):
        chosen_patches = []
        for sample in samples:
            patches = sample.patches(side)
            if config.filter_uninformative:
                if uninformative_ids is None:
                    uninformative_ids = _uninformative_ids(embedder)
                probs, _ = embedder.predict_and_embed(np.stack([p.image for p in patches]))
                classes = probs.argmax(axis=1)
                patches = filter_uninformative(patches, classes, uninformative_ids, enabled=True)
            idx = sample_uniform(len(patches), T)
            chosen_patches.extend(patches[i] for i in idx)
        images = np.stack([p.image for p in chosen_patches])
        emb = embedder.embed(images).astype(np.float32)
        dim = emb.shape[1]
        per_hand[side] = emb.reshape(len(samples), T, dim)
    labels = np.asarray([s.sign_class for s in samples], dtype=np.int64)
    video_ids = [s.video_id for s in samples]
    return per_hand["left"], per_hand["right"], labels, video_ids


def _uninformative_ids(embedder) -> list[int]:
    # last two catalogue slots by convention; embedder only knows the count
    n = embedder.config.num_classes
    return [n - 2, n - 1]


# ---------------------------------------------------------------------------
# sign model


class SignModel:
    """Per-hand sequence encoders plus fusion, as one saveable unit."""

    def __init__(self, config: SequenceModelConfig, embedding_dim: int, seed: int = 0):
        self.config = config
        self.embedding_dim = embedding_dim
        self.seed = seed
        torch.manual_seed(seed)
        self.left = HandSequenceEncoder(embedding_dim, config)
        self.right = HandSequenceEncoder(embedding_dim, config)
        self.joint: Optional[ConcatHandClassifier] = None
        if config.fusion == "concat":
            self.joint = ConcatHandClassifier(self.left, self.right, config)
        self.embedder_checksum: Optional[str] = None

    # -------------------------------------------------------------- predict

    def predict(
        self,
        left_seqs: np.ndarray,
        right_seqs: np.ndarray,
        video_ids: Optional[Sequence[str]] = None,
        fusion: Optional[str] = None,
    ) -> list[SignPrediction]:
        fusion = fusion or self.config.fusion
        if fusion == "concat" and self.joint is None:
            raise StateError("no joint head was trained; concat fusion unavailable")
        xl = torch.from_numpy(np.asarray(left_seqs, dtype=np.float32))
        xr = torch.from_numpy(np.asarray(right_seqs, dtype=np.float32))
        self.left.eval()
        self.right.eval()
        with torch.no_grad():
            _, logits_l = self.left(xl)
            _, logits_r = self.right(xr)
            if fusion == "concat":
                self.joint.eval()
                fused = self.joint(xl, xr).double().numpy()
            else:
                fused = None
        logits_l = logits_l.double().numpy()
        logits_r = logits_r.double().numpy()
        out = []
        for i in range(len(logits_l)):
            vid = video_ids[i] if video_ids is not None else ""
            fv = fused[i] if fused is not None else fuse(logits_l[i], logits_r[i], fusion)
            out.append(SignPrediction(vid, logits_l[i], logits_r[i], fv, argmax_class(fv)))
        return out

    def predict_single_hand(self, seqs: np.ndarray, side: str,
                            video_ids: Optional[Sequence[str]] = None) -> list[SignPrediction]:
        """Score with one hand's encoder only (hands ablation rows)."""
        encoder = self.left if side == "left" else self.right
        x = torch.from_numpy(np.asarray(seqs, dtype=np.float32))
        encoder.eval()
        with torch.no_grad():
            _, logits = encoder(x)
        logits = logits.double().numpy()
        out = []
        for i, lv in enumerate(logits):
            vid = video_ids[i] if video_ids is not None else ""
            zeros = np.zeros_like(lv)
            left = lv if side == "left" else zeros
            right = lv if side == "right" else zeros
            out.append(SignPrediction(vid, left, right, lv, argmax_class(lv)))
        return out

    # ------------------------------------------------------------------ I/O

    def save(self, path: Path | str) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        blob = {
            "config": self.config.to_dict(),
            "embedding_dim": self.embedding_dim,
            "seed": self.seed,
            "left_state": self.left.state_dict(),
            "right_state": self.right.state_dict(),
            "joint_state": self.joint.head.state_dict() if self.joint else None,
            "embedder_checksum": self.embedder_checksum,
        }
        torch.save(blob, path)

    @classmethod
    def load(cls, path: Path | str) -> "SignModel":
        if not Path(path).exists():
            raise StateError(f"no sign model checkpoint at {path}")
        blob = torch.load(path, map_location="cpu", weights_only=False)
        model = cls(SequenceModelConfig.from_dict(blob["config"]), blob["embedding_dim"],
                    seed=blob.get("seed", 0))
        model.left.load_state_dict(blob["left_state"])
        model.right.load_state_dict(blob["right_state"])
        if blob.get("joint_state") is not None:
            if model.joint is None:
                model.joint = ConcatHandClassifier(model.left, model.right, model.config)
            model.joint.head.load_state_dict(blob["joint_state"])
        model.embedder_checksum = blob.get("embedder_checksum")
        return model


# ---------------------------------------------------------------------------
# training


def _split_train_val(labels: np.ndarray, fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    val_idx = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        n_val = int(len(idx) * fraction)
        val_idx.extend(idx[:n_val].tolist())
    train_idx = np.setdiff1d(np.arange(len(labels)), np.asarray(val_idx, dtype=int))
    if len(val_idx) == 0 or len(train_idx) == 0:
        return np.arange(len(labels)), np.arange(len(labels))
    return train_idx, np.asarray(val_idx, dtype=int)


def _train_loop(step_fn, eval_fn, params, config: SequenceModelConfig, n_train: int, seed: int):
    """Shared epoch loop: Adam, batch shuffling, patience-based early stop.

    step_fn(batch_idx) -> loss tensor; eval_fn() -> val accuracy.
    Returns (history, best_state_getter result applied by caller).
    """
    optimizer = torch.optim.Adam(params, lr=config.learning_rate)
    gen = torch.Generator().manual_seed(seed)
    best_acc = -1.0
    best_epoch = -1
    history = []
    best_state = None

    def snapshot():
        return [p.detach().clone() for p in params]

    for epoch in range(config.max_epochs):
        order = torch.randperm(n_train, generator=gen)
        losses = []
        for start in range(0, n_train, config.batch_size):
            batch = order[start : start + config.batch_size]
            optimizer.zero_grad()
            loss = step_fn(batch)
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
        acc = eval_fn()
        history.append({"epoch": epoch, "loss": float(np.mean(losses)), "val_accuracy": acc})
        if acc > best_acc:
            best_acc, best_epoch = acc, epoch
            best_state = snapshot()
        if epoch - best_epoch >= config.patience:
            logger.info("early stop at epoch %d (best %.4f @ %d)", epoch, best_acc, best_epoch)
            break
    if best_state is not None:
        with torch.no_grad():
            for p, b in zip(params, best_state):
                p.copy_(b)
    return history


def train_hand_encoder(
    sequences: np.ndarray,
    labels: np.ndarray,
    config: SequenceModelConfig,
    seed: int = 0,
    encoder: Optional[HandSequenceEncoder] = None,
) -> tuple[HandSequenceEncoder, list[dict]]:
    """Train one hand's LSTM on N x T x D sequences with early stopping."""
    sequences = np.asarray(sequences, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if len(sequences) == 0:
        raise InputError("cannot train on zero sequences")
    if len(np.unique(labels)) < 2:
        raise InputError("training data must span at least two sign classes")
    if encoder is None:
        torch.manual_seed(seed)
        encoder = HandSequenceEncoder(sequences.shape[2], config)
    train_idx, val_idx = _split_train_val(labels, config.val_fraction, seed)
    x = torch.from_numpy(sequences)
    y = torch.from_numpy(labels)
    x_train, y_train = x[train_idx], y[train_idx]
    x_val, y_val = x[val_idx], np.asarray(labels)[val_idx]
    criterion = nn.CrossEntropyLoss()

    def step(batch):
        encoder.train()
        _, logits = encoder(x_train[batch])
        return criterion(logits, y_train[batch])

    def evaluate():
        encoder.eval()
        with torch.no_grad():
            _, logits = encoder(x_val)
        return float((logits.argmax(dim=1).numpy() == y_val).mean())

    history = _train_loop(step, evaluate, list(encoder.parameters()), config,
                          len(train_idx), seed)
    encoder.eval()
    return encoder, history


def train_sign_classifier(
    samples: Sequence[GestureSample],
    embedder,
    config: SequenceModelConfig,
    seed: int = 0,
    joint_embedder: bool = False,
) -> tuple[SignModel, dict]:
    """Train the full sign classifier from gesture samples.

    Separate mode (default) requires a frozen embedder: sequences are
    embedded once, then each hand's encoder trains on its own loss, plus
    a joint concat head when config.fusion == "concat". Joint mode
    instead backpropagates through an unfrozen embedder with the fused
    objective; it is much slower and exists for the ablation axis.
    """
    samples = list(samples)
    if not samples:
        raise InputError("empty dataset")
    classes = {s.sign_class for s in samples}
    if len(classes) < 2:
        raise InputError("dataset must span at least two sign classes")
    if any(s.sign_class < 0 for s in samples):
        raise InputError("samples carry no sign_class labels")

    if joint_embedder:
        return _train_joint(samples, embedder, config, seed)

    if not embedder.frozen:
        raise StateError("embedder must be frozen for separate training; call freeze()")
    left, right, labels, _ = build_sequences(samples, embedder, config)
    model = SignModel(config, left.shape[2], seed=seed)
    model.embedder_checksum = embedder.checksum()
    _, hist_l = train_hand_encoder(left, labels, config, seed=seed, encoder=model.left)
    _, hist_r = train_hand_encoder(right, labels, config, seed=seed + 1, encoder=model.right)
    metrics = {"left": hist_l, "right": hist_r}
    if config.fusion == "concat":
        metrics["joint"] = _train_concat_head(model, left, right, labels, config, seed)
    return model, metrics


def _train_concat_head(model: SignModel, left: np.ndarray, right: np.ndarray,
                       labels: np.ndarray, config: SequenceModelConfig, seed: int) -> list[dict]:
    """Fine-tune the joint head (and encoders) on concatenated hidden states."""
    train_idx, val_idx = _split_train_val(labels, config.val_fraction, seed)
    xl = torch.from_numpy(left[train_idx])
    xr = torch.from_numpy(right[train_idx])
    y = torch.from_numpy(labels[train_idx])
    xl_v = torch.from_numpy(left[val_idx])
    xr_v = torch.from_numpy(right[val_idx])
    y_v = labels[val_idx]
    criterion = nn.CrossEntropyLoss()
    params = list(model.joint.parameters())

    def step(batch):
        model.joint.train()
        return criterion(model.joint(xl[batch], xr[batch]), y[batch])

    def evaluate():
        model.joint.eval()
        with torch.no_grad():
            logits = model.joint(xl_v, xr_v)
        return float((logits.argmax(dim=1).numpy() == y_v).mean())

    history = _train_loop(step, evaluate, params, config, len(train_idx), seed + 2)
    model.joint.eval()
    return history


def _train_joint(samples, embedder, config: SequenceModelConfig, seed: int):
    """End-to-end training with an unfrozen embedder (joint-learning ablation)."""
    if embedder.frozen:
        embedder.unfreeze()
    T = config.frames_per_sequence
    stacks = {}
    for side in ("left", "right"):
        seqs = []
        for sample in samples:
            patches = sample.patches(side)
            idx = sample_uniform(len(patches), T)
            seqs.append(np.stack([patches[i].image for i in idx]))
        stacks[side] = np.stack(seqs)  # N x T x h x w x 3
    labels = np.asarray([s.sign_class for s in samples], dtype=np.int64)

    model = SignModel(config, embedder.config.embedding_dim, seed=seed)
    train_idx, val_idx = _split_train_val(labels, config.val_fraction, seed)
    y = torch.from_numpy(labels)
    criterion = nn.CrossEntropyLoss()
    params = (
        list(embedder.parameters())
        + list(model.left.parameters())
        + list(model.right.parameters())
        + (list(model.joint.head.parameters()) if model.joint else [])
    )

    def embed_batch(side, rows, grad):
        imgs = stacks[side][rows.numpy() if torch.is_tensor(rows) else rows]
        n, t = imgs.shape[:2]
        flat = imgs.reshape(n * t, *imgs.shape[2:])
        x = embedder._prepare(flat)
        ctx = torch.enable_grad() if grad else torch.no_grad()
        with ctx:
            features = embedder.backbone(x)
        return features.reshape(n, t, -1)

    def fused_logits(rows, grad=True):
        xl = embed_batch("left", rows, grad)
        xr = embed_batch("right", rows, grad)
        if config.fusion == "concat":
            return model.joint(xl, xr)
        _, ll = model.left(xl)
        _, lr = model.right(xr)
        if config.fusion == "mean":
            return (ll + lr) / 2
        return torch.maximum(ll, lr)

    def step(batch):
        embedder.backbone.train()
        model.left.train()
        model.right.train()
        return criterion(fused_logits(train_idx[batch.numpy()]), y[train_idx][batch])

    def evaluate():
        embedder.backbone.eval()
        model.left.eval()
        model.right.eval()
        with torch.no_grad():
            logits = fused_logits(val_idx, grad=False)
        return float((logits.argmax(dim=1).numpy() == labels[val_idx]).mean())

    history = _train_loop(step, evaluate, params, config, len(train_idx), seed)
    embedder.trained = True
    embedder.backbone.eval()
    model.left.eval()
    model.right.eval()
    model.embedder_checksum = embedder.checksum()
    return model, {"joint_pipeline": history}
