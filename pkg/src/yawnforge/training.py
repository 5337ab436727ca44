"""Mouth-state classifier training: split, augment, fit, evaluate, package.

Deterministic end to end: the same seed over the same files yields the same
split, the same augmented samples, the same weight trajectory, and therefore
identical metrics.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import netspec
from .backends import LABELS
from .errors import DatasetError, TrainingDivergedError
from .model import ModelArtifact, build_torch_module, preprocess_crop

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp"}


@dataclass(frozen=True)
class AugmentationConfig:
    """Rotation, scaling, and brightness jitter; label-preserving.

    Each training image contributes itself plus multiplier-1 jittered copies.
    """

    multiplier: int = 1
    rotation_deg_range: float = 8.0  # sampled from [-r, r]
    scale_range: tuple[float, float] = (0.9, 1.1)
    brightness_range: tuple[float, float] = (0.88, 1.12)

    def __post_init__(self):
        if self.multiplier < 1:
            raise DatasetError(f"augmentation multiplier must be >= 1, got {self.multiplier}")
        for name, (lo, hi) in (("scale_range", self.scale_range),
                               ("brightness_range", self.brightness_range)):
            if not (0 < lo <= hi):
                raise DatasetError(f"{name} must satisfy 0 < low <= high, got {(lo, hi)}")


@dataclass(frozen=True)
class SplitConfig:
    test_fraction: float = 0.2
    seed: int = 13

    def __post_init__(self):
        if not (0.0 < self.test_fraction < 1.0):
            raise DatasetError(f"test_fraction must be in (0, 1), got {self.test_fraction}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 8
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 7
    device: str = "cpu"
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    split: SplitConfig = field(default_factory=SplitConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise DatasetError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise DatasetError(f"batch_size must be >= 1, got {self.batch_size}")


def load_image_dataset(root: str | Path) -> tuple[list[np.ndarray], list[str]]:
    """Read ``<root>/<label>/*.png`` style class folders."""
    import cv2

    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root is not a directory: {root}")
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    unknown = [d.name for d in class_dirs if d.name not in LABELS]
    if unknown:
        raise DatasetError(f"unexpected class folders {unknown}; expected {list(LABELS)}")

    images, labels = [], []
    for class_dir in class_dirs:
        for p in sorted(class_dir.iterdir()):
            if p.suffix.lower() not in IMAGE_EXTENSIONS:
                continue
            img = cv2.imread(str(p), cv2.IMREAD_UNCHANGED)
            if img is None:
                raise DatasetError(f"unreadable image: {p}")
            images.append(img)
            labels.append(class_dir.name)
    if not images:
        raise DatasetError(f"no images found under {root}")
    return images, labels


def stratified_split(
    labels: Sequence[str], test_fraction: float, seed: int
) -> tuple[list[int], list[int]]:
    """Per-class shuffled split; every class with 2+ samples appears in both
    sides. Returned index lists are sorted."""
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for label in sorted(set(labels)):
        idx = [i for i, l in enumerate(labels) if l == label]
        rng.shuffle(idx)
        n = len(idx)
        if n < 2:
            logger.warning("class %r has a single sample; keeping it in train", label)
            train_idx.extend(idx)
            continue
        n_test = min(max(int(round(n * test_fraction)), 1), n - 1)
        test_idx.extend(idx[:n_test])
        train_idx.extend(idx[n_test:])
    return sorted(train_idx), sorted(test_idx)


def augment_image(image: np.ndarray, rng: np.random.Generator,
                  cfg: AugmentationConfig) -> np.ndarray:
    import cv2

    angle = float(rng.uniform(-cfg.rotation_deg_range, cfg.rotation_deg_range))
    scale = float(rng.uniform(*cfg.scale_range))
    gain = float(rng.uniform(*cfg.brightness_range))
    h, w = image.shape[:2]
    m = cv2.getRotationMatrix2D((w / 2.0, h / 2.0), angle, scale)
    out = cv2.warpAffine(image, m, (w, h), borderMode=cv2.BORDER_REPLICATE)
    return np.clip(out.astype(np.float32) * gain, 0, 255).astype(np.uint8)


def _check_degenerate(images: Sequence[np.ndarray], labels: Sequence[str]) -> None:
    present = sorted(set(labels))
    if len(present) < 2:
        raise DatasetError(
            f"training data contains a single class {present}; need both of {list(LABELS)}"
        )
    digests: dict[str, set[str]] = {}
    for img, label in zip(images, labels):
        digests.setdefault(hashlib.sha256(np.asarray(img).tobytes()).hexdigest(),
                           set()).add(label)
    if len(digests) <= len(images) // 2:
        logger.warning(
            "training data is heavily duplicated: %d distinct images out of %d",
            len(digests), len(images),
        )
    contradictory = sum(1 for v in digests.values() if len(v) > 1)
    if contradictory:
        logger.warning(
            "%d identical images carry both labels; accuracy on them is capped",
            contradictory,
        )


def _confusion(y_true: np.ndarray, y_pred: np.ndarray) -> list[list[int]]:
    k = len(LABELS)
    cm = [[0] * k for _ in range(k)]
    for t, p in zip(y_true, y_pred):
        cm[int(t)][int(p)] += 1
    return cm


def _per_class(cm: list[list[int]]) -> dict:
    out = {}
    for i, label in enumerate(LABELS):
        row = sum(cm[i])
        col = sum(cm[j][i] for j in range(len(LABELS)))
        out[label] = {
            "precision": cm[i][i] / col if col else 0.0,
            "recall": cm[i][i] / row if row else 0.0,
            "support": row,
        }
    return out


def _predict_indices(module, inputs: np.ndarray, batch_size: int) -> np.ndarray:
    import torch

    module.eval()
    preds = []
    with torch.no_grad():
        for start in range(0, len(inputs), batch_size):
            batch = torch.from_numpy(inputs[start: start + batch_size])
            preds.append(module(batch).argmax(dim=1).numpy())
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def train(
    images: Sequence[np.ndarray],
    labels: Sequence[str],
    config: TrainConfig | None = None,
    out_path: str | Path | None = None,
    spec_overrides: dict | None = None,
) -> ModelArtifact:
    """Fit the mouth-state network and return (optionally save) the artifact.

    Raises TrainingDivergedError when the loss stops being finite; the
    exception carries an artifact built from the last finite checkpoint.
    """
    import torch

    config = config or TrainConfig()
    if len(images) != len(labels):
        raise DatasetError(f"{len(images)} images vs {len(labels)} labels")
    bad = sorted(set(labels) - set(LABELS))
    if bad:
        raise DatasetError(f"unknown labels {bad}; expected {list(LABELS)}")
    _check_degenerate(images, labels)

    train_idx, test_idx = stratified_split(
        labels, config.split.test_fraction, config.split.seed
    )
    label_ix = {label: i for i, label in enumerate(LABELS)}

    aug_rng = np.random.default_rng(config.seed + 1)
    train_inputs, train_targets = [], []
    for i in train_idx:
        train_inputs.append(preprocess_crop(images[i]))
        train_targets.append(label_ix[labels[i]])
        for _ in range(config.augmentation.multiplier - 1):
            train_inputs.append(
                preprocess_crop(augment_image(images[i], aug_rng, config.augmentation))
            )
            train_targets.append(label_ix[labels[i]])
    x_train = np.stack(train_inputs)
    y_train = np.asarray(train_targets, dtype=np.int64)
    x_eval = np.stack([preprocess_crop(images[i]) for i in train_idx])
    y_eval = np.asarray([label_ix[labels[i]] for i in train_idx], dtype=np.int64)
    x_test = np.stack([preprocess_crop(images[i]) for i in test_idx]) if test_idx else None
    y_test = np.asarray([label_ix[labels[i]] for i in test_idx], dtype=np.int64)

    torch.manual_seed(config.seed)
    spec = netspec.build_network(spec_overrides)
    module = build_torch_module(spec).to(config.device)
    optimizer = torch.optim.Adam(module.parameters(), lr=config.learning_rate)
    loss_fn = torch.nn.CrossEntropyLoss()

    checkpoint = {k: v.detach().clone() for k, v in module.state_dict().items()}
    epoch_losses: list[float] = []
    diverged_at = None
    for epoch in range(config.epochs):
        module.train()
        order = np.random.default_rng(config.seed * 1009 + epoch).permutation(len(x_train))
        batch_losses = []
        for start in range(0, len(order), config.batch_size):
            sel = order[start: start + config.batch_size]
            xb = torch.from_numpy(x_train[sel]).to(config.device)
            yb = torch.from_numpy(y_train[sel]).to(config.device)
            optimizer.zero_grad()
            loss = loss_fn(module(xb), yb)
            value = float(loss.detach())
            if not np.isfinite(value):
                diverged_at = (epoch, start // config.batch_size)
                break
            loss.backward()
            optimizer.step()
            batch_losses.append(value)
        if diverged_at is not None:
            break
        epoch_losses.append(float(np.mean(batch_losses)) if batch_losses else 0.0)
        checkpoint = {k: v.detach().clone() for k, v in module.state_dict().items()}

    if diverged_at is not None:
        module.load_state_dict(checkpoint)
        artifact = ModelArtifact.from_module(
            module, spec,
            metrics={"diverged": True, "epoch_losses": epoch_losses},
            meta={"config": asdict(config), "aborted_at": list(diverged_at)},
        )
        raise TrainingDivergedError(
            f"loss became non-finite at epoch {diverged_at[0]} "
            f"batch {diverged_at[1]}; keeping the last finite checkpoint",
            artifact=artifact,
        )

    train_pred = _predict_indices(module, x_eval, config.batch_size)
    train_acc = float((train_pred == y_eval).mean()) if len(y_eval) else 0.0
    if x_test is not None and len(y_test):
        test_pred = _predict_indices(module, x_test, config.batch_size)
        test_acc = float((test_pred == y_test).mean())
        cm = _confusion(y_test, test_pred)
    else:
        test_acc = None
        cm = _confusion(np.zeros(0), np.zeros(0))

    metrics = {
        "n_total": len(images),
        "n_train": len(train_idx),
        "n_train_augmented": int(len(x_train)),
        "n_test": len(test_idx),
        "train_accuracy": round(train_acc, 6),
        "test_accuracy": round(test_acc, 6) if test_acc is not None else None,
        "per_class": _per_class(cm),
        "confusion_matrix": cm,
        "epoch_losses": [round(v, 6) for v in epoch_losses],
        "label_order": list(LABELS),
    }
    artifact = ModelArtifact.from_module(
        module, spec, metrics=metrics,
        meta={"config": asdict(config), "label_order": list(LABELS)},
    )
    if out_path is not None:
        artifact.save(out_path)
    return artifact


def train_directory(
    data_dir: str | Path,
    out_path: str | Path | None = None,
    config: TrainConfig | None = None,
    spec_overrides: dict | None = None,
) -> ModelArtifact:
    images, labels = load_image_dataset(data_dir)
    return train(images, labels, config=config, out_path=out_path,
                 spec_overrides=spec_overrides)
