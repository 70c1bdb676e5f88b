"""Deterministic desk-scale datasets and the CIFAR binary reader."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError, FormatError, ParameterError

CIFAR_PIXELS = 3 * 32 * 32
CIFAR_LAYOUT = {"cifar10": (1, 10), "cifar100": (2, 100)}  # label bytes, classes


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "all"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels):
            raise ContractError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ContractError(f"labels outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return tuple(self.inputs.shape[1:])

    def subset(self, index, split: Optional[str] = None) -> "Dataset":
        return Dataset(self.inputs[index], self.labels[index], self.num_classes, split or self.split)

    def fingerprint(self) -> str:
        """Hash of input bytes, labels and split tag."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.inputs).tobytes())
        h.update(self.labels.astype("<i8").tobytes())
        h.update(self.split.encode())
        return h.hexdigest()[:16]


def train_test_split(data: Dataset, test_per_class: int, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified split: ``test_per_class`` samples of every class go to test."""
    rng = np.random.default_rng(seed)
    test_idx = []
    for k in range(data.num_classes):
        idx = np.flatnonzero(data.labels == k)
        if len(idx) <= test_per_class:
            raise ContractError(f"class {k} has {len(idx)} samples; need more than {test_per_class} for a split")
        test_idx.append(rng.permutation(idx)[:test_per_class])
    test_idx = np.sort(np.concatenate(test_idx)) if test_idx else np.array([], dtype=np.int64)
    mask = np.ones(len(data), dtype=bool)
    mask[test_idx] = False
    return data.subset(np.flatnonzero(mask), "train"), data.subset(test_idx, "test")


def standardize(train: Dataset, *others: Dataset) -> list[Dataset]:
    """Per-feature standardization using training-split statistics."""
    mean = train.inputs.mean(axis=0, keepdims=True)
    std = train.inputs.std(axis=0, keepdims=True)
    std = np.where(std > 1e-8, std, 1.0)
    out = []
    for d in (train, *others):
        x = ((d.inputs - mean) / std).astype(d.inputs.dtype)
        out.append(Dataset(x, d.labels, d.num_classes, d.split))
    return out


def subtract_channel_mean(train: Dataset, *others: Dataset) -> list[Dataset]:
    """Image normalization: subtract the training subset's per-channel mean."""
    mean = train.inputs.mean(axis=(0, 2, 3), keepdims=True) if len(train) else 0.0
    return [Dataset((d.inputs - mean).astype(np.float32), d.labels, d.num_classes, d.split) for d in (train, *others)]


def _balanced_labels(num_classes: int, per_class: int) -> np.ndarray:
    return np.repeat(np.arange(num_classes), per_class)


def simplex_vertices(num_classes: int, dim: int) -> np.ndarray:
    """Vertices of a regular simplex (unit pairwise distance) embedded in ``dim`` dims."""
    if dim < num_classes - 1:
        raise ParameterError(f"a {num_classes}-vertex simplex needs dim >= {num_classes - 1}, got {dim}")
    centered = np.eye(num_classes) - 1.0 / num_classes
    # orthonormal basis of the (K-1)-dim subspace the centered vertices span
    basis = np.linalg.svd(centered)[2][: max(num_classes - 1, 1)]
    coords = centered @ basis.T / np.sqrt(2.0)
    out = np.zeros((num_classes, dim))
    out[:, : coords.shape[1]] = coords
    return out


def gen_blobs(num_classes: int, per_class: int, dim: int, spread: float, seed: int) -> Dataset:
    """Isotropic Gaussian clusters around regular-simplex vertices."""
    if spread < 0:
        raise ParameterError(f"spread must be >= 0, got {spread}")
    rng = np.random.default_rng(seed)
    centers = simplex_vertices(num_classes, dim)
    labels = _balanced_labels(num_classes, per_class)
    x = centers[labels] + spread * rng.standard_normal((len(labels), dim))
    return Dataset(x.astype(np.float32), labels, num_classes)


def spiral_arms(num_classes: int, per_class: int, turns: float = 1.0) -> np.ndarray:
    """Noise-free arm coordinates, shape [K, per_class, 2]."""
    t = np.linspace(0.15, 1.0, per_class)
    arms = []
    for k in range(num_classes):
        theta = 2 * np.pi * (turns * t + k / num_classes)
        arms.append(np.stack([t * np.cos(theta), t * np.sin(theta)], axis=1))
    return np.stack(arms)


def gen_spirals(num_classes: int, per_class: int, noise: float, seed: int, turns: float = 1.0) -> Dataset:
    rng = np.random.default_rng(seed)
    arms = spiral_arms(num_classes, per_class, turns).reshape(-1, 2)
    labels = _balanced_labels(num_classes, per_class)
    x = arms + noise * rng.standard_normal(arms.shape)
    return Dataset(x.astype(np.float32), labels, num_classes)


def class_templates(num_classes: int, channels: int, side: int, seed: int) -> np.ndarray:
    """One procedural texture per class, values in [0, 1], shape [K, C, side, side].

    Each template mixes an oriented sinusoidal grating with a Gaussian blob
    and a second, class-specific grating per channel.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    out = np.empty((num_classes, channels, side, side))
    for k in range(num_classes):
        angle = np.pi * k / num_classes + rng.uniform(0, np.pi / (2 * num_classes))
        freq = rng.uniform(0.6, 1.6)
        cy, cx = rng.uniform(1, side - 2, size=2)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * (side / 5) ** 2))
        for c in range(channels):
            phase = rng.uniform(0, 2 * np.pi)
            a2 = rng.uniform(0, np.pi)
            wave = np.sin(freq * (np.cos(angle) * xx + np.sin(angle) * yy) + phase)
            wave2 = np.sin(0.9 * (np.cos(a2) * xx + np.sin(a2) * yy) + c)
            img = 0.45 * wave + 0.25 * wave2 + rng.uniform(0.6, 1.2) * blob
            img = (img - img.min()) / (img.max() - img.min())
            out[k, c] = img
    return out


def gen_patterned_images(
    num_classes: int,
    per_class: int,
    channels: int,
    side: int,
    seed: int,
    noise: float = 0.35,
    max_shift: int = 1,
    template_seed: Optional[int] = None,
) -> Dataset:
    """Class templates with random circular shifts and additive pixel noise, clipped to [0, 1].

    With ``noise=0`` and ``max_shift=0`` every image of a class equals its template.
    ``template_seed`` fixes the templates independently of the sampling seed.
    """
    rng = np.random.default_rng(seed)
    templates = class_templates(num_classes, channels, side, seed if template_seed is None else template_seed)
    labels = _balanced_labels(num_classes, per_class)
    x = templates[labels].copy()
    if max_shift:
        shifts = rng.integers(-max_shift, max_shift + 1, size=(len(labels), 2))
        for i, (dy, dx) in enumerate(shifts):
            x[i] = np.roll(x[i], (dy, dx), axis=(1, 2))
    if noise:
        x = np.clip(x + noise * rng.standard_normal(x.shape), 0.0, 1.0)
    return Dataset(x.astype(np.float32), labels, num_classes)


def read_cifar_binary(path, variant: str = "cifar10") -> Dataset:
    """Parse the CIFAR-10/100 binary record format.

    cifar10 records are ``<label><3072 pixels>``; cifar100 records are
    ``<coarse><fine><3072 pixels>`` and keep the fine label.  Pixels are R, G,
    B planes of 32x32 row-major bytes, scaled to [0, 1].
    """
    if variant not in CIFAR_LAYOUT:
        raise ParameterError(f"variant must be one of {sorted(CIFAR_LAYOUT)}, got {variant!r}")
    label_bytes, num_classes = CIFAR_LAYOUT[variant]
    record = label_bytes + CIFAR_PIXELS
    size = os.path.getsize(path)
    if size % record:
        raise FormatError(
            f"{path}: size {size} bytes is not a multiple of the {variant} record size {record} "
            f"(expected {size // record * record} or {(size // record + 1) * record} bytes)"
        )
    raw = np.fromfile(path, dtype=np.uint8).reshape(-1, record)
    labels = raw[:, label_bytes - 1].astype(np.int64)
    if labels.size and labels.max() >= num_classes:
        bad = int(np.flatnonzero(labels >= num_classes)[0])
        raise FormatError(f"{path}: record {bad} has label {labels[bad]} >= {num_classes}")
    pixels = raw[:, label_bytes:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return Dataset(pixels, labels, num_classes)


def write_cifar_binary(path, images: np.ndarray, labels: np.ndarray, variant: str = "cifar10", coarse=None) -> None:
    """Inverse of ``read_cifar_binary`` for uint8 images [N, 3, 32, 32]."""
    label_bytes, _ = CIFAR_LAYOUT[variant]
    images = np.asarray(images, dtype=np.uint8).reshape(len(labels), CIFAR_PIXELS)
    header = np.asarray(labels, dtype=np.uint8).reshape(-1, 1)
    if label_bytes == 2:
        c = np.zeros_like(header) if coarse is None else np.asarray(coarse, dtype=np.uint8).reshape(-1, 1)
        header = np.concatenate([c, header], axis=1)
    np.concatenate([header, images], axis=1).tofile(path)


def augment_flip(batch: np.ndarray, seed: int) -> np.ndarray:
    """Mirror each image along its width with probability 0.5."""
    batch = np.asarray(batch)
    if batch.ndim != 4:
        raise ContractError(f"horizontal flip needs [B, C, H, W] images, got shape {batch.shape}")
    flip = np.random.default_rng(seed).random(len(batch)) < 0.5
    out = batch.copy()
    out[flip] = out[flip][..., ::-1]
    return out


def augment_crop(batch: np.ndarray, seed: int, pad: int = 4) -> np.ndarray:
    """Zero-pad by ``pad`` pixels and crop back to the original size at a random offset."""
    batch = np.asarray(batch)
    if batch.ndim != 4:
        raise ContractError(f"random crop needs [B, C, H, W] images, got shape {batch.shape}")
    b, _, h, w = batch.shape
    padded = np.pad(batch, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    offsets = np.random.default_rng(seed).integers(0, 2 * pad + 1, size=(b, 2))
    return np.stack([padded[i, :, oy : oy + h, ox : ox + w] for i, (oy, ox) in enumerate(offsets)])


def load_dataset(spec: dict, seed: int) -> tuple[Dataset, Dataset]:
    """Build (train, test) from a config ``data`` section."""
    kind = spec["kind"]
    k = spec.get("num_classes", 10)
    if kind == "cifar":
        train = read_cifar_binary(spec["train_path"], spec.get("variant", "cifar10"))
        test = read_cifar_binary(spec["test_path"], spec.get("variant", "cifar10"))
        if spec.get("limit"):
            train = train.subset(slice(0, spec["limit"]))
        train.split, test.split = "train", "test"
        return tuple(subtract_channel_mean(train, test))
    data_seed = spec.get("seed", seed)
    per_class = spec["train_per_class"] + spec["test_per_class"]
    if kind == "blobs":
        data = gen_blobs(k, per_class, spec.get("dim", k), spec.get("spread", 0.5), data_seed)
    elif kind == "spirals":
        data = gen_spirals(k, per_class, spec.get("noise", 0.05), data_seed)
    elif kind == "patterned":
        data = gen_patterned_images(
            k,
            per_class,
            spec.get("channels", 3),
            spec.get("side", 8),
            data_seed,
            noise=spec.get("noise", 0.35),
            max_shift=spec.get("max_shift", 1),
            template_seed=spec.get("template_seed"),
        )
    else:
        raise ParameterError(f"unknown data kind {kind!r}")
    train, test = train_test_split(data, spec["test_per_class"], data_seed)
    norm = spec.get("normalize") or ("channel_mean" if kind == "patterned" else "standardize")
    if norm == "channel_mean":
        if train.inputs.ndim != 4:
            raise ParameterError("channel_mean normalization needs image data [N, C, H, W]")
        return tuple(subtract_channel_mean(train, test))
    if norm == "standardize":
        return tuple(standardize(train, test))
    raise ParameterError(f"unknown normalization {norm!r}")
