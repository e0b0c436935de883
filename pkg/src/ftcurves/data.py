"""Dataset ingestion and preprocessing.

The .ftc container holds raw uint8 images plus labels; preprocessing converts
RGB to greyscale with the NTSC weights and standardizes each image to zero
mean and (by default) unit variance. A seeded synthetic digit generator ships
so the whole suite runs without the real SVHN files.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .metrics import entropy_bits
from .rng import substream

FTC_MAGIC = b"FTC1"
IMG_SIZE = 32
STD_EPS = 1e-8


class ContainerError(ValueError):
    """Base class for .ftc container problems."""


class ContainerFormatError(ContainerError):
    pass


class ContainerTruncatedError(ContainerError):
    pass


class ContainerLabelError(ContainerError):
    pass


class MissingClassError(ValueError):
    pass


@dataclass
class RawDataset:
    """uint8 images (n, c, 32, 32) with c in {1, 3} and labels in 0..9."""

    images: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.images.shape[0]


@dataclass
class Dataset:
    """Standardized float32 images (n, 1, 32, 32) and labels in 0..9."""

    images: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.images.shape[0]


def load_container(path) -> RawDataset:
    """Parse an .ftc container.

    Layout (little-endian): magic 'FTC1'; u8 channel count; u32 image count
    n; n*c*32*32 pixel bytes (image-major, channel-major within an image,
    row-major within a channel); n label bytes in 0..9.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 9 or raw[:4] != FTC_MAGIC:
        raise ContainerFormatError(f"{path}: bad magic, not an .ftc container")
    c = raw[4]
    if c not in (1, 3):
        raise ContainerFormatError(f"{path}: channel count {c} not in {{1, 3}}")
    (n,) = struct.unpack_from("<I", raw, 5)
    if n < 1:
        raise ContainerFormatError(f"{path}: container declares 0 images")
    pixel_bytes = n * c * IMG_SIZE * IMG_SIZE
    need = 9 + pixel_bytes + n
    if len(raw) < need:
        raise ContainerTruncatedError(
            f"{path}: declares {n} images ({need} bytes) but file has {len(raw)}"
        )
    if len(raw) > need:
        raise ContainerFormatError(f"{path}: {len(raw) - need} trailing bytes")
    images = (
        np.frombuffer(raw, dtype=np.uint8, count=pixel_bytes, offset=9)
        .reshape(n, c, IMG_SIZE, IMG_SIZE)
        .copy()
    )
    labels = np.frombuffer(raw, dtype=np.uint8, count=n, offset=9 + pixel_bytes)
    if labels.max(initial=0) > 9:
        bad = int(labels.max())
        raise ContainerLabelError(f"{path}: label {bad} out of range 0..9")
    return RawDataset(images, labels.astype(np.int64))


def write_container(images: np.ndarray, labels, path) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels)
    n, c = images.shape[:2]
    with open(path, "wb") as f:
        f.write(FTC_MAGIC)
        f.write(struct.pack("<BI", c, n))
        f.write(images.tobytes())
        f.write(labels.astype(np.uint8).tobytes())


def ntsc_greyscale(images: np.ndarray) -> np.ndarray:
    """0.299 R + 0.587 G + 0.114 B, kept in real arithmetic (no requantization)."""
    if images.ndim != 4 or images.shape[1] != 3:
        raise ValueError(f"expected (n, 3, h, w) RGB images, got {images.shape}")
    x = images.astype(np.float64)
    grey = 0.299 * x[:, 0] + 0.587 * x[:, 1] + 0.114 * x[:, 2]
    return grey[:, None, :, :]


def standardize_per_image(images: np.ndarray) -> np.ndarray:
    """Zero the mean and divide by the population std of each image.

    Constant images come out all-zero (std guard at 1e-8). Idempotent up to
    float rounding.
    """
    x = np.asarray(images, dtype=np.float64)
    mean = x.mean(axis=(1, 2, 3), keepdims=True)
    std = x.std(axis=(1, 2, 3), keepdims=True)
    out = (x - mean) / np.maximum(std, STD_EPS)
    return out.astype(np.float32)


def standardize_per_dataset(images: np.ndarray) -> np.ndarray:
    """Per-image mean subtraction, then one shared std over the whole set."""
    x = np.asarray(images, dtype=np.float64)
    x = x - x.mean(axis=(1, 2, 3), keepdims=True)
    std = x.std()
    return (x / max(std, STD_EPS)).astype(np.float32)


def prepare_dataset(raw: RawDataset, per_image: bool = True) -> Dataset:
    """Greyscale (if RGB) then standardize; the analysis-ready form."""
    if raw.images.shape[1] == 3:
        grey = ntsc_greyscale(raw.images)
    else:
        grey = raw.images.astype(np.float64)
    std = standardize_per_image if per_image else standardize_per_dataset
    return Dataset(std(grey), np.asarray(raw.labels, dtype=np.int64))


def class_weights(labels, n_classes: int = 10) -> np.ndarray:
    """Inverse-frequency weights w[k] = (n/n_classes)/count[k]; mean weight 1."""
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=n_classes)
    if (counts == 0).any():
        missing = np.flatnonzero(counts == 0).tolist()
        raise MissingClassError(
            f"classes {missing} have no examples; provide data covering every class "
            "or use uniform weights"
        )
    return (len(labels) / n_classes) / counts.astype(np.float64)


def sample_subset(dataset: Dataset, n: int = 1000, seed: int = 0) -> Dataset:
    """n distinct indices, reproducible from the seed's sample stream."""
    total = len(dataset)
    if n > total:
        raise ValueError(f"requested {n} of {total} images")
    idx = substream(seed, "sample").choice(total, size=n, replace=False)
    return Dataset(dataset.images[idx].copy(), dataset.labels[idx].copy())


def label_entropy(labels) -> float:
    """Plug-in Shannon entropy of the label distribution, in bits."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty labels")
    return entropy_bits(np.bincount(labels))


# 5x7 glyphs for the synthetic digit set; '1' marks foreground.
_GLYPHS = {
    0: ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    1: ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    2: ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    3: ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    4: ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    5: ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    6: ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    7: ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    8: ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    9: ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
}


def _glyph_mask(digit: int, scale: int) -> np.ndarray:
    rows = _GLYPHS[digit]
    bitmap = np.array([[ch == "1" for ch in row] for row in rows], dtype=np.float64)
    return np.kron(bitmap, np.ones((scale, scale)))


def synthetic_digits(
    n: int,
    seed: int = 0,
    scale: int = 3,
    jitter: int = 3,
    noise_sigma: float = 16.0,
) -> RawDataset:
    """Seeded synthetic greyscale digit set: glyph templates with random
    contrast, translation jitter, and Gaussian pixel noise.

    The defaults are sized so that a few epochs of training reach high clean
    accuracy while heavy white noise still drives predictions toward chance.
    Every class is guaranteed present for n >= 10.
    """
    rng = substream(seed, "synth")
    labels = np.concatenate([np.arange(min(n, 10)), rng.integers(0, 10, size=max(n - 10, 0))])
    rng.shuffle(labels)
    images = np.empty((n, 1, IMG_SIZE, IMG_SIZE), dtype=np.uint8)
    gh, gw = 7 * scale, 5 * scale
    base_r, base_c = (IMG_SIZE - gh) // 2, (IMG_SIZE - gw) // 2
    for i in range(n):
        bg = rng.uniform(20, 60)
        fg = bg + rng.uniform(100, 180)
        canvas = np.full((IMG_SIZE, IMG_SIZE), bg)
        dr = int(rng.integers(-jitter, jitter + 1))
        dc = int(rng.integers(-jitter, jitter + 1))
        mask = _glyph_mask(int(labels[i]), scale)
        r0, c0 = base_r + dr, base_c + dc
        canvas[r0 : r0 + gh, c0 : c0 + gw] += mask * (fg - bg)
        canvas += rng.normal(0.0, noise_sigma, size=canvas.shape)
        images[i, 0] = np.clip(canvas, 0, 255).astype(np.uint8)
    return RawDataset(images, labels.astype(np.int64))
