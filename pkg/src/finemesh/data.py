"""MNIST-format IDX ingestion, pixel-sequence flattening, synthetic digits.

IDX layout (big-endian):
  images: magic 0x00000803, count, rows, cols, then count*rows*cols bytes
  labels: magic 0x00000801, count, then count bytes
Files whose first two bytes are 0x1f 0x8b are transparently gunzipped.

When no real corpus is available, `synthesize_digits` renders a seeded
10-class stand-in (a 7x5 stencil font upscaled to 28x28 with random
shift, stroke thickness, intensity, and noise) that flows through the
exact same loader, flattener, and training paths.
"""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CountMismatchError",
    "IdxError",
    "IdxMagicError",
    "IdxTruncatedError",
    "MnistDataset",
    "flatten_sequence",
    "load_idx_images",
    "load_idx_labels",
    "load_mnist_idx",
    "synthesize_digits",
    "write_idx_images",
    "write_idx_labels",
]

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxError(ValueError):
    """Base class for IDX ingestion failures."""


class IdxMagicError(IdxError):
    """File does not start with the expected IDX magic number."""


class IdxTruncatedError(IdxError):
    """File ends before the header-declared payload."""


class CountMismatchError(IdxError):
    """Image and label files disagree on the example count."""


@dataclass
class MnistDataset:
    """Raw byte images (count, 28, 28), labels (count,), and the pixel scale."""

    images: np.ndarray
    labels: np.ndarray
    scale: float = 1.0 / 255.0

    def __post_init__(self) -> None:
        if self.images.shape[0] != self.labels.shape[0]:
            raise CountMismatchError(
                f"{self.images.shape[0]} images vs {self.labels.shape[0]} labels"
            )

    @property
    def count(self) -> int:
        return int(self.images.shape[0])


def _read_all(path) -> bytes:
    with open(path, "rb") as f:
        head = f.read(2)
        rest = f.read()
    raw = head + rest
    if head == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def _check_len(raw: bytes, expected: int, path) -> None:
    if len(raw) < expected:
        raise IdxTruncatedError(f"{path}: expected {expected} bytes, file has {len(raw)}")


def load_idx_images(path) -> np.ndarray:
    raw = _read_all(path)
    _check_len(raw, 16, path)
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGES_MAGIC:
        raise IdxMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}")
    _check_len(raw, 16 + count * rows * cols, path)
    data = np.frombuffer(raw, dtype=np.uint8, count=count * rows * cols, offset=16)
    return data.reshape(count, rows, cols).copy()


def load_idx_labels(path) -> np.ndarray:
    raw = _read_all(path)
    _check_len(raw, 8, path)
    magic, count = struct.unpack(">II", raw[:8])
    if magic != LABELS_MAGIC:
        raise IdxMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}")
    _check_len(raw, 8 + count, path)
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=8).copy()


def load_mnist_idx(images_path, labels_path) -> MnistDataset:
    """Load one images/labels IDX pair (plain or gzipped) into a dataset."""
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{images.shape[0]} images in {images_path} vs "
            f"{labels.shape[0]} labels in {labels_path}"
        )
    if images.shape[1:] != (28, 28):
        raise IdxError(f"expected 28x28 images, got {images.shape[1:]}")
    if labels.size and labels.max() > 9:
        raise IdxError(f"labels must be digits 0-9, found {labels.max()}")
    return MnistDataset(images, labels)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGES_MAGIC, count, rows, cols))
        f.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", LABELS_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def flatten_sequence(dataset: MnistDataset, downsample: int = 1) -> np.ndarray:
    """Images -> feature-major pixel sequences, shape (T, count).

    `downsample` in {1, 2, 4} block-averages the 28x28 grid down to
    (28/d)^2 pixels; rows are then flattened in row-major order so each
    column is one image read left-to-right, top-to-bottom, scaled to
    [0, 1].
    """
    if downsample not in (1, 2, 4):
        raise ValueError(f"downsample must be 1, 2, or 4, got {downsample}")
    px = dataset.images.astype(float) * dataset.scale
    count = px.shape[0]
    side = 28 // downsample
    if downsample > 1:
        px = px.reshape(count, side, downsample, side, downsample).mean(axis=(2, 4))
    return px.reshape(count, side * side).T.copy()


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

_FONT = {
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

def _glyph(digit: int) -> np.ndarray:
    # 21 x 20 upscale centered with a >=3 px border, so +-3 px shifts never crop
    bitmap = np.array([[c == "1" for c in row] for row in _FONT[digit]], dtype=float)
    up = np.kron(bitmap, np.ones((3, 4)))
    canvas = np.zeros((28, 28))
    canvas[3:24, 4:24] = up
    return canvas


def _dilate(img: np.ndarray) -> np.ndarray:
    out = img.copy()
    out[1:, :] = np.maximum(out[1:, :], img[:-1, :])
    out[:, 1:] = np.maximum(out[:, 1:], img[:, :-1])
    return out


def synthesize_digits(count: int, seed: int = 0) -> MnistDataset:
    """Seeded 10-class 28x28 digit corpus with per-sample jitter.

    Each sample draws a class, a stroke thickness, an integer shift in
    [-3, 3]^2, an intensity in [0.6, 1.0], and pixel noise, then
    quantizes to uint8.  Deterministic for a given (count, seed).
    """
    rng = np.random.default_rng(seed)
    thin = np.stack([_glyph(d) for d in range(10)])
    thick = np.stack([_dilate(g) for g in thin])
    labels = rng.integers(0, 10, size=count).astype(np.uint8)
    use_thick = rng.integers(0, 2, size=count).astype(bool)
    shifts = rng.integers(-3, 4, size=(count, 2))
    intensity = rng.uniform(0.6, 1.0, size=count)
    noise = rng.normal(0.0, 0.04, size=(count, 28, 28))
    padded = np.zeros((count, 34, 34))
    base = np.where(use_thick[:, None, None], thick[labels], thin[labels])
    padded[:, 3:31, 3:31] = base * intensity[:, None, None]
    images = np.empty((count, 28, 28))
    for i, (dy, dx) in enumerate(shifts):
        images[i] = padded[i, 3 + dy : 31 + dy, 3 + dx : 31 + dx]
    images = np.clip(images + noise, 0.0, 1.0)
    return MnistDataset((images * 255).round().astype(np.uint8), labels)
