"""IDX ingestion, sequence flattening, and the synthetic digit corpus."""
import gzip
import struct

import numpy as np
import pytest

from finemesh.data import (
    CountMismatchError,
    IdxError,
    IdxMagicError,
    IdxTruncatedError,
    MnistDataset,
    flatten_sequence,
    load_idx_images,
    load_idx_labels,
    load_mnist_idx,
    synthesize_digits,
    write_idx_images,
    write_idx_labels,
)


def write_pair(tmp_path, images, labels, gz=False):
    img_path = tmp_path / "images-idx3-ubyte"
    lbl_path = tmp_path / "labels-idx1-ubyte"
    write_idx_images(img_path, images)
    write_idx_labels(lbl_path, labels)
    if gz:
        for p in (img_path, lbl_path):
            gz_path = p.with_name(p.name + ".gz")
            gz_path.write_bytes(gzip.compress(p.read_bytes()))
            p.unlink()
        return img_path.with_name(img_path.name + ".gz"), lbl_path.with_name(
            lbl_path.name + ".gz")
    return img_path, lbl_path


def test_idx_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(5, 28, 28), dtype=np.uint8)
    labels = rng.integers(0, 10, size=5, dtype=np.uint8)
    img_path, lbl_path = write_pair(tmp_path, images, labels)
    ds = load_mnist_idx(img_path, lbl_path)
    assert np.array_equal(ds.images, images)
    assert np.array_equal(ds.labels, labels)
    assert ds.count == 5


def test_idx_gzip_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    images = rng.integers(0, 256, size=(3, 28, 28), dtype=np.uint8)
    labels = rng.integers(0, 10, size=3, dtype=np.uint8)
    img_path, lbl_path = write_pair(tmp_path, images, labels, gz=True)
    ds = load_mnist_idx(img_path, lbl_path)
    assert np.array_equal(ds.images, images)
    assert np.array_equal(ds.labels, labels)


def test_idx_magic_error(tmp_path):
    path = tmp_path / "bad"
    path.write_bytes(struct.pack(">IIII", 0xDEADBEEF, 1, 28, 28) + b"\x00" * 784)
    with pytest.raises(IdxMagicError):
        load_idx_images(path)
    path.write_bytes(struct.pack(">II", 0x00000803, 1) + b"\x00")  # images magic
    with pytest.raises(IdxMagicError):
        load_idx_labels(path)


def test_idx_truncation_error(tmp_path):
    path = tmp_path / "short"
    path.write_bytes(struct.pack(">IIII", 0x00000803, 2, 28, 28) + b"\x00" * 100)
    with pytest.raises(IdxTruncatedError):
        load_idx_images(path)
    path.write_bytes(struct.pack(">II", 0x00000801, 10) + b"\x00" * 3)
    with pytest.raises(IdxTruncatedError):
        load_idx_labels(path)
    path.write_bytes(b"\x00\x08")  # shorter than any header
    with pytest.raises(IdxTruncatedError):
        load_idx_labels(path)


def test_idx_count_mismatch(tmp_path):
    images = np.zeros((4, 28, 28), dtype=np.uint8)
    labels = np.zeros(3, dtype=np.uint8)
    img_path = tmp_path / "img"
    lbl_path = tmp_path / "lbl"
    write_idx_images(img_path, images)
    write_idx_labels(lbl_path, labels)
    with pytest.raises(CountMismatchError):
        load_mnist_idx(img_path, lbl_path)


def test_idx_rejects_wrong_geometry_and_labels(tmp_path):
    img_path = tmp_path / "img"
    lbl_path = tmp_path / "lbl"
    write_idx_images(img_path, np.zeros((2, 14, 14), dtype=np.uint8))
    write_idx_labels(lbl_path, np.zeros(2, dtype=np.uint8))
    with pytest.raises(IdxError):
        load_mnist_idx(img_path, lbl_path)
    write_idx_images(img_path, np.zeros((2, 28, 28), dtype=np.uint8))
    write_idx_labels(lbl_path, np.array([3, 11], dtype=np.uint8))
    with pytest.raises(IdxError):
        load_mnist_idx(img_path, lbl_path)


def test_error_taxonomy():
    assert issubclass(IdxMagicError, IdxError)
    assert issubclass(IdxTruncatedError, IdxError)
    assert issubclass(CountMismatchError, IdxError)
    assert issubclass(IdxError, ValueError)


def test_dataset_count_mismatch_at_construction():
    with pytest.raises(CountMismatchError):
        MnistDataset(np.zeros((2, 28, 28), dtype=np.uint8),
                     np.zeros(1, dtype=np.uint8))


# ---------------------------------------------------------------------------
# flattening
# ---------------------------------------------------------------------------

def test_flatten_shapes_and_scaling():
    images = np.zeros((3, 28, 28), dtype=np.uint8)
    images[0] = 255
    ds = MnistDataset(images, np.zeros(3, dtype=np.uint8))
    for d, t in ((1, 784), (2, 196), (4, 49)):
        seq = flatten_sequence(ds, downsample=d)
        assert seq.shape == (t, 3)
    seq = flatten_sequence(ds, downsample=1)
    assert np.allclose(seq[:, 0], 1.0)   # 255 scales to 1.0
    assert np.allclose(seq[:, 1], 0.0)
    with pytest.raises(ValueError):
        flatten_sequence(ds, downsample=3)


def test_flatten_block_average_oracle():
    images = np.zeros((1, 28, 28), dtype=np.uint8)
    images[0, 0, 0] = 0
    images[0, 0, 1] = 255
    images[0, 1, 0] = 255
    images[0, 1, 1] = 0
    images[0, 2:4, 2:4] = 255  # block (1, 1) fully bright
    ds = MnistDataset(images, np.zeros(1, dtype=np.uint8))
    seq = flatten_sequence(ds, downsample=2)
    # block (0, 0): mean of {0, 255, 255, 0} = 127.5 -> 0.5
    assert seq[0, 0] == pytest.approx(0.5)
    # row-major order: block (row 1, col 1) sits at index 1 * 14 + 1
    assert seq[15, 0] == pytest.approx(1.0)
    assert seq[1, 0] == pytest.approx(0.0)


def test_flatten_row_major_order():
    images = np.zeros((1, 28, 28), dtype=np.uint8)
    images[0, 0, 27] = 255   # top-right pixel
    images[0, 27, 0] = 255   # bottom-left pixel
    ds = MnistDataset(images, np.zeros(1, dtype=np.uint8))
    seq = flatten_sequence(ds, downsample=1)
    assert seq[27, 0] == pytest.approx(1.0)        # end of first row
    assert seq[27 * 28, 0] == pytest.approx(1.0)   # start of last row


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

def test_synthesize_is_deterministic_and_seed_sensitive():
    a = synthesize_digits(50, seed=3)
    b = synthesize_digits(50, seed=3)
    c = synthesize_digits(50, seed=4)
    assert np.array_equal(a.images, b.images)
    assert np.array_equal(a.labels, b.labels)
    assert not np.array_equal(a.images, c.images)


def test_synthesize_shapes_and_coverage():
    ds = synthesize_digits(200, seed=5)
    assert ds.images.shape == (200, 28, 28)
    assert ds.images.dtype == np.uint8
    assert ds.labels.shape == (200,)
    assert set(np.unique(ds.labels)) == set(range(10))
    # glyphs live inside the frame; borders stay mostly dark
    border = np.concatenate([
        ds.images[:, 0, :].ravel(), ds.images[:, -1, :].ravel(),
        ds.images[:, :, 0].ravel(), ds.images[:, :, -1].ravel(),
    ])
    assert border.mean() < 40.0


def test_synthesize_classes_are_separable():
    # Nearest class centroid on raw pixels should beat chance by a wide
    # margin even with the shift/thickness/noise augmentations.
    train = synthesize_digits(500, seed=1)
    test = synthesize_digits(120, seed=2)
    xtr = flatten_sequence(train, 2).T
    xte = flatten_sequence(test, 2).T
    centroids = np.stack([xtr[train.labels == d].mean(axis=0) for d in range(10)])
    pred = np.argmin(
        ((xte[:, None, :] - centroids[None]) ** 2).sum(axis=-1), axis=1)
    assert (pred == test.labels).mean() > 0.5


def test_synthesize_count_zero():
    ds = synthesize_digits(0, seed=0)
    assert ds.count == 0
    assert flatten_sequence(ds, 2).shape == (196, 0)
