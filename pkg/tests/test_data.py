"""Dataset files: round trips, integrity checks, and validation."""

import struct
import zlib

import numpy as np
import pytest

from micronet.data import (DatasetError, IMAGES_NAME, LABELS_NAME,
                           load_dataset, save_dataset)
from micronet.train import make_synthetic


@pytest.mark.parametrize("dtype", [np.float64, np.float32, np.uint8])
def test_round_trip_preserves_dtype_and_bits(tmp_path, dtype):
    rng = np.random.default_rng(0)
    if dtype is np.uint8:
        images = rng.integers(0, 256, (5, 3, 4, 4)).astype(dtype)
    else:
        images = rng.standard_normal((5, 3, 4, 4)).astype(dtype)
    labels = rng.integers(0, 2, 5).astype(np.uint32)
    save_dataset(tmp_path, images, labels)
    got_images, got_labels = load_dataset(tmp_path)
    assert got_images.dtype == dtype
    np.testing.assert_array_equal(got_images, images)
    np.testing.assert_array_equal(got_labels, labels)


def test_synthetic_round_trip(tmp_path):
    images, labels = make_synthetic(16, seed=1)
    save_dataset(tmp_path, images, labels)
    got_images, got_labels = load_dataset(tmp_path)
    np.testing.assert_array_equal(got_images, images)
    np.testing.assert_array_equal(got_labels, labels)


def test_save_validation(tmp_path):
    with pytest.raises(DatasetError):
        save_dataset(tmp_path, np.zeros((2, 3, 4)), np.zeros(2))
    with pytest.raises(DatasetError):
        save_dataset(tmp_path, np.zeros((2, 3, 4, 4)), np.zeros(3))
    with pytest.raises(DatasetError):
        save_dataset(tmp_path, np.zeros((2, 3, 4, 4), dtype=np.int16),
                     np.zeros(2))


def test_corruption_detected(tmp_path):
    images, labels = make_synthetic(4, seed=2)
    save_dataset(tmp_path, images, labels)
    for name in (IMAGES_NAME, LABELS_NAME):
        path = tmp_path / name
        raw = bytearray(path.read_bytes())
        raw[len(raw) // 2] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(DatasetError, match="checksum"):
            load_dataset(tmp_path)
        save_dataset(tmp_path, images, labels)


def test_count_mismatch_detected(tmp_path):
    images, labels = make_synthetic(4, seed=3)
    save_dataset(tmp_path, images, labels)
    body = bytearray((tmp_path / LABELS_NAME).read_bytes())[:-4]
    body[4:8] = struct.pack("<I", 9)
    body += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    (tmp_path / LABELS_NAME).write_bytes(bytes(body))
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)


def test_missing_file_raises_filenotfound(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path)
