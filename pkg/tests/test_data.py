"""Dataset container, IDX parsing, and synthetic sphere data."""

import gzip
import struct
from pathlib import Path

import numpy as np
import pytest

from signet.data import DataError, Dataset, load_idx, synth_sphere

MNIST_DIR = Path(__file__).resolve().parents[1] / "data" / "mnist"


def idx_images_bytes(arrays):
    """Hand-build an IDX image file from a list of equally shaped 2-D arrays."""
    n = len(arrays)
    rows, cols = np.asarray(arrays[0]).shape
    body = b"".join(bytes(np.asarray(a, dtype=np.uint8).ravel()) for a in arrays)
    return struct.pack(">IIII", 0x00000803, n, rows, cols) + body


def idx_labels_bytes(labels):
    return struct.pack(">II", 0x00000801, len(labels)) + bytes(labels)


@pytest.fixture()
def idx_pair(tmp_path):
    imgs = [np.arange(6).reshape(2, 3), 250 + np.arange(6).reshape(2, 3)]
    ip = tmp_path / "imgs.idx"
    lp = tmp_path / "labels.idx"
    ip.write_bytes(idx_images_bytes(imgs))
    lp.write_bytes(idx_labels_bytes([1, 0]))
    return ip, lp


class TestLoadIdx:
    def test_exact_pixels(self, idx_pair):
        ds = load_idx(*idx_pair, split="toy")
        assert ds.inputs.shape == (2, 2, 3)
        assert ds.labels.tolist() == [1, 0]
        assert ds.split == "toy"
        expected0 = np.arange(6).reshape(2, 3) / 255.0
        assert np.array_equal(ds.inputs[0], expected0)
        assert ds.inputs[1, 1, 2] == 1.0  # byte 255 scales to exactly 1

    def test_gzip_transparent(self, idx_pair, tmp_path):
        ip, lp = idx_pair
        gz_i = tmp_path / "imgs.idx.gz"
        gz_l = tmp_path / "labels.idx.gz"
        gz_i.write_bytes(gzip.compress(ip.read_bytes()))
        gz_l.write_bytes(gzip.compress(lp.read_bytes()))
        a = load_idx(ip, lp)
        b = load_idx(gz_i, gz_l)
        assert np.array_equal(a.inputs, b.inputs)
        assert np.array_equal(a.labels, b.labels)

    def test_bad_magic(self, idx_pair, tmp_path):
        ip, lp = idx_pair
        raw = bytearray(ip.read_bytes())
        raw[3] = 0x99
        bad = tmp_path / "bad.idx"
        bad.write_bytes(bytes(raw))
        with pytest.raises(DataError, match="magic"):
            load_idx(bad, lp)

    def test_truncated_payload(self, idx_pair, tmp_path):
        ip, lp = idx_pair
        bad = tmp_path / "short.idx"
        bad.write_bytes(ip.read_bytes()[:-3])
        with pytest.raises(DataError, match="size"):
            load_idx(bad, lp)

    def test_oversized_payload(self, idx_pair, tmp_path):
        ip, lp = idx_pair
        bad = tmp_path / "long.idx"
        bad.write_bytes(ip.read_bytes() + b"\x00")
        with pytest.raises(DataError):
            load_idx(bad, lp)

    def test_count_mismatch(self, idx_pair, tmp_path):
        ip, _ = idx_pair
        lp3 = tmp_path / "three.idx"
        lp3.write_bytes(idx_labels_bytes([0, 1, 1]))
        with pytest.raises(DataError, match="count"):
            load_idx(ip, lp3)

    def test_truncated_header(self, idx_pair, tmp_path):
        _, lp = idx_pair
        bad = tmp_path / "hdr.idx"
        bad.write_bytes(b"\x00\x00\x08")
        with pytest.raises(DataError, match="header"):
            load_idx(bad, lp)


@pytest.mark.skipif(not MNIST_DIR.exists(), reason="vendored MNIST not present")
class TestMnistFiles:
    def test_train_split(self):
        ds = load_idx(
            MNIST_DIR / "train-images-idx3-ubyte.gz",
            MNIST_DIR / "train-labels-idx1-ubyte.gz",
            split="train",
        )
        assert ds.inputs.shape == (60000, 28, 28)
        assert ds.num_classes == 10
        assert 0.0 <= ds.inputs.min() and ds.inputs.max() <= 1.0
        # first record, cross-checked against the raw label byte stream
        raw = gzip.decompress((MNIST_DIR / "train-labels-idx1-ubyte.gz").read_bytes())
        assert ds.labels[0] == raw[8]

    def test_test_split(self):
        ds = load_idx(
            MNIST_DIR / "t10k-images-idx3-ubyte.gz",
            MNIST_DIR / "t10k-labels-idx1-ubyte.gz",
        )
        assert ds.inputs.shape == (10000, 28, 28)
        assert np.bincount(ds.labels, minlength=10).sum() == 10000


class TestDataset:
    def test_label_range_checked(self):
        with pytest.raises(DataError, match="range"):
            Dataset(np.zeros((2, 3)), np.array([0, 3]), num_classes=3)

    def test_pairing_checked(self):
        with pytest.raises(DataError):
            Dataset(np.zeros((2, 3)), np.array([0, 1, 0]), num_classes=2)

    def test_subset_and_reshape(self):
        ds = Dataset(np.arange(24.0).reshape(4, 6), np.array([0, 1, 2, 1]), 3)
        sub = ds.subset([2, 0])
        assert sub.labels.tolist() == [2, 0]
        assert np.array_equal(sub.inputs[0], ds.inputs[2])
        shaped = ds.reshape((2, 3))
        assert shaped.sample_shape == (2, 3)
        assert np.array_equal(shaped.inputs.reshape(4, 6), ds.inputs)


class TestSynthSphere:
    def test_deterministic(self):
        a = synth_sphere(100, 3, 4, 0.1, seed=7)
        b = synth_sphere(100, 3, 4, 0.1, seed=7)
        assert np.array_equal(a.inputs, b.inputs)
        assert np.array_equal(a.labels, b.labels)
        c = synth_sphere(100, 3, 4, 0.1, seed=8)
        assert not np.array_equal(a.labels, c.labels)

    def test_unit_norms(self):
        ds = synth_sphere(500, 5, 3, 0.0, seed=1)
        norms = np.linalg.norm(ds.inputs, axis=1)
        assert np.max(np.abs(norms - 1.0)) < 1e-12

    def test_plane_two_classes_separable(self):
        ds = synth_sphere(400, 2, 2, 0.0, seed=3)
        # sector boundary is the horizontal axis: label equals [x_2 >= 0]
        expected = (ds.inputs[:, 1] >= 0).astype(int)
        assert np.array_equal(ds.labels, expected)

    def test_class_balance(self):
        n, k = 2000, 4
        ds = synth_sphere(n, 3, k, 0.0, seed=11)
        counts = np.bincount(ds.labels, minlength=k)
        assert np.all(np.abs(counts - n / k) <= 2 * np.sqrt(n))

    def test_noise_relabels(self):
        clean = synth_sphere(1000, 2, 2, 0.0, seed=5)
        noisy = synth_sphere(1000, 2, 2, 1.0, seed=5)
        assert np.array_equal(clean.inputs, noisy.inputs)
        frac = np.mean(clean.labels != noisy.labels)
        assert 0.3 < frac < 0.7  # uniform resample keeps the old label half the time

    def test_bad_args(self):
        with pytest.raises(DataError):
            synth_sphere(10, 1, 2, 0.0, seed=0)
        with pytest.raises(DataError):
            synth_sphere(10, 2, 2, 1.5, seed=0)
