"""Dataset container, IDX ingestion, and a synthetic sphere-sector generator."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .rng import RngStream

__all__ = ["DataError", "Dataset", "load_idx", "synth_sphere"]

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


class DataError(Exception):
    """Malformed or inconsistent input data (maps to CLI exit code 2)."""


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = ""

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1 or self.inputs.shape[0] != self.labels.shape[0]:
            raise DataError("inputs and labels must pair up one to one")
        self.num_classes = int(self.num_classes)
        if self.num_classes < 2:
            raise DataError("need at least two classes")
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= self.num_classes
        ):
            raise DataError("labels out of range")

    def __len__(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def sample_shape(self) -> tuple:
        return self.inputs.shape[1:]

    def subset(self, idx, split: str | None = None) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.inputs[idx],
            self.labels[idx],
            self.num_classes,
            self.split if split is None else split,
        )

    def reshape(self, sample_shape) -> "Dataset":
        shaped = self.inputs.reshape(self.inputs.shape[0], *sample_shape)
        return Dataset(shaped, self.labels, self.num_classes, self.split)


def _read_file(path) -> bytes:
    with open(path, "rb") as f:
        head = f.read(2)
        rest = f.read()
    raw = head + rest
    if head == b"\x1f\x8b":
        try:
            return gzip.decompress(raw)
        except OSError as e:
            raise DataError(f"{path}: bad gzip stream ({e})") from e
    return raw


def _parse_header(buf: bytes, path, magic: int, ndim: int):
    need = 4 * (1 + ndim)
    if len(buf) < need:
        raise DataError(f"{path}: truncated header")
    words = struct.unpack(f">{1 + ndim}I", buf[:need])
    if words[0] != magic:
        raise DataError(f"{path}: bad magic 0x{words[0]:08x}")
    return words[1:], buf[need:]


def load_idx(images_path, labels_path, split: str = "") -> Dataset:
    """Parse an IDX image/label pair (plain or gzipped) into a Dataset.

    Pixels are scaled from bytes to [0, 1]. The class count is taken from the
    largest label present.
    """
    ibuf = _read_file(images_path)
    (n, rows, cols), ibody = _parse_header(ibuf, images_path, _IDX_IMAGES_MAGIC, 3)
    if len(ibody) != n * rows * cols:
        raise DataError(f"{images_path}: payload size does not match header")
    images = np.frombuffer(ibody, dtype=np.uint8).reshape(n, rows, cols)

    lbuf = _read_file(labels_path)
    (ln,), lbody = _parse_header(lbuf, labels_path, _IDX_LABELS_MAGIC, 1)
    if len(lbody) != ln:
        raise DataError(f"{labels_path}: payload size does not match header")
    if ln != n:
        raise DataError(f"label count {ln} != image count {n}")
    labels = np.frombuffer(lbody, dtype=np.uint8).astype(np.int64)

    return Dataset(
        images.astype(np.float64) / 255.0,
        labels,
        num_classes=int(labels.max()) + 1 if ln else 2,
        split=split,
    )


def synth_sphere(n: int, dim: int, num_classes: int, noise: float, seed: int) -> Dataset:
    """Uniform points on the unit sphere labeled by equal angular sectors.

    The sector is read off the angle of the first two coordinates, so K=2 in
    the plane is linearly separable by construction. `noise` is the probability
    of replacing a label with a uniformly random class.
    """
    if n < 1 or dim < 2 or num_classes < 2:
        raise DataError("need n >= 1, dim >= 2, classes >= 2")
    if not 0.0 <= noise <= 1.0:
        raise DataError("noise must lie in [0, 1]")
    root = RngStream(seed)
    pts = root.derive(1).normal((n, dim))
    norms = np.sqrt(np.sum(pts * pts, axis=1))
    # zero norm has probability zero; resample defensively all the same
    bad = norms == 0.0
    if np.any(bad):
        pts[bad] = root.derive(2).normal((int(bad.sum()), dim))
        norms = np.sqrt(np.sum(pts * pts, axis=1))
    pts /= norms[:, None]

    theta = np.arctan2(pts[:, 1], pts[:, 0])
    frac = (theta + np.pi) / (2.0 * np.pi)
    labels = np.minimum((frac * num_classes).astype(np.int64), num_classes - 1)

    if noise > 0.0:
        flip = root.derive(3).uniform(n) < noise
        repl = root.derive(4).integers(n, num_classes)
        labels = np.where(flip, repl, labels)

    return Dataset(pts, labels, num_classes, split="synth")
