"""Datasets: a seeded synthetic digit generator, the ADVD container and an IDX importer."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .formats import FormatError, read_exact, require_magic

DATASET_MAGIC = b"ADVD"
DATASET_VERSION = 1


class EmptySubsetError(ValueError):
    """Raised when a filtering step leaves no examples."""


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64
    provenance: str = "synthetic"
    class_count: int = 10
    indices: np.ndarray = field(default=None)  # position of each example in the parent corpus

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or len(self.images) != len(self.labels):
            raise ValueError(f"images {self.images.shape} / labels {self.labels.shape} mismatch")
        if self.indices is None:
            self.indices = np.arange(len(self.labels))
        if len(self.labels) and (self.images.min() < 0 or self.images.max() > 1):
            raise ValueError("pixels must lie in [0, 1]")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")

    def __len__(self):
        return len(self.labels)

    @property
    def input_shape(self):
        return self.images.shape[1:]

    def subset(self, keep):
        keep = np.asarray(keep)
        return Dataset(self.images[keep], self.labels[keep], self.provenance, self.class_count, self.indices[keep])

    def head(self, n):
        return self.subset(np.arange(min(n, len(self))))


# seven-segment layout on a unit box: (x0, y0, x1, y1)
_SEGMENTS = {
    "a": (0.0, 0.0, 1.0, 0.0),
    "b": (1.0, 0.0, 1.0, 0.5),
    "c": (1.0, 0.5, 1.0, 1.0),
    "d": (0.0, 1.0, 1.0, 1.0),
    "e": (0.0, 0.5, 0.0, 1.0),
    "f": (0.0, 0.0, 0.0, 0.5),
    "g": (0.0, 0.5, 1.0, 0.5),
}
_DIGITS = ["abcdef", "bc", "abged", "abgcd", "fgbc", "afgcd", "afgedc", "abc", "abcdefg", "abcdfg"]


def _render_digit(digit, rng, size=28):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    width = rng.uniform(9.0, 13.0)
    height = rng.uniform(15.0, 19.0)
    cx = size / 2 + rng.uniform(-3.0, 3.0)
    cy = size / 2 + rng.uniform(-2.5, 2.5)
    slant = rng.uniform(-0.2, 0.2)
    thick = rng.uniform(1.2, 2.0)
    img = np.zeros((size, size))
    for seg in _DIGITS[digit]:
        x0, y0, x1, y1 = _SEGMENTS[seg]
        # unit box -> image coordinates with a shear for slant
        p0 = np.array([cx + (x0 - 0.5) * width - slant * (y0 - 0.5) * height, cy + (y0 - 0.5) * height])
        p1 = np.array([cx + (x1 - 0.5) * width - slant * (y1 - 0.5) * height, cy + (y1 - 0.5) * height])
        d = p1 - p0
        t = ((xx - p0[0]) * d[0] + (yy - p0[1]) * d[1]) / (d @ d)
        t = np.clip(t, 0.0, 1.0)
        dist = np.hypot(xx - (p0[0] + t * d[0]), yy - (p0[1] + t * d[1]))
        img = np.maximum(img, np.clip(thick + 0.5 - dist, 0.0, 1.0))
    # lifted background: flat plateaus of exact zeros would put ReLU and
    # max-pool units on their kinks
    img = 0.1 + 0.8 * rng.uniform(0.7, 1.0) * img
    img += rng.normal(0.0, 0.04, img.shape)
    return np.clip(img, 0.0, 1.0)


def make_synthetic(count, seed=0, size=28):
    """Balanced 10-class set of noisy, jittered seven-segment digits (1 x size x size)."""
    rng = np.random.default_rng(seed)
    labels = np.arange(count) % 10
    rng.shuffle(labels)
    images = np.stack([_render_digit(int(lab), rng, size) for lab in labels])[:, None]
    return Dataset(images, labels, "synthetic", 10)


def synthetic_splits(train_count=6000, test_count=1000, seed=0):
    """Disjoint train/test corpora drawn from independent streams of one seed."""
    train_seed, test_seed = np.random.SeedSequence(seed).spawn(2)
    return make_synthetic(train_count, train_seed), make_synthetic(test_count, test_seed)


def save_dataset(ds, path):
    n, c, h, w = ds.images.shape
    body = bytearray()
    body += DATASET_MAGIC
    body += struct.pack("<HIIII", DATASET_VERSION, n, c, h, w)
    body += ds.images.astype("<f4").tobytes()
    body += ds.labels.astype("<u2").tobytes()
    Path(path).write_bytes(bytes(body))


def load_dataset(path, provenance="imported"):
    buf = memoryview(Path(path).read_bytes())
    require_magic(buf, DATASET_MAGIC, DATASET_VERSION)
    pos = 6
    (n, c, h, w), pos = struct.unpack("<IIII", read_exact(buf, pos, 16)), pos + 16
    count = n * c * h * w
    pixels = np.frombuffer(read_exact(buf, pos, 4 * count), dtype="<f4").astype(np.float64)
    pos += 4 * count
    labels = np.frombuffer(read_exact(buf, pos, 2 * n), dtype="<u2").astype(np.int64)
    pos += 2 * n
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes in dataset file")
    classes = max(10, int(labels.max()) + 1) if n else 10
    return Dataset(pixels.reshape(n, c, h, w), labels, provenance, classes)


def _open_idx(path):
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".gz":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw):
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0 or raw[2] != 0x08:
        raise FormatError("not an unsigned-byte IDX file")
    rank = raw[3]
    dims = struct.unpack(f">{rank}I", raw[4 : 4 + 4 * rank])
    data = np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * rank)
    if data.size != int(np.prod(dims)):
        raise FormatError("IDX payload does not match its header")
    return data.reshape(dims)


def import_idx(images_path, labels_path, limit=None):
    """Read the classic IDX handwritten-digit pair (optionally gzipped)."""
    images = _parse_idx(_open_idx(images_path))
    labels = _parse_idx(_open_idx(labels_path))
    if images.ndim != 3 or labels.ndim != 1 or len(images) != len(labels):
        raise FormatError("IDX image/label files disagree")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    return Dataset(images[:, None].astype(np.float64) / 255.0, labels.astype(np.int64), "imported", 10)
