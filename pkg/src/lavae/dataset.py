"""MNIST IDX ingestion, four-way augmented dataset construction and batching.

IDX is the big-endian binary container of the MNIST files: images carry
magic 0x00000803 and (count, rows, cols) dimensions, labels carry magic
0x00000801 and (count,); payloads are unsigned bytes.  Gzipped files are
accepted transparently by the path-based loaders.

The augmented dataset holds four aligned image stacks: originals, each of
the two augmentations applied separately, and their ordered composition
(first-listed augmentation applied first).
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .augmentations import AugmentationPair, apply_spec_batch

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class BadMagic(ValueError):
    """IDX stream does not start with the expected magic number."""


class Truncated(ValueError):
    """IDX payload is shorter than the header declares."""


class ZeroBatchSize(ValueError):
    pass


@dataclass
class ImageSet:
    """A stack of grayscale images with intensities in [0, 1]."""

    pixels: np.ndarray  # (count, height, width) float32

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 3:
            raise ValueError("pixels must be (count, height, width)")

    @property
    def count(self):
        return self.pixels.shape[0]

    @property
    def height(self):
        return self.pixels.shape[1]

    @property
    def width(self):
        return self.pixels.shape[2]

    def subset(self, n_or_indices):
        if np.isscalar(n_or_indices):
            return ImageSet(self.pixels[:int(n_or_indices)])
        return ImageSet(self.pixels[np.asarray(n_or_indices)])


def parse_idx_images(data: bytes) -> ImageSet:
    """Decode an IDX image stream; pixel bytes are scaled to [0,1] by /255."""
    if len(data) < 4:
        raise Truncated("missing magic")
    magic, = struct.unpack_from(">i", data, 0)
    if magic != IMAGE_MAGIC:
        raise BadMagic(f"expected image magic {IMAGE_MAGIC}, got {magic}")
    if len(data) < 16:
        raise Truncated("missing image dimensions")
    count, rows, cols = struct.unpack_from(">iii", data, 4)
    need = 16 + count * rows * cols
    if len(data) < need:
        raise Truncated(f"payload needs {need} bytes, have {len(data)}")
    raw = np.frombuffer(data, dtype=np.uint8, count=count * rows * cols, offset=16)
    pixels = raw.reshape(count, rows, cols).astype(np.float32) / 255.0
    return ImageSet(pixels)


def parse_idx_labels(data: bytes) -> np.ndarray:
    """Decode an IDX label stream into a uint8 vector."""
    if len(data) < 4:
        raise Truncated("missing magic")
    magic, = struct.unpack_from(">i", data, 0)
    if magic != LABEL_MAGIC:
        raise BadMagic(f"expected label magic {LABEL_MAGIC}, got {magic}")
    if len(data) < 8:
        raise Truncated("missing label count")
    count, = struct.unpack_from(">i", data, 4)
    if len(data) < 8 + count:
        raise Truncated(f"payload needs {8 + count} bytes, have {len(data)}")
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=8).copy()


def serialize_idx_images(images: ImageSet) -> bytes:
    """Inverse of `parse_idx_images`; byte-exact on parse/serialize roundtrips."""
    header = struct.pack(">iiii", IMAGE_MAGIC, images.count, images.height, images.width)
    raw = np.rint(images.pixels * 255.0).astype(np.uint8)
    return header + raw.tobytes()


def serialize_idx_labels(labels) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">ii", LABEL_MAGIC, labels.size) + labels.tobytes()


def _read_maybe_gz(path) -> bytes:
    with open(path, "rb") as f:
        data = f.read()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def load_idx_images(path) -> ImageSet:
    return parse_idx_images(_read_maybe_gz(path))


def load_idx_labels(path) -> np.ndarray:
    return parse_idx_labels(_read_maybe_gz(path))


@dataclass
class AugmentedDataset:
    """Aligned originals / aug1 / aug2 / composition stacks for one pair."""

    originals: ImageSet
    aug1: ImageSet
    aug2: ImageSet
    composed: ImageSet
    pair: AugmentationPair

    CATEGORIES = ("orig", "aug1", "aug2", "comp")

    @property
    def count(self):
        return self.originals.count

    def category(self, name) -> ImageSet:
        return {"orig": self.originals, "aug1": self.aug1,
                "aug2": self.aug2, "comp": self.composed}[name]

    def pooled(self) -> np.ndarray:
        """All four categories stacked: shape (4 * count, H, W)."""
        return np.concatenate([self.originals.pixels, self.aug1.pixels,
                               self.aug2.pixels, self.composed.pixels], axis=0)

    def subset(self, n):
        return AugmentedDataset(self.originals.subset(n), self.aug1.subset(n),
                                self.aug2.subset(n), self.composed.subset(n), self.pair)


def build_augmented_dataset(originals: ImageSet, pair: AugmentationPair) -> AugmentedDataset:
    """Apply the pair deterministically: aug1 = f1(x), aug2 = f2(x),
    composed = f2(f1(x)) with the first-listed augmentation applied first."""
    a1 = apply_spec_batch(pair.first, originals.pixels)
    a2 = apply_spec_batch(pair.second, originals.pixels)
    comp = apply_spec_batch(pair.second, a1)
    return AugmentedDataset(originals, ImageSet(a1), ImageSet(a2),
                            ImageSet(comp), pair)


@dataclass(frozen=True)
class BatchPlan:
    """Deterministic shuffled batching: the epoch permutation is a pure
    function of (seed, epoch)."""

    batch_size: int = 64
    seed: int = 0

    def permutation(self, n: int, epoch: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed & (2**63 - 1), epoch])
        return rng.permutation(n)


def batch_iterator(n: int, plan: BatchPlan, epoch: int):
    """Yield index batches; concatenated they are a permutation of range(n)."""
    if plan.batch_size <= 0:
        raise ZeroBatchSize(f"batch_size must be positive, got {plan.batch_size}")
    perm = plan.permutation(n, epoch)
    for i in range(0, n, plan.batch_size):
        yield perm[i:i + plan.batch_size]
