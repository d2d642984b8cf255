"""Dataset ingestion and the synthetic desk-scale corpus.

Binary readers are bit-exact: IDX streams (big-endian, magic 2051 for
image tensors and 2049 for label vectors) and CIFAR-10 binary batches
(3073-byte records, 1 label byte + 3072 channel-planar pixels).
Pixels are mapped to [-1, 1] via v = px/127.5 - 1, the inverse of the
uint8 quantization used by ``serialize_idx``, so parse/serialize round
trips are exact on parsed data.  28x28 images are bilinearly resized
to 32x32 at parse time; that step is lossy by nature and sits outside
the round-trip guarantee.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import (BadMagicError, ConfigError, DataError,
                     DimensionOverflowError, TruncatedPayloadError)

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049
CIFAR_RECORD_BYTES = 3073
# Any declared IDX dimension above this is treated as corruption.
MAX_IDX_DIM = 1 << 28

DATA_ROOT_ENV = "SEMCOM_DATA_ROOT"

MNIST_COUNTS = {"train": 60000, "test": 10000}
CIFAR_COUNTS = {"train": 50000, "test": 10000}


@dataclass(frozen=True)
class Dataset:
    """An immutable stack of images in [-1, 1], shape (N, C, H, W)."""

    images: np.ndarray
    source: str
    split: str

    def __post_init__(self):
        img = np.asarray(self.images, dtype=float)
        if img.ndim != 4:
            raise DataError(f"images must be (N, C, H, W), got {img.shape}")
        if img.size and (img.min() < -1.0 or img.max() > 1.0):
            raise DataError("image values outside [-1, 1]")
        object.__setattr__(self, "images", img)
        img.setflags(write=False)

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self):
        return self.images.shape[1:]

    def subset(self, n: int) -> "Dataset":
        if not (1 <= n <= len(self)):
            raise ConfigError(f"subset size {n} outside 1..{len(self)}")
        return Dataset(self.images[:n], self.source, self.split)


def _scale_to_unit(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(float) / 127.5 - 1.0


def _unit_to_pixels(values: np.ndarray) -> np.ndarray:
    px = np.round((np.asarray(values, dtype=float) + 1.0) * 127.5)
    return np.clip(px, 0, 255).astype(np.uint8)


def resize_bilinear(images: np.ndarray, size: int) -> np.ndarray:
    """Resize (N, C, H, W) float images to (N, C, size, size)."""
    n, c, h, w = images.shape
    if (h, w) == (size, size):
        return images
    out = ndimage.zoom(images, (1, 1, size / h, size / w), order=1)
    if out.shape != (n, c, size, size):
        raise DataError(f"resize produced {out.shape}, expected "
                        f"({n}, {c}, {size}, {size})")
    return out


def parse_idx(data: bytes, source: str = "mnist", split: str = "train"):
    """Parse one IDX stream.

    Image payloads (magic 2051) come back as a Dataset, with 28x28
    sources resized to 32x32.  Label payloads (magic 2049) come back
    as a 1-D int array; the pipeline ignores classes, so labels are
    only parsed to be skipped cleanly.
    """
    if len(data) < 4:
        raise TruncatedPayloadError("stream shorter than the magic field")
    (magic,) = struct.unpack(">i", data[:4])
    if magic == IDX_IMAGE_MAGIC:
        ndim = 3
    elif magic == IDX_LABEL_MAGIC:
        ndim = 1
    else:
        raise BadMagicError(f"magic {magic} is neither {IDX_IMAGE_MAGIC} "
                            f"(images) nor {IDX_LABEL_MAGIC} (labels)")
    header_len = 4 + 4 * ndim
    if len(data) < header_len:
        raise TruncatedPayloadError("stream ends inside the dimension header")
    dims = struct.unpack(f">{ndim}i", data[4:header_len])
    count = 1
    for d in dims:
        if d < 0 or d > MAX_IDX_DIM:
            raise DimensionOverflowError(f"declared dimension {d} outside "
                                         f"0..{MAX_IDX_DIM}")
        count *= d  # python ints, no silent overflow
    if count > MAX_IDX_DIM:
        raise DimensionOverflowError(f"declared payload of {count} bytes "
                                     f"exceeds the {MAX_IDX_DIM} cap")
    payload = data[header_len:]
    if len(payload) < count:
        raise TruncatedPayloadError(f"payload holds {len(payload)} bytes, "
                                    f"header promises {count}")
    if len(payload) > count:
        raise DataError(f"{len(payload) - count} trailing bytes after the "
                        "declared payload")
    raw = np.frombuffer(payload, dtype=np.uint8)
    if magic == IDX_LABEL_MAGIC:
        return raw.astype(np.int64)
    n, rows, cols = dims
    images = _scale_to_unit(raw.reshape(n, 1, rows, cols))
    images = resize_bilinear(images, 32)
    return Dataset(images, source=source, split=split)


def serialize_idx(dataset: Dataset) -> bytes:
    """Write a single-channel dataset back to an IDX image stream."""
    n, c, h, w = dataset.images.shape
    if c != 1:
        raise DataError(f"IDX image streams are single-channel, got C={c}")
    header = struct.pack(">iiii", IDX_IMAGE_MAGIC, n, h, w)
    return header + _unit_to_pixels(dataset.images).tobytes()


def parse_cifar_bin(data: bytes, split: str = "train") -> Dataset:
    """Parse CIFAR-10 binary batch records; class labels are skipped."""
    if len(data) == 0 or len(data) % CIFAR_RECORD_BYTES != 0:
        raise DataError(f"stream length {len(data)} is not a positive "
                        f"multiple of {CIFAR_RECORD_BYTES}")
    records = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    pixels = records[:, 1:].reshape(-1, 3, 32, 32)
    return Dataset(_scale_to_unit(pixels), source="cifar10", split=split)


def _read_maybe_gzip(path: Path) -> bytes:
    blob = path.read_bytes()
    if blob[:2] == b"\x1f\x8b":
        return gzip.decompress(blob)
    return blob


def resolve_data_root(root=None) -> Path:
    root = root or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise DataError(f"no dataset root given and ${DATA_ROOT_ENV} unset")
    path = Path(root)
    if not path.is_dir():
        raise DataError(f"dataset root {path} is not a directory")
    return path


def _find_file(root: Path, names) -> Path:
    for name in names:
        for candidate in (root / name, root / f"{name}.gz"):
            if candidate.is_file():
                return candidate
    raise DataError(f"none of {names} found under {root}")


def load_mnist(split: str = "train", root=None,
               strict_counts: bool = True) -> Dataset:
    root = resolve_data_root(root)
    names = {"train": ("train-images-idx3-ubyte", "train-images.idx3-ubyte"),
             "test": ("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte")}
    if split not in names:
        raise ConfigError(f"split {split!r} not in {sorted(names)}")
    ds = parse_idx(_read_maybe_gzip(_find_file(root, names[split])),
                   source="mnist", split=split)
    if strict_counts and len(ds) != MNIST_COUNTS[split]:
        raise DataError(f"mnist {split} split has {len(ds)} images, "
                        f"expected {MNIST_COUNTS[split]}")
    return ds


def load_cifar10(split: str = "train", root=None,
                 strict_counts: bool = True) -> Dataset:
    root = resolve_data_root(root)
    sub = root / "cifar-10-batches-bin"
    base = sub if sub.is_dir() else root
    if split == "train":
        names = [f"data_batch_{i}.bin" for i in range(1, 6)]
    elif split == "test":
        names = ["test_batch.bin"]
    else:
        raise ConfigError(f"split {split!r} not in ['train', 'test']")
    blobs = [_read_maybe_gzip(_find_file(base, (n,))) for n in names]
    parts = [parse_cifar_bin(b, split=split) for b in blobs]
    images = np.concatenate([p.images for p in parts])
    if strict_counts and images.shape[0] != CIFAR_COUNTS[split]:
        raise DataError(f"cifar10 {split} split has {images.shape[0]} "
                        f"images, expected {CIFAR_COUNTS[split]}")
    return Dataset(images, source="cifar10", split=split)


def synthetic_toy(n: int, rng: np.random.Generator,
                  split: str = "train") -> Dataset:
    """Procedural (1, 32, 32) corpus: one bright shape on a dark field.

    Per image: a fair coin picks rectangle vs disc; the fill intensity
    is uniform on [-0.25, 1]; rectangle corners are iid integer pixel
    coordinates (inclusive span); discs get an integer center and a
    radius uniform on {3..8}.  All draws come from ``rng`` in a fixed
    order, so a given seed always yields the same corpus.
    """
    if n < 1:
        raise ConfigError(f"need n >= 1, got {n}")
    side = 32
    rows, cols = np.mgrid[0:side, 0:side]
    images = np.full((n, 1, side, side), -1.0)
    for i in range(n):
        is_disc = bool(rng.integers(0, 2))
        intensity = rng.uniform(-0.25, 1.0)
        if is_disc:
            cy, cx = rng.integers(0, side, size=2)
            r = int(rng.integers(3, 9))
            mask = (rows - cy) ** 2 + (cols - cx) ** 2 <= r * r
        else:
            y0, y1 = sorted(rng.integers(0, side, size=2))
            x0, x1 = sorted(rng.integers(0, side, size=2))
            mask = np.zeros((side, side), dtype=bool)
            mask[y0:y1 + 1, x0:x1 + 1] = True
        images[i, 0][mask] = intensity
    return Dataset(images, source="synthetic", split=split)


def batch_iter(dataset: Dataset, batch_size: int,
               rng: np.random.Generator | None = None):
    """Yield (N, C, H, W) batches covering each sample exactly once.

    Shuffles with ``rng`` when given; the last batch may be short.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    n = len(dataset)
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield dataset.images[order[start:start + batch_size]]
