"""Reader and writer for the IDX format used by the MNIST distribution.

Layout (big-endian): two zero bytes, a type byte (0x08 = unsigned byte), a
dimension count byte, one u32 per dimension, then the payload. Image files
(magic 0x00000803) decode to ``count x rows x cols`` floats in [0, 1] via
v / 255; label files (magic 0x00000801) decode to an integer vector.
Files ending in ``.gz`` are transparently decompressed.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
MAX_ELEMENTS = 1 << 31


class IdxError(ValueError):
    """Malformed IDX data; ``reason`` is one of bad-magic, truncated, overflow."""

    def __init__(self, reason: str, message: str):
        super().__init__(f"{reason}: {message}")
        self.reason = reason


def _read_bytes(path) -> bytes:
    path = Path(path)
    data = path.read_bytes()
    return gzip.decompress(data) if path.suffix == ".gz" else data


def parse_idx(data: bytes, expect_magic: int | None = None) -> np.ndarray:
    """Decode raw IDX bytes to a uint8 array with the stored shape."""
    if len(data) < 4:
        raise IdxError("truncated", "missing header")
    (magic,) = struct.unpack(">I", data[:4])
    if magic >> 16 != 0 or (magic >> 8) & 0xFF != 0x08:
        raise IdxError("bad-magic", f"0x{magic:08x} is not an unsigned-byte IDX header")
    if expect_magic is not None and magic != expect_magic:
        raise IdxError("bad-magic", f"expected 0x{expect_magic:08x}, found 0x{magic:08x}")
    ndim = magic & 0xFF
    if len(data) < 4 + 4 * ndim:
        raise IdxError("truncated", "header shorter than its dimension list")
    dims = struct.unpack(f">{ndim}I", data[4:4 + 4 * ndim])
    count = 1
    for d in dims:
        count *= d
        if count > MAX_ELEMENTS:
            raise IdxError("overflow", f"dimensions {dims} exceed {MAX_ELEMENTS} elements")
    start = 4 + 4 * ndim
    if len(data) - start < count:
        raise IdxError("truncated", f"payload has {len(data) - start} of {count} bytes")
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=start).reshape(dims)


def read_idx_images(path) -> np.ndarray:
    raw = parse_idx(_read_bytes(path), IMAGE_MAGIC)
    return raw.astype(np.float64) / 255.0


def read_idx_labels(path) -> np.ndarray:
    return parse_idx(_read_bytes(path), LABEL_MAGIC).astype(np.int64)


def read_idx(path) -> np.ndarray:
    """Images (scaled to [0, 1]) or labels, dispatched on the magic number."""
    data = _read_bytes(path)
    arr = parse_idx(data)
    if struct.unpack(">I", data[:4])[0] == IMAGE_MAGIC:
        return arr.astype(np.float64) / 255.0
    return arr.astype(np.int64)


def encode_idx(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise ValueError("only unsigned-byte IDX payloads are supported")
    header = struct.pack(">I", 0x0800 | arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    return header + arr.tobytes()


def write_idx_images(path, images) -> None:
    """Write images in [0, 1] (rounded to the nearest byte value)."""
    images = np.asarray(images, dtype=np.float64)
    _write(path, encode_idx(np.rint(np.clip(images, 0, 1) * 255).astype(np.uint8)))


def write_idx_labels(path, labels) -> None:
    _write(path, encode_idx(np.asarray(labels).astype(np.uint8)))


def _write(path, data: bytes) -> None:
    path = Path(path)
    path.write_bytes(gzip.compress(data, mtime=0) if path.suffix == ".gz" else data)


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def find_mnist(directory, split: str):
    """Paths of the image and label files of a split, accepting the usual name variants."""
    directory = Path(directory)
    found = []
    for stem in MNIST_FILES[split]:
        candidates = [stem, stem + ".gz", stem.replace("-idx", ".idx"),
                      stem.replace("-idx", ".idx") + ".gz"]
        path = next((directory / c for c in candidates if (directory / c).exists()), None)
        if path is None:
            raise FileNotFoundError(f"no {stem} file in {directory}")
        found.append(path)
    return tuple(found)


def load_mnist(directory, split: str):
    """``(images n x 784, labels)`` of an MNIST split."""
    img_path, lab_path = find_mnist(directory, split)
    images = read_idx_images(img_path)
    labels = read_idx_labels(lab_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxError("truncated", "image and label counts differ")
    return images.reshape(images.shape[0], -1), labels
