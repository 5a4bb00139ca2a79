"""Image data for the classifiers: synthetic Gaussian blobs and IDX files."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..tensor import Rng

_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


class IdxFormatError(ValueError):
    pass


def read_idx(path: str | Path) -> np.ndarray:
    """Read an IDX file (big-endian header: 0, 0, type code, ndim, then dims)."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise IdxFormatError(f"{path}: bad IDX magic")
    code, ndim = raw[2], raw[3]
    if code not in _IDX_TYPES:
        raise IdxFormatError(f"{path}: unknown IDX type code 0x{code:02x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    dtype = _IDX_TYPES[code]
    count = int(np.prod(dims)) if dims else 1
    if len(raw) != header + count * dtype.itemsize:
        raise IdxFormatError(f"{path}: expected {count} items, file size disagrees")
    return np.frombuffer(raw, dtype=dtype, count=count, offset=header).reshape(dims).astype(dtype.newbyteorder("="))


def write_idx(path: str | Path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    code = {v.newbyteorder("="): k for k, v in _IDX_TYPES.items()}.get(arr.dtype)
    if code is None:
        raise IdxFormatError(f"dtype {arr.dtype} has no IDX code")
    header = bytes([0, 0, code, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.astype(_IDX_TYPES[code]).tobytes())


def load_idx_dataset(images: str | Path, labels: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """IDX images scaled to [0, 1] and flattened, with int64 labels."""
    x = read_idx(images).astype(np.float32)
    y = read_idx(labels).astype(np.int64)
    if x.shape[0] != y.shape[0]:
        raise IdxFormatError("image and label counts differ")
    return (x.reshape(x.shape[0], -1) / np.float32(255.0)).astype(np.float32), y


def _class_prototypes(n_classes: int, side: int) -> list[tuple[float, float, float]]:
    """Blob centre and width per class, spread around the image."""
    protos = []
    for c in range(n_classes):
        angle = 2 * np.pi * c / n_classes
        radius = 0.28 * side if c % 2 == 0 else 0.18 * side
        cx = (side - 1) / 2 + radius * np.cos(angle)
        cy = (side - 1) / 2 + radius * np.sin(angle)
        width = 0.9 + 0.35 * (c % 3)
        protos.append((cx, cy, width))
    return protos


def make_blobs(n: int, rng: Rng, n_classes: int = 10, side: int = 8, noise: float = 0.08,
               jitter: float = 0.7) -> tuple[np.ndarray, np.ndarray]:
    """``n`` images (flattened side*side, values in [0, 1]) with balanced labels.

    Each class is a Gaussian blob at a class-specific place and width;
    samples jitter the centre, width and brightness and add pixel noise.
    """
    labels = np.arange(n) % n_classes
    labels = labels[rng.permutation(n)]
    protos = _class_prototypes(n_classes, side)
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    shift = rng.normal((n, 2)) * jitter
    widths = rng.uniform(0.8, 1.25, n)
    amps = rng.uniform(0.6, 1.0, n)
    pix = rng.normal((n, side, side)) * noise
    images = np.empty((n, side, side))
    for i, c in enumerate(labels):
        cx, cy, w = protos[c]
        w = w * widths[i]
        d2 = (xx - cx - shift[i, 0]) ** 2 + (yy - cy - shift[i, 1]) ** 2
        images[i] = amps[i] * np.exp(-d2 / (2 * w * w))
    images = np.clip(images + pix, 0.0, 1.0)
    return images.reshape(n, -1).astype(np.float32), labels.astype(np.int64)


def blob_splits(seed: int = 0, n_train: int = 3000, n_test: int = 1000):
    """Fixed train/test draws of :func:`make_blobs` for a dataset seed."""
    root = Rng(seed)
    return make_blobs(n_train, root.spawn(0)), make_blobs(n_test, root.spawn(1))
