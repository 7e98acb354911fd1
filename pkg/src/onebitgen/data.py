"""Signal sources: synthetic sparse vectors and IDX image files."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DegenerateInputError, InvalidArgumentError, ParseError, RngStream

__all__ = [
    "SparseSpec",
    "ImageDataset",
    "sample_sparse",
    "sample_sparse_batch",
    "read_idx",
    "read_idx_labels",
    "normalize_unit",
    "save_signals",
    "load_signals",
]

VALUE_DISTS = ("uniform_01", "uniform_half_one")
IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


@dataclass(frozen=True)
class SparseSpec:
    n: int
    k: int
    value_dist: str = "uniform_half_one"
    normalize: bool = False

    def __post_init__(self):
        if not 1 <= self.k <= self.n:
            raise InvalidArgumentError(f"sparsity k={self.k} must satisfy 1 <= k <= n={self.n}")
        if self.value_dist not in VALUE_DISTS:
            raise InvalidArgumentError(f"unknown value distribution {self.value_dist!r}")


@dataclass(frozen=True)
class ImageDataset:
    count: int
    height: int
    width: int
    pixels: np.ndarray

    @property
    def images(self) -> np.ndarray:
        """``(count, height * width)`` view, one flattened image per row."""
        return self.pixels.reshape(self.count, self.height * self.width)


def sample_sparse(spec: SparseSpec, stream: RngStream) -> np.ndarray:
    gen = stream.generator
    support = gen.choice(spec.n, size=spec.k, replace=False)
    low = 0.5 if spec.value_dist == "uniform_half_one" else 0.0
    values = gen.uniform(low, 1.0, size=spec.k)
    if spec.value_dist == "uniform_01":
        # uniform(0, 1) can return exactly 0; keep the support exact
        values = np.where(values == 0.0, np.nextafter(0.0, 1.0), values)
    x = np.zeros(spec.n)
    x[support] = values
    if spec.normalize:
        x = normalize_unit(x)
    return x


def sample_sparse_batch(spec: SparseSpec, count: int, stream: RngStream) -> np.ndarray:
    return np.stack([sample_sparse(spec, stream) for _ in range(count)])


def normalize_unit(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x)
    if norm == 0:
        raise DegenerateInputError("cannot normalize the zero vector")
    return x / norm


def _read_header(buf: bytes, path, expected_magic: int):
    if len(buf) < 4:
        raise ParseError(f"{path}: truncated at byte offset {len(buf)} while reading magic number")
    (magic,) = struct.unpack_from(">I", buf, 0)
    if magic != expected_magic:
        raise ParseError(f"{path}: bad magic 0x{magic:08x} at byte offset 0 (expected 0x{expected_magic:08x})")
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(buf) < header_end:
        raise ParseError(f"{path}: truncated at byte offset {len(buf)} while reading dimension sizes")
    dims = struct.unpack_from(f">{ndim}I", buf, 4)
    size = int(np.prod(dims, dtype=np.int64))
    payload = len(buf) - header_end
    if payload != size:
        raise ParseError(
            f"{path}: payload at byte offset {header_end} has {payload} bytes but dimensions {dims} need {size}"
        )
    return dims, np.frombuffer(buf, dtype=np.uint8, offset=header_end)


def read_idx(path) -> ImageDataset:
    """Read an IDX3 unsigned-byte image file; pixels are scaled to [0, 1]."""
    buf = Path(path).read_bytes()
    (count, height, width), raw = _read_header(buf, path, IDX_IMAGES)
    pixels = raw.astype(np.float64) / 255.0
    return ImageDataset(count, height, width, pixels)


def read_idx_labels(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    _, raw = _read_header(buf, path, IDX_LABELS)
    return raw.astype(np.int64)


def save_signals(X, path, provenance: dict | None = None) -> None:
    """Write a set of signals (one per row) as a JSON document."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    doc = {
        "format_version": 1,
        "kind": "signals",
        "count": int(X.shape[0]),
        "n": int(X.shape[1]),
        "provenance": provenance or {},
        "rows": [[float(format(v, ".17g")) for v in row] for row in X],
    }
    Path(path).write_text(json.dumps(doc))


def load_signals(path) -> np.ndarray:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict) or doc.get("kind") != "signals":
        raise ParseError(f"{path}: not a signal file (kind must be 'signals')")
    try:
        X = np.array(doc["rows"], dtype=np.float64)
        count, n = int(doc["count"]), int(doc["n"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: missing or malformed field {exc}") from None
    if X.shape != (count, n):
        raise ParseError(f"{path}: rows have shape {X.shape}, header says ({count}, {n})")
    return X
