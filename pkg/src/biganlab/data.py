"""Dataset ingestion: MNIST IDX files, synthetic 2D mixtures and latent draws.

All sampling goes through :func:`make_rng`, which derives independent
streams from one master seed so that shuffling, latent sampling and weight
initialization can each be replayed on their own.
"""
from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# stream offsets under one master seed
STREAM_INIT = 0
STREAM_DATA = 1
STREAM_LATENT = 2

_IDX_UBYTE = 0x08


class IDXFormatError(ValueError):
    """Bad IDX magic bytes."""


class IDXLengthError(ValueError):
    """IDX payload length disagrees with the declared dimensions."""


class IDXUnsupportedError(ValueError):
    """IDX element type other than unsigned byte."""


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """PCG64 generator for ``stream`` under master ``seed``."""
    return np.random.Generator(np.random.PCG64([stream, seed]))


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise ValueError("features must be a non-empty 2D array")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.features.shape[0],):
                raise ValueError("labels must have one entry per row")

    def __len__(self):
        return self.features.shape[0]

    def subset(self, n: int) -> "Dataset":
        labels = None if self.labels is None else self.labels[:n]
        return Dataset(self.features[:n], labels, f"{self.name}[:{n}]")

    def to_csv(self, path) -> None:
        d = self.features.shape[1]
        header = [f"f{i}" for i in range(d)]
        if self.labels is not None:
            header.append("label")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i, row in enumerate(self.features):
                out = [repr(float(v)) for v in row]
                if self.labels is not None:
                    out.append(int(self.labels[i]))
                writer.writerow(out)

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [r for r in reader if r]
        has_label = header[-1] == "label"
        table = np.array(rows, dtype=np.float64)
        if has_label:
            return cls(table[:, :-1], table[:, -1].astype(np.int64), Path(path).stem)
        return cls(table, None, Path(path).stem)


@dataclass
class LatentSpec:
    dim: int = 50
    low: float = -1.0
    high: float = 1.0

    def __post_init__(self):
        if self.dim < 1 or not self.low < self.high:
            raise ValueError(f"invalid latent spec {self}")


@dataclass
class MixtureSpec:
    """Gaussian mixture in the plane; ``components`` holds (mean, stddev, weight)."""

    components: list = field(default_factory=list)
    clip: bool = False

    def __post_init__(self):
        if not self.components:
            raise ValueError("mixture needs at least one component")
        weights = np.array([c[2] for c in self.components], dtype=np.float64)
        if np.any(weights <= 0):
            raise ValueError("mixture weights must be positive")
        weights = weights / weights.sum()
        self.components = [
            (tuple(float(v) for v in mean), float(std), float(w))
            for (mean, std, _), w in zip(self.components, weights)
        ]

    @classmethod
    def ring(cls, k: int = 5, radius: float = 0.7, stddev: float = 0.05) -> "MixtureSpec":
        angles = 2 * np.pi * np.arange(k) / k
        return cls([((radius * np.cos(a), radius * np.sin(a)), stddev, 1.0) for a in angles])


def _read_idx_header(raw: bytes):
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise IDXFormatError("IDX magic must start with two zero bytes")
    dtype, ndim = raw[2], raw[3]
    if dtype != _IDX_UBYTE:
        raise IDXUnsupportedError(f"unsupported IDX element type 0x{dtype:02x}")
    end = 4 + 4 * ndim
    if ndim == 0 or len(raw) < end:
        raise IDXFormatError("IDX header truncated")
    dims = struct.unpack(f">{ndim}I", raw[4:end])
    return dims, end


def load_idx(path) -> np.ndarray:
    """Read an unsigned-byte IDX file into a float64 array of its declared shape.

    Files ending in ``.gz`` are decompressed transparently.
    """
    raw = Path(path).read_bytes()
    if str(path).endswith(".gz"):
        raw = gzip.decompress(raw)
    dims, offset = _read_idx_header(raw)
    expected = int(np.prod(dims))
    payload = raw[offset:]
    if len(payload) != expected:
        raise IDXLengthError(
            f"{path}: header declares {expected} payload bytes, found {len(payload)}"
        )
    return np.frombuffer(payload, dtype=np.uint8).astype(np.float64).reshape(dims)


def save_idx(path, array) -> None:
    """Write a byte-valued array as an unsigned-byte IDX file."""
    arr = np.asarray(array)
    if arr.size and (arr.min() < 0 or arr.max() > 255 or np.any(arr != np.round(arr))):
        raise ValueError("IDX unsigned-byte payload must hold integers in [0, 255]")
    header = bytes([0, 0, _IDX_UBYTE, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.astype(np.uint8).tobytes())


def preprocess_mnist(images, labels=None, name: str = "mnist") -> Dataset:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3 or images.shape[1:] != (28, 28):
        raise ValueError(f"expected n x 28 x 28 images, got {images.shape}")
    flat = images.reshape(len(images), 784) / 127.5 - 1.0
    return Dataset(flat, labels, name)


def unprocess_mnist(features) -> np.ndarray:
    """Inverse of the [-1, 1] pixel map, rounded back to bytes."""
    return np.rint((np.asarray(features) + 1.0) * 127.5).astype(np.uint8)


def load_mnist(images_path, labels_path=None, name=None) -> Dataset:
    images = load_idx(images_path)
    labels = None if labels_path is None else load_idx(labels_path).astype(np.int64)
    return preprocess_mnist(images, labels, name or Path(images_path).name)


def sample_latent(spec: LatentSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be positive")
    z = rng.uniform(spec.low, spec.high, size=(n, spec.dim))
    # uniform() is half-open; fold the (measure-zero) lower endpoint inward
    return np.where(z == spec.low, np.nextafter(spec.low, spec.high), z)


def sample_mixture(spec: MixtureSpec, n: int, rng: np.random.Generator) -> Dataset:
    weights = np.array([c[2] for c in spec.components])
    means = np.array([c[0] for c in spec.components])
    stds = np.array([c[1] for c in spec.components])
    which = rng.choice(len(weights), size=n, p=weights)
    x = means[which] + stds[which, None] * rng.standard_normal((n, 2))
    if spec.clip:
        x = np.clip(x, -1.0, 1.0)
    name = "mixture" if spec.clip else "mixture(unclipped)"
    return Dataset(x, which, name)
