"""Datasets: IDX (MNIST) container I/O, Gaussian mixtures for the toy problem, batching."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# IDX type code -> big-endian numpy dtype
IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


class IdxError(ValueError):
    pass


def _open(path: Path, mode: str):
    if str(path).endswith(".gz"):
        return gzip.GzipFile(path, mode, mtime=0)
    return open(path, mode)


def parse_idx(raw: bytes) -> tuple[int, np.ndarray]:
    """Decode an IDX byte stream into (type code, array in native byte order)."""
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise IdxError("bad magic: IDX files start with two zero bytes")
    code, rank = raw[2], raw[3]
    if code not in IDX_TYPES:
        raise IdxError(f"unsupported IDX type code 0x{code:02X}")
    header = 4 + 4 * rank
    if len(raw) < header:
        raise IdxError("truncated header")
    dims = struct.unpack(f">{rank}I", raw[4:header])
    dtype = IDX_TYPES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(raw) - header < expected:
        raise IdxError(f"truncated payload: expected {expected} bytes, found {len(raw) - header}")
    if len(raw) - header > expected:
        raise IdxError(f"trailing bytes after payload ({len(raw) - header - expected})")
    arr = np.frombuffer(raw, dtype=dtype, count=int(np.prod(dims)), offset=header).reshape(dims)
    return code, arr.astype(dtype.newbyteorder("="))


def encode_idx(arr: np.ndarray, code: int) -> bytes:
    if code not in IDX_TYPES:
        raise IdxError(f"unsupported IDX type code 0x{code:02X}")
    header = bytes([0, 0, code, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=IDX_TYPES[code]).tobytes()


def read_idx(path) -> tuple[int, np.ndarray]:
    """Raw IDX contents, transparently gunzipping ``*.gz`` files."""
    with _open(Path(path), "rb") as f:
        return parse_idx(f.read())


def write_idx(path, arr: np.ndarray, code: int) -> None:
    with _open(Path(path), "wb") as f:
        f.write(encode_idx(arr, code))


def load_idx(path, normalize: bool = True) -> np.ndarray:
    """Load an IDX file; u8 payloads become float64 in [0, 1] when ``normalize``."""
    code, arr = read_idx(path)
    if code == 0x08 and normalize:
        return arr.astype(np.float64) / 255.0
    return arr


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # (N, H, W, C) float64 in [0, 1]
    labels: np.ndarray | None  # (N,) int64 class indices
    num_classes: int = 10
    pixel_scale: float = 255.0

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        if inputs.size and (inputs.min() < 0.0 or inputs.max() > 1.0):
            raise ValueError("inputs must be normalized to [0, 1]")
        inputs.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (len(inputs),):
                raise ValueError(f"labels shape {labels.shape} does not match {len(inputs)} inputs")
            if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
                raise ValueError(f"class indices must lie in [0, {self.num_classes})")
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.inputs)

    def subset(self, index) -> "Dataset":
        labels = None if self.labels is None else self.labels[index]
        return Dataset(self.inputs[index], labels, self.num_classes, self.pixel_scale)


MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte")


def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        if (directory / name).exists():
            return directory / name
    raise FileNotFoundError(f"{stem}[.gz] not found in {directory}")


def load_mnist(directory, validation_count: int = 10_000) -> tuple[Dataset, Dataset]:
    """Training images split into (train, validation); the last ``validation_count`` validate."""
    directory = Path(directory)
    images = load_idx(_find(directory, MNIST_FILES[0]))
    labels = load_idx(_find(directory, MNIST_FILES[1]), normalize=False).astype(np.int64)
    if len(images) != len(labels):
        raise IdxError(f"{len(images)} images but {len(labels)} labels")
    if not 0 < validation_count < len(images):
        raise ValueError(f"validation_count must be in (0, {len(images)})")
    images = images[..., None]
    cut = len(images) - validation_count
    return Dataset(images[:cut], labels[:cut]), Dataset(images[cut:], labels[cut:])


def minibatch(ds: Dataset, size: int, rng: np.random.Generator):
    """Uniform draw of ``size`` distinct examples."""
    if size > len(ds):
        raise ValueError(f"batch size {size} exceeds dataset size {len(ds)}")
    idx = rng.choice(len(ds), size=size, replace=False)
    labels = None if ds.labels is None else ds.labels[idx]
    return ds.inputs[idx], labels


# -- Gaussian mixtures ---------------------------------------------------------


@dataclass(frozen=True)
class GaussianMixture:
    means: np.ndarray  # (K, 2)
    covariances: np.ndarray  # (K, 2, 2)
    weights: np.ndarray  # (K,)
    precisions: np.ndarray = field(init=False, repr=False)
    norms: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        covs = np.asarray(self.covariances, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        k = len(weights)
        if means.shape != (k, 2) or covs.shape != (k, 2, 2):
            raise ValueError("mixture needs means (K, 2), covariances (K, 2, 2), weights (K,)")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be non-negative and sum to 1")
        for j, cov in enumerate(covs):
            if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
                raise ValueError(f"covariance {j} is not symmetric")
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise ValueError(f"covariance {j} is not positive definite") from None
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "precisions", np.linalg.inv(covs))
        object.__setattr__(self, "norms", weights / (2 * np.pi * np.sqrt(np.linalg.det(covs))))

    @classmethod
    def isotropic(cls, means, sigma: float, weights=None) -> "GaussianMixture":
        means = np.asarray(means, dtype=np.float64)
        k = len(means)
        weights = np.full(k, 1.0 / k) if weights is None else weights
        return cls(means, np.repeat(np.eye(2)[None] * sigma**2, k, axis=0), weights)

    def to_dict(self) -> dict:
        return {
            "components": [
                {"mean": m.tolist(), "covariance": c.tolist(), "weight": float(w)}
                for m, c, w in zip(self.means, self.covariances, self.weights)
            ]
        }


def default_toy_mixture() -> GaussianMixture:
    """Four equal-weight modes at (+-1.5, +-1.5), sigma 0.35."""
    return GaussianMixture.isotropic([[1.5, 1.5], [-1.5, 1.5], [-1.5, -1.5], [1.5, -1.5]], 0.35)


def mixture_density(p, gm: GaussianMixture) -> np.ndarray:
    """Mixture density at one point (2,) or a batch of points (n, 2)."""
    p = np.asarray(p, dtype=np.float64)
    diff = p[..., None, :] - gm.means  # (..., K, 2)
    quad = np.einsum("...ki,kij,...kj->...k", diff, gm.precisions, diff)
    return np.exp(-0.5 * quad) @ gm.norms
