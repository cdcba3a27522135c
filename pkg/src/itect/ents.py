"""Entropy-time-series features.

Each file becomes a fixed-length vector: per-chunk Shannon entropies,
resampled to N = 2^alpha points, denoised through a discrete Haar
wavelet transform (threshold the detail coefficients, reconstruct).
A correlation-pruning pass removes redundant dimensions before any
learning happens.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class EntsParams:
    chunk_size: int = 256
    alpha: int = 9
    tau: float = 0.5

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")

    @property
    def n_points(self) -> int:
        return 1 << self.alpha


@dataclass(frozen=True)
class EntropyProfile:
    values: np.ndarray
    source_digest: str
    params: EntsParams

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.shape != (self.params.n_points,):
            raise ValueError("profile length must be 2^alpha")
        if not np.all(np.isfinite(v)):
            raise ValueError("profile contains non-finite values")


@dataclass(frozen=True)
class HaarCoefficients:
    """Full Haar decomposition, laid out (scale | details, coarse first)."""

    coeffs: np.ndarray
    levels: int

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        object.__setattr__(self, "coeffs", c)
        if c.shape != (1 << self.levels,):
            raise ValueError("coefficient count must be 2^levels")


@dataclass
class FeatureMatrix:
    rows: np.ndarray
    col_index: list[int]
    labels: list[str] | None = None
    digests: list[str] | None = None

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise ValueError("rows must be 2-D")
        if self.rows.shape[1] != len(self.col_index):
            raise ValueError("col_index does not match column count")
        if any(b <= a for a, b in zip(self.col_index, self.col_index[1:])):
            raise ValueError("col_index must be strictly increasing")

    def select(self, col_index: Sequence[int]) -> "FeatureMatrix":
        positions = [self.col_index.index(c) for c in col_index]
        return FeatureMatrix(
            rows=self.rows[:, positions],
            col_index=list(col_index),
            labels=self.labels,
            digests=self.digests,
        )


def chunk_entropies(data: bytes, chunk_size: int) -> np.ndarray:
    """Shannon entropy (bits/byte) of each fixed-size chunk of ``data``.

    The final partial chunk is measured over its actual bytes.
    """
    if len(data) == 0:
        raise DataError("empty file")
    arr = np.frombuffer(data, dtype=np.uint8)
    n_chunks = -(-len(arr) // chunk_size)
    chunk_idx = np.arange(len(arr)) // chunk_size
    counts = np.bincount(
        chunk_idx * 256 + arr, minlength=n_chunks * 256
    ).reshape(n_chunks, 256)
    totals = counts.sum(axis=1, keepdims=True)
    p = counts / totals
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log2(p), 0.0)
    return -terms.sum(axis=1)


def _lower_median(values: Sequence[int]) -> int:
    s = sorted(values)
    if not s:
        raise DataError("empty zoo")
    return s[(len(s) - 1) // 2]


def compute_alpha(
    malware_sizes: Sequence[int],
    benign_sizes: Sequence[int],
    chunk_size: int,
) -> int:
    """Profile length exponent from the smaller zoo median file size.

    alpha = max(1, ceil(log2(min(median sizes) / chunk_size))), using
    the lower median for even-sized zoos.
    """
    med = min(_lower_median(malware_sizes), _lower_median(benign_sizes))
    if med <= 0:
        raise DataError("zoo median file size is zero")
    ratio = med / chunk_size
    if ratio <= 1:
        return 1
    return max(1, math.ceil(math.log2(ratio)))


def select_chunk_indices(num_chunks: int, n_points: int) -> np.ndarray:
    """Evenly spread ``n_points`` chunk indices over ``num_chunks``.

    First and last chunks are always included; interior index k is
    floor(k * (num_chunks - 1) / (n_points - 1)). Repeats occur when the
    file has fewer chunks than points.
    """
    if num_chunks < 1:
        raise ValueError("num_chunks must be >= 1")
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    k = np.arange(n_points, dtype=np.int64)
    return k * (num_chunks - 1) // (n_points - 1)


def haar_forward(series: np.ndarray) -> HaarCoefficients:
    """Full orthonormal Haar decomposition of a power-of-two series."""
    x = np.asarray(series, dtype=np.float64)
    n = len(x)
    if n < 2 or n & (n - 1):
        raise ValueError("series length must be a power of two >= 2")
    w = x.copy()
    m = n
    levels = 0
    while m > 1:
        even = w[0:m:2]
        odd = w[1:m:2]
        s = (even + odd) / SQRT2
        d = (even - odd) / SQRT2
        w[: m // 2] = s
        w[m // 2 : m] = d
        m //= 2
        levels += 1
    return HaarCoefficients(coeffs=w, levels=levels)


def denoise(coeffs: HaarCoefficients, tau: float) -> HaarCoefficients:
    """Zero detail coefficients with magnitude below ``tau``.

    The top-level scale coefficient (index 0) is never zeroed.
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    w = coeffs.coeffs.copy()
    detail = w[1:]
    detail[np.abs(detail) < tau] = 0.0
    return HaarCoefficients(coeffs=w, levels=coeffs.levels)


def haar_inverse(coeffs: HaarCoefficients) -> np.ndarray:
    """Reconstruct the series from a full Haar decomposition."""
    w = coeffs.coeffs.copy()
    n = len(w)
    m = 1
    while m < n:
        s = w[:m].copy()
        d = w[m : 2 * m].copy()
        w[0 : 2 * m : 2] = (s + d) / SQRT2
        w[1 : 2 * m : 2] = (s - d) / SQRT2
        m *= 2
    return w


def entropy_profile(
    data: bytes,
    params: EntsParams,
    source_digest: str | None = None,
) -> EntropyProfile:
    """Denoised fixed-length entropy profile of one file."""
    ents = chunk_entropies(data, params.chunk_size)
    idx = select_chunk_indices(len(ents), params.n_points)
    series = ents[idx]
    coeffs = haar_forward(series)
    values = haar_inverse(denoise(coeffs, params.tau))
    if source_digest is None:
        source_digest = hashlib.sha256(data).hexdigest()
    return EntropyProfile(values=values, source_digest=source_digest, params=params)


def write_feature_csv(matrix: FeatureMatrix, path) -> None:
    """CSV export: header ``digest,label,x<orig-dim>...``, one row per file."""
    if matrix.digests is None or matrix.labels is None:
        raise ValueError("feature CSV needs digests and labels")
    with open(path, "w", encoding="utf-8") as fh:
        header = ["digest", "label"] + [f"x{c}" for c in matrix.col_index]
        fh.write(",".join(header) + "\n")
        for digest, label, row in zip(matrix.digests, matrix.labels, matrix.rows):
            cells = [digest, label] + [repr(float(v)) for v in row]
            fh.write(",".join(cells) + "\n")


def read_feature_csv(path) -> FeatureMatrix:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[:2] != ["digest", "label"]:
            raise DataError(f"bad feature CSV header in {path}")
        col_index = [int(c[1:]) for c in header[2:]]
        digests, labels, rows = [], [], []
        for line in fh:
            cells = line.strip().split(",")
            if not cells or cells == [""]:
                continue
            digests.append(cells[0])
            labels.append(cells[1])
            rows.append([float(v) for v in cells[2:]])
    return FeatureMatrix(
        rows=np.array(rows, dtype=np.float64),
        col_index=col_index,
        labels=labels,
        digests=digests,
    )


def prune_correlated(matrix: FeatureMatrix, cutoff: float = 0.8) -> FeatureMatrix:
    """Drop columns too correlated with an earlier retained column.

    Greedy scan in ascending dimension order: a column is dropped when
    |Pearson corr| with any already-retained column exceeds ``cutoff``.
    Zero-variance columns count as correlated with everything, so only
    one can survive (and only if it comes first).
    """
    x = matrix.rows
    if x.shape[0] < 2:
        raise DataError("pruning requires at least 2 rows")
    n = x.shape[0]
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    zero_var = std == 0
    # Standardized columns; zero-variance ones become all-zero vectors.
    z = (x - mean) / np.where(zero_var, 1.0, std)
    retained: list[int] = []
    for j in range(x.shape[1]):
        if zero_var[j] and retained:
            continue
        if retained:
            corrs = z[:, retained].T @ z[:, j] / n
            if np.any(np.abs(corrs) > cutoff):
                continue
        retained.append(j)
    return FeatureMatrix(
        rows=x[:, retained],
        col_index=[matrix.col_index[j] for j in retained],
        labels=matrix.labels,
        digests=matrix.digests,
    )
