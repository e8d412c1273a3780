"""Datasets, exact k-nearest neighbours, normalization and sampling helpers."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

# query rows per distance block; keeps the block under ~10 MB at N = 1e5
_KNN_BLOCK = 1 << 21  # distance-matrix entries held at once


@dataclass
class NormStats:
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    @classmethod
    def from_arrays(cls, X, Y) -> "NormStats":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if X.shape[0] == 0:
            raise ValueError("cannot compute statistics of an empty dataset")
        return cls(X.mean(axis=0), _safe_std(X), Y.mean(axis=0), _safe_std(Y))

    @classmethod
    def identity(cls, d_in, d_out) -> "NormStats":
        return cls(np.zeros(d_in), np.ones(d_in), np.zeros(d_out), np.ones(d_out))

    def normalize_inputs(self, X):
        return (np.asarray(X, dtype=float) - self.x_mean) / self.x_std

    def denormalize_inputs(self, Z):
        return np.asarray(Z, dtype=float) * self.x_std + self.x_mean

    def normalize_outputs(self, Y):
        return (np.asarray(Y, dtype=float) - self.y_mean) / self.y_std

    def denormalize_outputs(self, Z):
        return np.asarray(Z, dtype=float) * self.y_std + self.y_mean

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("x_mean", "x_std", "y_mean", "y_std")}

    @classmethod
    def from_dict(cls, d) -> "NormStats":
        return cls(*(np.asarray(d[k], dtype=float) for k in ("x_mean", "x_std", "y_mean", "y_std")))


def _safe_std(A):
    s = A.std(axis=0)
    # zero-variance columns pass through unchanged
    s[~(s > 0)] = 1.0
    return s


def normalize(values, stats: NormStats | None, which="inputs"):
    if stats is None:
        raise ValueError("normalization statistics are missing")
    return stats.normalize_inputs(values) if which == "inputs" else stats.normalize_outputs(values)


def denormalize(values, stats: NormStats | None, which="inputs"):
    if stats is None:
        raise ValueError("normalization statistics are missing")
    return stats.denormalize_inputs(values) if which == "inputs" else stats.denormalize_outputs(values)


@dataclass
class Dataset:
    """Append-only collection of ``(x, y)`` pairs."""

    inputs: np.ndarray
    outputs: np.ndarray
    stats: NormStats | None = field(default=None)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.outputs = np.asarray(self.outputs, dtype=float)
        if self.outputs.ndim == 1:
            self.outputs = self.outputs[:, None]
        if self.inputs.shape[0] != self.outputs.shape[0]:
            raise ValueError(
                f"{self.inputs.shape[0]} inputs but {self.outputs.shape[0]} outputs")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def output_dim(self) -> int:
        return self.outputs.shape[1]

    def append(self, X, Y) -> None:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if X.shape[1] != self.input_dim or Y.shape[1] != self.output_dim or len(X) != len(Y):
            raise ValueError(f"cannot append inputs {X.shape} / outputs {Y.shape} "
                             f"to a ({self.input_dim}, {self.output_dim}) dataset")
        self.inputs = np.concatenate([self.inputs, X])
        self.outputs = np.concatenate([self.outputs, Y])

    def compute_stats(self) -> NormStats:
        self.stats = NormStats.from_arrays(self.inputs, self.outputs)
        return self.stats

    def to_csv(self, path) -> None:
        header = ([f"x{i}" for i in range(self.input_dim)]
                  + [f"y{i}" for i in range(self.output_dim)])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for x, y in zip(self.inputs, self.outputs):
                w.writerow([repr(float(v)) for v in np.concatenate([x, y])])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty file")
        header = rows[0]
        xs = [h for h in header if h.startswith("x")]
        ys = [h for h in header if h.startswith("y")]
        d_in, d_out = len(xs), len(ys)
        expected = [f"x{i}" for i in range(d_in)] + [f"y{i}" for i in range(d_out)]
        if header != expected or d_in == 0 or d_out == 0:
            raise ValueError(f"{path}: header must be x0..x<Di-1>, y0..y<Do-1>; got {header}")
        data = []
        for lineno, row in enumerate(rows[1:], start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            data.append([float(v) for v in row])
        arr = np.asarray(data, dtype=float).reshape(-1, len(header))
        return cls(arr[:, :d_in], arr[:, d_in:])


def _smallest_sorted(D, kk):
    """Column indices of the ``kk`` smallest entries per row, ordered by
    (value, index).  Rows with ties straddling the cut fall back to a full
    stable sort so the lower index always wins."""
    if kk >= D.shape[1]:
        return np.argsort(D, axis=1, kind="stable")[:, :kk]
    part = np.argpartition(D, kk - 1, axis=1)[:, :kk]
    vals = np.take_along_axis(D, part, axis=1)
    order = np.lexsort((part, vals), axis=-1)
    out = np.take_along_axis(part, order, axis=1)
    kth = np.take_along_axis(vals, order[:, -1:], axis=1)
    tied = np.count_nonzero(D <= kth, axis=1) > kk
    if np.any(tied):
        out[tied] = np.argsort(D[tied], axis=1, kind="stable")[:, :kk]
    return out


@dataclass
class NeighborIndex:
    k: int
    neighbors: np.ndarray  # (N, min(k, N-1)) int
    distances: np.ndarray  # matching Euclidean distances

    def __len__(self):
        return self.neighbors.shape[0]


def build_knn(points, k: int) -> NeighborIndex:
    """Exact Euclidean kNN of every point among the others (brute force).

    Neighbor lists are sorted by distance, ties going to the lower index.
    ``k >= N`` is truncated to ``N - 1``.
    """
    if isinstance(points, Dataset):
        points = points.inputs
    X = np.atleast_2d(np.asarray(points, dtype=float))
    N = X.shape[0]
    if N < 2:
        raise ValueError(f"need at least 2 points for a neighbor index, got {N}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    kk = min(k, N - 1)
    nbrs = np.empty((N, kk), dtype=np.int64)
    dists = np.empty((N, kk))
    rows = max(1, _KNN_BLOCK // N)
    for start in range(0, N, rows):
        stop = min(start + rows, N)
        D = cdist(X[start:stop], X, "sqeuclidean")
        D[np.arange(stop - start), np.arange(start, stop)] = np.inf
        nbrs[start:stop] = _smallest_sorted(D, kk)
        dists[start:stop] = np.sqrt(np.take_along_axis(D, nbrs[start:stop], axis=1))
    return NeighborIndex(k=k, neighbors=nbrs, distances=dists)


@dataclass(frozen=True)
class LocalSamplerConfig:
    n_samples: int = 1
    sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 0:
            raise ValueError("n_samples must be >= 0")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


def local_sample(center, cfg: LocalSamplerConfig, rng=None, scale=None) -> np.ndarray:
    """``cfg.n_samples`` draws from ``N(center, (sigma * scale)^2 I)``.

    ``scale`` (per-dimension, default 1) maps a normalized-space ``sigma``
    back to raw input units.  A fresh generator seeded by ``cfg.seed`` is
    used unless ``rng`` is given.
    """
    center = np.asarray(center, dtype=float)
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    scale = 1.0 if scale is None else np.asarray(scale, dtype=float)
    noise = rng.standard_normal((cfg.n_samples, center.shape[0]))
    return center + cfg.sigma * scale * noise


def rank_select(values, n_best: int, direction: str = "maximize") -> np.ndarray:
    """Indices of the ``n_best`` best values; ties go to the lower index."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("cannot rank an empty list")
    if n_best < 1:
        raise ValueError(f"n_best must be >= 1, got {n_best}")
    if direction == "maximize":
        keys = -values
    elif direction == "minimize":
        keys = values
    else:
        raise ValueError(f"direction must be 'maximize' or 'minimize', got {direction!r}")
    return np.argsort(keys, kind="stable")[:n_best]
