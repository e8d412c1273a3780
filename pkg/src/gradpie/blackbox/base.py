"""Query-counted black-box interface."""

from __future__ import annotations

import threading

import numpy as np


class QueryCounter:
    """Thread-safe count of black-box evaluations."""

    def __init__(self):
        self._count = 0
        self._lock = threading.Lock()

    @property
    def count(self) -> int:
        return self._count

    def add(self, n: int) -> None:
        if n < 0:
            raise ValueError("query counts only increase")
        with self._lock:
            self._count += n

    def reset(self) -> None:
        with self._lock:
            self._count = 0


class BlackBox:
    """Mapping ``R^{D_i} -> R^{D_o}`` whose every evaluation is counted.

    Subclasses implement ``_evaluate`` on a ``(M, D_i)`` batch.  Calling the
    object counts ``M`` queries; the oracle helpers (``exact_jacobian``) go
    through ``_evaluate`` directly and are never counted, since they exist
    only for diagnostics and the exact-gradient reference runs.
    """

    input_dim: int
    output_dim: int

    def __init__(self):
        self.counter = QueryCounter()

    @property
    def queries(self) -> int:
        return self.counter.count

    def _evaluate(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ValueError(
                f"{type(self).__name__} expects inputs of dimension {self.input_dim}, "
                f"got shape {x.shape}")
        Y = self._evaluate(X)
        self.counter.add(X.shape[0])
        return Y[0] if single else Y

    def exact_jacobian(self, x) -> np.ndarray:
        """Reference Jacobian ``(D_o, D_i)`` at ``x``; uncounted."""
        raise NotImplementedError(f"{type(self).__name__} has no reference Jacobian")

    def vjp(self, X, U) -> np.ndarray:
        """Row-wise ``U[b]^T J(X[b])`` from the reference Jacobian."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        U = np.atleast_2d(np.asarray(U, dtype=float))
        return np.stack([u @ self.exact_jacobian(x) for x, u in zip(X, U)])
