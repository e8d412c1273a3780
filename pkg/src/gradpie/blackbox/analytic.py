"""Closed-form test functions with exact Jacobians."""

from __future__ import annotations

import numpy as np

from .base import BlackBox


class Quadratic(BlackBox):
    """``F(x) = ||x - center||^2`` (scalar output)."""

    def __init__(self, dim, center=None):
        super().__init__()
        self.input_dim = int(dim)
        self.output_dim = 1
        self.center = np.zeros(dim) if center is None else np.asarray(center, dtype=float)

    def _evaluate(self, X):
        return np.sum(np.square(X - self.center), axis=1, keepdims=True)

    def exact_jacobian(self, x):
        return 2.0 * (np.asarray(x, dtype=float) - self.center)[None, :]


class Rosenbrock(BlackBox):
    """``sum_i 100 (x_{i+1} - x_i^2)^2 + (1 - x_i)^2`` (scalar output)."""

    def __init__(self, dim):
        if dim < 2:
            raise ValueError("rosenbrock needs dimension >= 2")
        super().__init__()
        self.input_dim = int(dim)
        self.output_dim = 1

    def _evaluate(self, X):
        a, b = X[:, :-1], X[:, 1:]
        return np.sum(100.0 * np.square(b - a * a) + np.square(1.0 - a), axis=1, keepdims=True)

    def exact_jacobian(self, x):
        x = np.asarray(x, dtype=float)
        g = np.zeros_like(x)
        a, b = x[:-1], x[1:]
        g[:-1] += -400.0 * a * (b - a * a) - 2.0 * (1.0 - a)
        g[1:] += 200.0 * (b - a * a)
        return g[None, :]


class Linear(BlackBox):
    """``F(x) = A x`` with a ``(D_o, D_i)`` matrix."""

    def __init__(self, A):
        super().__init__()
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.output_dim, self.input_dim = self.A.shape

    def _evaluate(self, X):
        return X @ self.A.T

    def exact_jacobian(self, x):
        return self.A.copy()


def analytic_blackbox(kind: str, dim: int | None = None, **params) -> BlackBox:
    """Build ``quadratic``, ``rosenbrock`` or ``linear`` (pass ``A=``)."""
    if kind == "quadratic":
        return Quadratic(dim, center=params.get("center"))
    if kind == "rosenbrock":
        return Rosenbrock(dim)
    if kind == "linear":
        if "A" in params:
            return Linear(params["A"])
        rng = np.random.default_rng(params.get("seed", 0))
        out = params.get("output_dim", dim)
        return Linear(rng.standard_normal((out, dim)))
    raise ValueError(f"unknown analytic black-box kind {kind!r}")
