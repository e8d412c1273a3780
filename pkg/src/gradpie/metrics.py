"""Gradient-quality diagnostics and finite-difference oracles."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np


def relative_error(g_est, g_exact) -> float:
    """``||g_est - g_exact|| / ||g_exact||`` (2-norm)."""
    g_est = np.asarray(g_est, dtype=float).ravel()
    g_exact = np.asarray(g_exact, dtype=float).ravel()
    denom = np.linalg.norm(g_exact)
    if denom == 0:
        raise ValueError("relative error is undefined for a zero reference gradient")
    return float(np.linalg.norm(g_est - g_exact) / denom)


def cosine_similarity(g_est, g_exact) -> float:
    g_est = np.asarray(g_est, dtype=float).ravel()
    g_exact = np.asarray(g_exact, dtype=float).ravel()
    na, nb = np.linalg.norm(g_est), np.linalg.norm(g_exact)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(g_est, g_exact) / (na * nb), -1.0, 1.0))


def finite_difference_gradient(f, x, h=1e-5) -> np.ndarray:
    """Central differences of a scalar function, one coordinate at a time."""
    if not h > 0:
        raise ValueError(f"step must be positive, got {h}")
    x = np.asarray(x, dtype=float)
    flat = x.ravel()
    g = np.empty(flat.size)
    for j in range(flat.size):
        xp, xm = flat.copy(), flat.copy()
        xp[j] += h
        xm[j] -= h
        fp, fm = f(xp.reshape(x.shape)), f(xm.reshape(x.shape))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value along coordinate {j}")
        g[j] = (fp - fm) / (2.0 * h)
    return g.reshape(x.shape)


def jacobian_rowdiff(J_a, J_b) -> float:
    """Sum over rows of the 2-norm of ``J_a - J_b``."""
    J_a = np.atleast_2d(np.asarray(J_a, dtype=float))
    J_b = np.atleast_2d(np.asarray(J_b, dtype=float))
    if J_a.shape != J_b.shape:
        raise ValueError(f"shape mismatch {J_a.shape} vs {J_b.shape}")
    return float(np.linalg.norm(J_a - J_b, axis=1).sum())


def row_norm(A) -> float:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return float(np.linalg.norm(A, axis=1).sum())


@dataclass
class GradientReport:
    rel_err: np.ndarray
    cos_sim: np.ndarray

    def __post_init__(self):
        self.rel_err = np.asarray(self.rel_err, dtype=float)
        self.cos_sim = np.asarray(self.cos_sim, dtype=float)

    @property
    def relative_error(self) -> float:
        return float(self.rel_err.mean())

    @property
    def cosine_similarity(self) -> float:
        return float(self.cos_sim.mean())

    def aggregate(self) -> dict:
        out = {}
        for name, arr in (("rel_err", self.rel_err), ("cos_sim", self.cos_sim)):
            out[name] = {"mean": float(arr.mean()), "std": float(arr.std()),
                         "median": float(np.median(arr)), "n": int(arr.size)}
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["point_id", "rel_err", "cos_sim"])
            for i, (r, c) in enumerate(zip(self.rel_err, self.cos_sim)):
                w.writerow([i, repr(float(r)), repr(float(c))])

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.aggregate(), fh, indent=2)


def surrogate_gradient_eval(gradient_source, objective, blackbox, points) -> GradientReport:
    """Compare composed-objective input gradients against the reference ones.

    At each point the objective gradient is taken at the true output and
    pulled back through both ``gradient_source`` and the black box's
    reference Jacobian.  Points where the reference gradient vanishes are
    skipped.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    Y = blackbox._evaluate(X)
    U = objective.descent_gradient(Y)
    g_est = gradient_source.vjp(X, U)
    g_ref = blackbox.vjp(X, U)
    rel, cos = [], []
    for a, b in zip(g_est, g_ref):
        if np.linalg.norm(b) == 0:
            continue
        rel.append(relative_error(a, b))
        cos.append(cosine_similarity(a, b) if np.linalg.norm(a) > 0 else 0.0)
    return GradientReport(rel, cos)
