"""Coupled nonlinear oscillator network (CNON).

Inputs are the initial amplitudes ``q(0)`` (velocities start at rest); the
output is ``q(t_end)`` of

    q_i'' = -sin(pi q_i) + sum_j Q_ij sin(pi q_j) + e_i

integrated with classic fourth-order Runge-Kutta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import BlackBox

FD_STEP = 1e-5


@dataclass
class CnonSystem:
    Q: np.ndarray
    e: np.ndarray
    t_end: float = 10.0
    dt: float = 0.05

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.e = np.asarray(self.e, dtype=float).ravel()
        n = self.Q.shape[0]
        if self.Q.shape != (n, n) or self.e.shape != (n,):
            raise ValueError(f"Q must be n x n and e length n; got {self.Q.shape}, {self.e.shape}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_end < 0:
            raise ValueError(f"t_end must be non-negative, got {self.t_end}")

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @classmethod
    def from_coupling(cls, S, e, t_end=10.0, dt=0.05) -> "CnonSystem":
        """Symmetrize ``S`` into couplings ``J`` and fold them into ``Q``.

        Off-diagonals of ``Q`` equal ``J``; ``Q_ii = -sum_{j != i} J_ij`` so
        the matrix form reproduces ``sum_j J_ij (sin(pi q_j) - sin(pi q_i))``.
        """
        S = np.atleast_2d(np.asarray(S, dtype=float))
        J = 0.5 * (S + S.T)
        np.fill_diagonal(J, 0.0)
        Q = J.copy()
        np.fill_diagonal(Q, -J.sum(axis=1))
        return cls(Q, e, t_end=t_end, dt=dt)

    @classmethod
    def random(cls, n, seed=0, t_end=10.0, dt=0.05, symmetric=False) -> "CnonSystem":
        """Seeded random system.

        Default: ``Q = 1 + Z`` with ``Z ~ U[-1, 1]^{n x n}`` and ``e ~ U[-1, 1]^n``.
        ``symmetric=True`` instead draws ``S ~ U[-1, 1]`` and uses
        :meth:`from_coupling`.
        """
        rng = np.random.default_rng(seed)
        if symmetric:
            S = rng.uniform(-1.0, 1.0, size=(n, n))
            e = rng.uniform(-1.0, 1.0, size=n)
            return cls.from_coupling(S, e, t_end=t_end, dt=dt)
        Q = np.ones((n, n)) + rng.uniform(-1.0, 1.0, size=(n, n))
        e = rng.uniform(-1.0, 1.0, size=n)
        return cls(Q, e, t_end=t_end, dt=dt)

    def acceleration(self, q):
        s = np.sin(np.pi * q)
        return -s + s @ self.Q.T + self.e

    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


def cnon_evolve(system: CnonSystem, q0) -> np.ndarray:
    """Integrate from rest at ``q0`` (vector or ``(M, n)`` batch) to ``t_end``.

    The step count is ``round(t_end / dt)`` and the step size is adjusted to
    ``t_end / steps`` so the integration lands exactly on ``t_end``.
    """
    q = np.array(q0, dtype=float)
    if q.shape[-1] != system.n:
        raise ValueError(f"expected {system.n} oscillators, got shape {q.shape}")
    steps = system.n_steps()
    if steps == 0:
        return q
    h = system.t_end / steps
    p = np.zeros_like(q)
    acc = system.acceleration
    with np.errstate(invalid="ignore", over="ignore"):
        for step in range(steps):
            q, p = _rk4_step(acc, q, p, h)
            if not np.all(np.isfinite(q)):
                raise FloatingPointError(f"CNON state became non-finite at RK4 step {step + 1}")
    return q


def _rk4_step(acc, q, p, h):
    k1q, k1p = p, acc(q)
    k2q, k2p = p + 0.5 * h * k1p, acc(q + 0.5 * h * k1q)
    k3q, k3p = p + 0.5 * h * k2p, acc(q + 0.5 * h * k2q)
    k4q, k4p = p + h * k3p, acc(q + h * k3q)
    q = q + (h / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
    p = p + (h / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
    return q, p


def cnon_exact_gradient(system: CnonSystem, q0, step=FD_STEP) -> np.ndarray:
    """Jacobian ``d q(t_end) / d q(0)`` by central differences on the simulator."""
    q0 = np.asarray(q0, dtype=float)
    n = system.n
    E = np.eye(n) * step
    Y = cnon_evolve(system, np.concatenate([q0 + E, q0 - E]))
    return (Y[:n] - Y[n:]).T / (2.0 * step)


class Cnon(BlackBox):
    def __init__(self, system: CnonSystem):
        super().__init__()
        self.system = system
        self.input_dim = self.output_dim = system.n

    def _evaluate(self, X):
        return cnon_evolve(self.system, X)

    def exact_jacobian(self, x):
        return cnon_exact_gradient(self.system, x)

    def vjp(self, X, U):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        U = np.atleast_2d(np.asarray(U, dtype=float))
        n = self.system.n
        E = np.eye(n) * FD_STEP
        # one batched simulation for all points and all directions
        P = np.concatenate([(x + E) for x in X] + [(x - E) for x in X])
        Y = cnon_evolve(self.system, P)
        m = X.shape[0] * n
        D = ((Y[:m] - Y[m:]) / (2.0 * FD_STEP)).reshape(X.shape[0], n, n)
        # D[b, j, :] = column j of the Jacobian
        return np.einsum("bjo,bo->bj", D, U)
