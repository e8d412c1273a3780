"""Phase-only wavefront shaping with Rayleigh-Sommerfeld propagation.

A Gaussian beam is multiplied by a per-pixel phase mask and propagated a
distance ``z``.  The propagation is the direct convolution of the field with
the sampled Rayleigh-Sommerfeld impulse response, evaluated with a
zero-padded FFT (linear, not circular, convolution).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from .base import BlackBox


def grid_coords(n, pitch):
    """Pixel-centre coordinates, symmetric about the optical axis."""
    return (np.arange(n) - (n - 1) / 2.0) * pitch


def gaussian_field(n, pitch, waist, center=(0.0, 0.0), amplitude=1.0):
    x = grid_coords(n, pitch)
    X, Y = np.meshgrid(x, x, indexing="xy")
    r2 = (X - center[0]) ** 2 + (Y - center[1]) ** 2
    return amplitude * np.exp(-r2 / waist ** 2).astype(complex)


def impulse_response(n, pitch, wavelength, z):
    """``h_z`` sampled at all ``(2n-1)^2`` pixel offsets.

    First-kind Rayleigh-Sommerfeld kernel
    ``z / (i lambda d^2) * (1 + i / (k d)) * exp(i k d)``; the ``d^2`` makes
    the pixel-area-weighted sum power conserving.
    """
    k = 2.0 * np.pi / wavelength
    off = np.arange(-(n - 1), n) * pitch
    DX, DY = np.meshgrid(off, off, indexing="xy")
    d = np.sqrt(DX ** 2 + DY ** 2 + z ** 2)
    return z / (1j * wavelength * d ** 2) * (1.0 + 1j / (k * d)) * np.exp(1j * k * d)


@dataclass
class OpticalSystem:
    n: int = 16
    pitch: float = 20e-6
    wavelength: float = 700e-9
    waist: float = 70e-6
    z: float = 10e-3
    # (center x, center y, waist, amplitude) per target spot; two half-waist
    # spots of amplitude sqrt(2) carry the same power as the input beam
    target_spots: list = field(default_factory=lambda: [(-60e-6, 0.0, 35e-6, 2 ** 0.5),
                                                          (60e-6, 0.0, 35e-6, 2 ** 0.5)])

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("grid size must be >= 1")
        if not self.wavelength > 0:
            raise ValueError("wavelength must be positive")
        if not self.z > 0:
            raise ValueError(f"propagation distance must be positive, got {self.z}")
        self._kernel_cache = (None, None)

    @property
    def wavenumber(self) -> float:
        return 2.0 * np.pi / self.wavelength

    @property
    def rayleigh_range(self) -> float:
        return np.pi * self.waist ** 2 / self.wavelength

    def input_field(self):
        return gaussian_field(self.n, self.pitch, self.waist)

    def target_field(self):
        psi = np.zeros((self.n, self.n), dtype=complex)
        for cx, cy, w, a in self.target_spots:
            psi += gaussian_field(self.n, self.pitch, w, center=(cx, cy), amplitude=a)
        return psi

    @property
    def critical_distance(self) -> float:
        """``n pitch^2 / lambda``: beyond it the sampled kernel is not aliased."""
        return self.n * self.pitch ** 2 / self.wavelength

    @property
    def padded_size(self) -> int:
        return sfft.next_fast_len(2 * self.n - 1)

    def kernel_fft(self):
        key = (self.n, self.pitch, self.wavelength, self.z)
        if self._kernel_cache[0] != key:
            h = impulse_response(self.n, self.pitch, self.wavelength, self.z)
            P = self.padded_size
            self._kernel_cache = (key, sfft.fft2(h, s=(P, P)))
        return self._kernel_cache[1]

    def to_dict(self) -> dict:
        return {"n": self.n, "pitch": self.pitch, "wavelength": self.wavelength,
                "waist": self.waist, "z": self.z,
                "target_spots": [list(s) for s in self.target_spots]}


def propagate(field_in, system: OpticalSystem):
    """Propagate a ``(n, n)`` field (or a ``(M, n, n)`` stack) by ``system.z``."""
    if not system.z > 0:
        raise ValueError(f"propagation distance must be positive, got {system.z}")
    u = np.asarray(field_in, dtype=complex)
    n = system.n
    if u.shape[-2:] != (n, n):
        raise ValueError(f"field shape {u.shape} does not match the {n}x{n} grid")
    P = system.padded_size
    U = sfft.fft2(u, s=(P, P), axes=(-2, -1))
    full = sfft.ifft2(U * system.kernel_fft(), axes=(-2, -1))
    # kernel index 0 sits at offset -(n-1); the output window starts there
    return full[..., n - 1:2 * n - 1, n - 1:2 * n - 1] * system.pitch ** 2


class OpticalWavefront(BlackBox):
    """Black box ``phases (n*n) -> |psi_out| (n*n)``."""

    def __init__(self, system: OpticalSystem):
        super().__init__()
        self.system = system
        self.input_dim = self.output_dim = system.n ** 2
        self._psi_in = system.input_field()

    def output_field(self, X):
        n = self.system.n
        masks = np.exp(1j * np.asarray(X, dtype=float).reshape(-1, n, n))
        return propagate(masks * self._psi_in, self.system)

    def _evaluate(self, X):
        return np.abs(self.output_field(X)).reshape(X.shape[0], -1)

    def exact_jacobian(self, x):
        # d|psi_out|_p / d phase_q = Re(conj(psi_p) i h_{p-q} psi_in_q) / |psi_p|
        n = self.system.n
        psi = self.output_field(x[None, :])[0].ravel()
        mod = np.abs(psi)
        E = np.eye(n * n).reshape(-1, n, n)
        masks = np.exp(1j * x.reshape(n, n))
        dpsi = propagate(1j * E * masks * self._psi_in, self.system).reshape(n * n, -1)
        with np.errstate(invalid="ignore", divide="ignore"):
            J = np.real(np.conj(psi)[None, :] * dpsi) / mod[None, :]
        J[:, mod == 0] = 0.0
        return J.T


def target_modulus(system: OpticalSystem) -> np.ndarray:
    return np.abs(system.target_field()).ravel()


def owms_objective(phase_params, system: OpticalSystem, blackbox: OpticalWavefront | None = None,
                   target=None) -> float:
    """``sum_p | |psi_out|_p - |psi_target|_p |`` for one phase mask."""
    phase_params = np.asarray(phase_params, dtype=float).ravel()
    if phase_params.size != system.n ** 2:
        raise ValueError(f"expected {system.n ** 2} phases, got {phase_params.size}")
    bb = blackbox if blackbox is not None else OpticalWavefront(system)
    t = target_modulus(system) if target is None else np.asarray(target, dtype=float).ravel()
    return float(np.abs(bb(phase_params) - t).sum())
