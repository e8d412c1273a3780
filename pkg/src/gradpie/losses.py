"""Surrogate training losses and their gradients w.r.t. surrogate outputs.

All functions return ``(loss, gradients)``.  The l1 subgradient at an exact
zero residual is taken as 0.
"""

from __future__ import annotations

import numpy as np


def gradpie_loss(y, y_nbr, y_hat, y_hat_nbr):
    """Pairwise-difference (GradPIE) loss over k-nearest-neighbour pairs.

    Parameters
    ----------
    y, y_hat : (B, D_o)
        True and surrogate outputs at the batch samples.
    y_nbr, y_hat_nbr : (B, K, D_o)
        True and surrogate outputs at each sample's K neighbours.

    Returns
    -------
    loss : float
        ``mean_b (1/K) sum_k || (y_b - y_nbr_bk) - (y_hat_b - y_hat_nbr_bk) ||_1``
    d_y_hat : (B, D_o)
    d_y_hat_nbr : (B, K, D_o)
    """
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    y_nbr = np.asarray(y_nbr, dtype=float)
    y_hat_nbr = np.asarray(y_hat_nbr, dtype=float)
    if y.ndim != 2 or y.shape[0] == 0:
        raise ValueError("gradpie_loss needs a non-empty (B, D_o) batch")
    if y_nbr.ndim != 3 or y_nbr.shape[1] == 0:
        raise ValueError("gradpie_loss needs K >= 1 neighbours per sample")
    if y_hat.shape != y.shape or y_nbr.shape != y_hat_nbr.shape or y_nbr.shape[::2] != y.shape:
        raise ValueError(f"inconsistent shapes {y.shape}, {y_nbr.shape}, "
                         f"{y_hat.shape}, {y_hat_nbr.shape}")
    B, K, _ = y_nbr.shape
    r = (y[:, None, :] - y_nbr) - (y_hat[:, None, :] - y_hat_nbr)
    loss = float(np.abs(r).sum() / (B * K))
    s = np.sign(r) / (B * K)
    return loss, -s.sum(axis=1), s


def mae_loss(y_hat, y):
    """``mean_b || y_hat_b - y_b ||_1`` and its subgradient."""
    y_hat, y = _check_pair(y_hat, y)
    r = y_hat - y
    return float(np.abs(r).sum() / r.shape[0]), np.sign(r) / r.shape[0]


def mse_loss(y_hat, y):
    """Mean squared error over every entry; gradient ``2 (y_hat - y) / count``."""
    y_hat, y = _check_pair(y_hat, y)
    r = y_hat - y
    return float(np.mean(np.square(r))), 2.0 * r / r.size


def _check_pair(y_hat, y):
    y_hat = np.atleast_2d(np.asarray(y_hat, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if y.size == 0:
        raise ValueError("empty batch")
    if y_hat.shape != y.shape:
        raise ValueError(f"shape mismatch {y_hat.shape} vs {y.shape}")
    return y_hat, y
