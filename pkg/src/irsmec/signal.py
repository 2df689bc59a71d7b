"""Uplink signal model: effective channels, covariances, receivers, SINR, MSE.

Vectors follow the column convention: ``effective_channel`` returns h_k with
shape (M,) and receivers are (M,) arrays applied as ``w.conj() @ y``.
Rates are in nats.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .chanmodel import ChannelSet


def _check_phi(ch: ChannelSet, phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=complex).reshape(-1)
    if phi.shape != (ch.N,):
        raise ValueError(f"phase vector has length {phi.size}, expected {ch.N}")
    return phi


def _check_user(ch: ChannelSet, k: int) -> int:
    if not 0 <= k < ch.K:
        raise IndexError(f"user index {k} out of range for K={ch.K}")
    return k


def effective_channels(ch: ChannelSet, phi) -> np.ndarray:
    """All effective channels as an (M, K) matrix, column k is h_k(phi)."""
    phi = _check_phi(ch, phi)
    return ch.G @ (phi[:, None] * ch.h_r.T) + ch.h_d.T


def effective_channel(ch: ChannelSet, phi, k: int) -> np.ndarray:
    """G diag(phi) h_r,k + h_d,k."""
    _check_user(ch, k)
    phi = _check_phi(ch, phi)
    return ch.G @ (phi * ch.h_r[k]) + ch.h_d[k]


def total_covariance(ch: ChannelSet, phi) -> np.ndarray:
    """sigma^2 I + sum_j q_j h_j h_j^H (every user included)."""
    H = effective_channels(ch, phi)
    return ch.noise * np.eye(ch.M) + (H * ch.q) @ H.conj().T


def interference_covariance(ch: ChannelSet, phi, k: int) -> np.ndarray:
    """sigma^2 I + sum_{i != k} q_i h_i h_i^H."""
    _check_user(ch, k)
    H = effective_channels(ch, phi)
    mask = np.ones(ch.K, bool)
    mask[k] = False
    Hi = H[:, mask]
    W = ch.noise * np.eye(ch.M) + (Hi * ch.q[mask]) @ Hi.conj().T
    return 0.5 * (W + W.conj().T)


def _solve_pd(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    return cho_solve(cho_factor(A, lower=True), b)


def optimal_receiver(ch: ChannelSet, phi, k: int) -> np.ndarray:
    """Unit-norm SINR-maximizing receiver W_k^{-1} h_k / ||W_k^{-1} h_k||."""
    h = effective_channel(ch, phi, k)
    u = _solve_pd(interference_covariance(ch, phi, k), h)
    norm = np.linalg.norm(u)
    return u / norm if norm > 0 else u


def sinr(ch: ChannelSet, phi, k: int, u) -> float:
    """SINR of user k for an arbitrary receiver ``u``."""
    h = effective_channel(ch, phi, k)
    u = np.asarray(u, complex)
    num = ch.q[k] * abs(np.vdot(u, h)) ** 2
    den = np.real(np.vdot(u, interference_covariance(ch, phi, k) @ u))
    return float(num / den)


def max_sinr(ch: ChannelSet, phi, k: int) -> float:
    """q_k h_k^H W_k^{-1} h_k."""
    h = effective_channel(ch, phi, k)
    x = _solve_pd(interference_covariance(ch, phi, k), h)
    return max(float(ch.q[k] * np.real(np.vdot(h, x))), 0.0)


def rate(ch: ChannelSet, phi, k: int) -> float:
    """ln(1 + max SINR)."""
    return float(np.log1p(max_sinr(ch, phi, k)))


def rates(ch: ChannelSet, phi) -> np.ndarray:
    """Rates of every user, computed from the total covariance in one factorization.

    Uses h^H W_k^{-1} h = s / (1 - q_k s) with s = h^H Wt^{-1} h.
    """
    H = effective_channels(ch, phi)
    Wt = ch.noise * np.eye(ch.M) + (H * ch.q) @ H.conj().T
    X = _solve_pd(Wt, H)
    s = np.real(np.sum(H.conj() * X, axis=0))
    # 1 - q s = min MSE > 0 always; clip guards round-off only
    eps = np.clip(1.0 - ch.q * s, np.finfo(float).tiny, 1.0)
    return -np.log(eps)


def mse(ch: ChannelSet, phi, k: int, w) -> float:
    """E|s_k - w^H y|^2 for unit-power independent symbols and CN(0, sigma^2 I) noise."""
    _check_user(ch, k)
    w = np.asarray(w, complex)
    H = effective_channels(ch, phi)
    g = w.conj() @ H  # w^H h_j for every j
    err = abs(1.0 - np.sqrt(ch.q[k]) * g[k]) ** 2
    err += sum(ch.q[j] * abs(g[j]) ** 2 for j in range(ch.K) if j != k)
    err += ch.noise * np.real(np.vdot(w, w))
    return float(err)


def mmse_receiver(ch: ChannelSet, phi, k: int) -> np.ndarray:
    """sqrt(q_k) Wt^{-1} h_k, with Wt the covariance over all users."""
    h = effective_channel(ch, phi, k)
    return np.sqrt(ch.q[k]) * _solve_pd(total_covariance(ch, phi), h)


def mmse_receivers(ch: ChannelSet, phi) -> np.ndarray:
    """All MMSE receivers as a (K, M) array."""
    H = effective_channels(ch, phi)
    Wt = ch.noise * np.eye(ch.M) + (H * ch.q) @ H.conj().T
    return (_solve_pd(Wt, H) * np.sqrt(ch.q)).T


def min_mse(ch: ChannelSet, phi, k: int) -> float:
    """1 - q_k h_k^H Wt^{-1} h_k."""
    h = effective_channel(ch, phi, k)
    return float(1.0 - ch.q[k] * np.real(np.vdot(h, _solve_pd(total_covariance(ch, phi), h))))


def is_hermitian_pd(W: np.ndarray, floor: float) -> bool:
    """Hermitian with smallest eigenvalue >= floor."""
    if not np.allclose(W, W.conj().T, rtol=1e-12, atol=1e-12 * np.abs(W).max()):
        return False
    return bool(np.linalg.eigvalsh(W).min() >= floor)
