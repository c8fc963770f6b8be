"""Quadrature rules over momentum space.

All rules return nodes together with weights for the *plain* measure
(``d^3P`` or ``d^2p``), so that ``sum(w * g(nodes))`` approximates the
integral of ``g``. Thermal weights are then applied by the caller.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_hermite, roots_jacobi

#: Default radial cutoff in units of the most probable momentum. The
#: Maxwell-Boltzmann mass beyond it is below 1e-8.
RADIAL_CUTOFF = 4.5


@lru_cache(maxsize=64)
def _jacobi_half(n: int) -> tuple[np.ndarray, np.ndarray]:
    t, w = roots_jacobi(n, 0.0, 0.5)
    return t, w


@lru_cache(maxsize=64)
def _hermite(n: int) -> tuple[np.ndarray, np.ndarray]:
    return roots_hermite(n)


def radial_rule(n: int, p_beta: float, cutoff: float = RADIAL_CUTOFF):
    """Radial rule for isotropic integrands ``int d^3P g(|P|)``.

    Gauss-Jacobi in ``u = (P / p_beta)^2`` on ``[0, cutoff^2]`` with the
    ``sqrt(u)`` Jacobian carried by the rule weight. Nodes never touch
    ``P = 0``.

    Returns
    -------
    radii : ndarray, shape (n,)
        Momentum magnitudes, ascending.
    weights : ndarray, shape (n,)
        Volume weights including ``4 pi P^2 dP``.
    """
    if n < 1:
        raise ValueError("radial rule needs at least one node")
    if p_beta <= 0 or cutoff <= 0:
        raise ValueError("p_beta and cutoff must be positive")
    t, w = _jacobi_half(n)
    half = cutoff * cutoff / 2.0
    u = half * (1.0 + t)
    # d^3P = 2 pi p_beta^3 sqrt(u) du ; sqrt(1+t) is the Jacobi weight
    weights = 2.0 * np.pi * p_beta**3 * half**1.5 * w
    return p_beta * np.sqrt(u), weights


def hermite_tensor_rule(order: int, p_beta: float):
    """Tensor Gauss-Hermite rule for ``int d^3P g(P)``.

    Nodes are scaled by ``p_beta`` so that a Maxwell-Boltzmann factor
    ``exp(-P^2 / p_beta^2)`` is integrated exactly up to polynomial degree.
    The returned weights already divide out that Gaussian.
    """
    x, w = _hermite(order)
    # scale per axis first; exp(r^2) alone overflows at high order
    ws = w * np.exp(x * x)
    gx, gy, gz = np.meshgrid(x, x, x, indexing="ij")
    wx = ws[:, None, None] * ws[None, :, None] * ws[None, None, :]
    nodes = p_beta * np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    return nodes, p_beta**3 * wx.ravel()


def perpendicular_frame(q) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal pair spanning the plane perpendicular to ``q``.

    The first vector comes from Gram-Schmidt on the coordinate axis least
    aligned with ``q`` (lowest index on ties); the second is ``q_hat x e1``.
    """
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q)
    if norm == 0.0:
        raise ValueError("frame undefined for zero vector")
    qh = q / norm
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(qh)))] = 1.0
    e1 = axis - np.dot(axis, qh) * qh
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(qh, e1)
    return e1, e2


def plane_gauss_rule(q, order: int, p_beta: float):
    """Gauss-Hermite nodes on the plane perpendicular to ``q``.

    Weights are normalized against the 2D Maxwell-Boltzmann density, i.e.
    ``sum(w * g(nodes)) ~ int d^2p mu2d(p) g(p)`` and ``sum(w) == 1`` up to
    rounding.
    """
    e1, e2 = perpendicular_frame(q)
    x, w = _hermite(order)
    gx, gy = np.meshgrid(x, x, indexing="ij")
    nodes = p_beta * (gx.ravel()[:, None] * e1 + gy.ravel()[:, None] * e2)
    weights = (w[:, None] * w[None, :]).ravel() / np.pi
    return nodes, weights
