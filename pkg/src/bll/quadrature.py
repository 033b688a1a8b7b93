"""Quadrature rules shared across the package: sphere, ball/annulus, box."""

from __future__ import annotations

import numpy as np

__all__ = [
    "sphere_rule",
    "radial_rule",
    "ball_rule",
    "box_rule",
]


def sphere_rule(n_theta: int = 24, n_phi: int = 48):
    """Product rule on the unit sphere: Gauss-Legendre in cos(theta), uniform in phi.

    Returns ``(points, weights)`` with ``points`` of shape (M, 3) (unit
    vectors) and ``weights`` summing to 4*pi.  Spectrally accurate for
    smooth integrands; exact for spherical polynomials of degree
    < min(2*n_theta, n_phi).
    """
    mu, w_mu = np.polynomial.legendre.leggauss(n_theta)
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    w_phi = 2.0 * np.pi / n_phi

    sin_theta = np.sqrt(1.0 - mu**2)
    cos_phi, sin_phi = np.cos(phi), np.sin(phi)

    x = np.outer(sin_theta, cos_phi)
    y = np.outer(sin_theta, sin_phi)
    z = np.outer(mu, np.ones(n_phi))
    points = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    weights = np.outer(w_mu, np.full(n_phi, w_phi)).ravel()
    return points, weights


def radial_rule(r0: float, r1: float, n: int = 16):
    """Gauss-Legendre nodes/weights on [r0, r1] (no r^2 factor included)."""
    t, w = np.polynomial.legendre.leggauss(n)
    r = 0.5 * (r1 - r0) * t + 0.5 * (r1 + r0)
    return r, 0.5 * (r1 - r0) * w


def ball_rule(radius: float, n_r: int = 16, n_theta: int = 12, n_phi: int = 24,
              inner: float = 0.0, center=None):
    """Tensor rule on a ball (or spherical shell when ``inner`` > 0).

    Returns ``(points, weights)`` with weights summing to the shell volume.
    """
    r, w_r = radial_rule(inner, radius, n_r)
    omega, w_s = sphere_rule(n_theta, n_phi)
    points = r[:, None, None] * omega[None, :, :]
    weights = (w_r * r**2)[:, None] * w_s[None, :]
    points = points.reshape(-1, 3)
    weights = weights.ravel()
    if center is not None:
        points = points + np.asarray(center, dtype=float)
    return points, weights


def box_rule(corner, sides, panels: int = 5, order: int = 6):
    """Composite tensor Gauss-Legendre rule on an axis-aligned box.

    ``panels`` sub-intervals of ``order``-point Gauss per axis.  Returns
    ``(points, weights)`` with weights summing to the box volume.
    """
    corner = np.asarray(corner, dtype=float)
    sides = np.asarray(sides, dtype=float)
    t, w = np.polynomial.legendre.leggauss(order)

    nodes_1d = []
    weights_1d = []
    for axis in range(3):
        edges = corner[axis] + sides[axis] * np.linspace(0.0, 1.0, panels + 1)
        xs, ws = [], []
        for a, b in zip(edges[:-1], edges[1:]):
            xs.append(0.5 * (b - a) * t + 0.5 * (a + b))
            ws.append(0.5 * (b - a) * w)
        nodes_1d.append(np.concatenate(xs))
        weights_1d.append(np.concatenate(ws))

    gx, gy, gz = np.meshgrid(*nodes_1d, indexing="ij")
    points = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    wx, wy, wz = np.meshgrid(*weights_1d, indexing="ij")
    weights = (wx * wy * wz).ravel()
    return points, weights
