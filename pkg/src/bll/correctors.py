"""Corrector fields glued from per-sphere annulus solutions, and the two
limit pairings that together produce the volumetric drag source.

Each particle carries the scaled annulus flow matching its velocity on the
sphere of radius eps and vanishing at radius eps**(1/3).  A valid cloud
keeps these shells disjoint, so the glued field is well defined, equals the
particle data inside the small spheres, and vanishes outside every shell.
"""

from __future__ import annotations

import numpy as np

from . import annulus
from .cloud import ParticleCloud, validate_cloud
from .quadrature import sphere_rule

__all__ = [
    "CorrectorField",
    "eval_corrector",
    "corrector_l2_norm",
    "corrector_h1_seminorm",
    "brinkman_source_pairing",
    "friction_pairing",
]


class CorrectorField:
    """Sum of scaled annulus flows, one per particle.

    Parameters
    ----------
    cloud : ParticleCloud
        Valid particle configuration (validated here).
    data : None or callable
        None assigns each sphere its particle velocity v_k.  A callable
        w(points) -> (M, 3) assigns the sampled values w(x_k) instead,
        giving the leading part of the test-function corrector.
    """

    def __init__(self, cloud: ParticleCloud, data=None):
        report = validate_cloud(cloud)
        if not report:
            bad = [k for k, c in report.checks.items() if not c["ok"]]
            raise ValueError(f"corrector needs a valid cloud; failing: {bad}")
        self.cloud = cloud
        self.scaled = annulus.scaled_coefficients(cloud.eps)
        if data is None:
            self.values = cloud.velocities.copy()
            self.kind = "velocity"
        else:
            self.values = np.atleast_2d(np.asarray(data(cloud.positions),
                                                   dtype=float))
            self.kind = "sampled"

    def __call__(self, x):
        return eval_corrector(self, x)


def eval_corrector(field: CorrectorField, x) -> np.ndarray:
    """Evaluate the glued corrector at one or many points.

    At most one per-sphere term is nonzero at any point (disjoint shells),
    so a nearest-neighbour lookup suffices.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    cloud = field.cloud
    dist, idx = cloud.tree().query(pts)
    out = np.zeros_like(pts)
    active = dist < cloud.r_sep
    if np.any(active):
        rel = pts[active] - cloud.positions[idx[active]]
        vals = field.values[idx[active]]
        # group by particle so each annulus evaluation is vectorized
        for k in np.unique(idx[active]):
            sel = idx[active] == k
            loc = np.where(active)[0][sel]
            out[loc] = annulus.eval_velocity(field.scaled, field.values[k],
                                             rel[sel])
        del vals
    return out[0] if single else out


def corrector_l2_norm(field: CorrectorField) -> float:
    """Exact squared L2 norm: sum of disjoint per-sphere closed forms
    (annular integral plus the rigid core contribution)."""
    eps = field.cloud.eps
    total = 0.0
    for val in field.values:
        total += annulus.closed_form_norms(eps, val, val)["l2_phi"]
    return total


def corrector_h1_seminorm(field: CorrectorField) -> float:
    """Exact squared H1 seminorm (gradient energy), summed per sphere."""
    eps = field.cloud.eps
    total = 0.0
    for val in field.values:
        total += annulus.closed_form_norms(eps, val, val)["h1_phi"]
    return total


def brinkman_source_pairing(cloud: ParticleCloud, w, moments=None,
                            quadrature=None) -> dict:
    """Gradient pairing of the velocity corrector with a smooth field w.

    Returns the exact per-sphere closed-form sum, which tends to
    6*pi * integral of j . w as the cloud refines.  When ``moments`` (with
    its density rho and current j) and a volume quadrature (points,
    weights) are supplied, the reference integral is evaluated too.
    """
    vals = np.atleast_2d(np.asarray(w(cloud.positions), dtype=float))
    total = 0.0
    for vk, wk in zip(cloud.velocities, vals):
        total += annulus.closed_form_norms(cloud.eps, vk, wk)["interaction"]
    out = {"pairing": float(total)}
    if moments is not None and quadrature is not None:
        pts, wts = quadrature
        jw = np.sum(np.asarray(moments.j(pts), dtype=float)
                    * np.atleast_2d(np.asarray(w(pts), dtype=float)), axis=1)
        out["limit"] = float(6.0 * np.pi * (wts @ jw))
    return out


def friction_pairing(cloud: ParticleCloud, u_eval, w, moments=None,
                     quadrature=None, n_theta: int = 12, n_phi: int = 24) -> dict:
    """Leading traction of the test corrector paired with a velocity field.

    Per sphere, integrates over the separation sphere of radius
    r = eps**(1/3) the kernel applied to w(x_k),

        (eps / r**2) * [-(3/4)(I + 3 w w^T) + 3 (I - 3 w w^T)] w(x_k) . U,

    with w w^T the radial projector; the sum tends to
    -6*pi * integral of rho * w . U.  The dropped finite-size remainder is
    O(eps**2 / r**3) = O(eps) per sphere and is reported as ``remainder``.
    """
    omega, wts = sphere_rule(n_theta, n_phi)  # unit sphere, weights sum 4*pi
    r = cloud.r_sep
    eps = cloud.eps
    wk_all = np.atleast_2d(np.asarray(w(cloud.positions), dtype=float))
    total = 0.0
    for xk, wk in zip(cloud.positions, wk_all):
        surf = xk + r * omega
        u = np.atleast_2d(np.asarray(u_eval(surf), dtype=float))
        w_dot_om = omega @ wk
        u_dot_om = np.sum(u * omega, axis=1)
        # -(3/4)(I+3P)w . u + 3(I-3P)w . u with P the projector on omega
        kern = (-0.75 * (u @ wk + 3.0 * w_dot_om * u_dot_om)
                + 3.0 * (u @ wk - 3.0 * w_dot_om * u_dot_om))
        # surface element r**2 * dS(omega); prefactor eps / r**2
        total += eps * float(wts @ kern)
    out = {"pairing": float(total), "remainder": cloud.n * eps**2 / r**3}
    if moments is not None and quadrature is not None:
        pts, wts_v = quadrature
        rho = np.asarray(moments.rho(pts), dtype=float)
        wu = np.sum(np.atleast_2d(np.asarray(w(pts), dtype=float))
                    * np.atleast_2d(np.asarray(u_eval(pts), dtype=float)), axis=1)
        out["limit"] = float(-6.0 * np.pi * (wts_v @ (rho * wu)))
    return out
