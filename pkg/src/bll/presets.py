"""Named closed-form presets for density, current, and forcing fields.

All presets are smooth on the closed box and vanish (where stated) at the
walls via a quintic taper, so they satisfy the continuity hypotheses of
the limit problem and have accurately computable quadratures.
"""

from __future__ import annotations

import numpy as np

from .cloud import Box, MomentField
from .fields import VectorField, box_taper, constant_field

__all__ = [
    "taper_width",
    "rho_preset",
    "j_preset",
    "g_preset",
    "moment_preset",
    "RHO_PRESETS",
    "J_PRESETS",
    "G_PRESETS",
]


def taper_width(domain: Box) -> float:
    """Default taper width: a fifth of the shortest side, so the flat core
    still covers the particle lattice."""
    return min(domain.sides) / 5.0


def _tapered_uniform_rho(domain: Box):
    """Uniform density tapered to zero at the walls, normalized to mass 1."""
    w = taper_width(domain)
    # closed-form mass of the product taper: each axis contributes
    # (L - 2w) + 2*(w/2) = L - w since the quintic step integrates to 1/2
    mass = float(np.prod([s - w for s in domain.sides]))

    def rho(pts):
        return box_taper(pts, domain.corner, domain.sides, w) / mass

    return rho


def rho_preset(name: str, domain: Box):
    """Scalar density presets keyed by name."""
    if name == "uniform":
        return _tapered_uniform_rho(domain)
    if name == "tilted":
        base = _tapered_uniform_rho(domain)
        lo = np.asarray(domain.corner)
        sides = np.asarray(domain.sides)

        def rho(pts):
            pts = np.atleast_2d(np.asarray(pts, dtype=float))
            t = (pts[:, 2] - lo[2]) / sides[2]
            return base(pts) * (0.75 + 0.5 * t)

        return rho
    raise KeyError(f"unknown rho preset {name!r}")


def j_preset(name: str, domain: Box) -> VectorField:
    """Current-density presets; all proportional to a rho preset so that
    v = j/rho stays bounded."""
    if name in ("uniform-z", "tilted-z"):
        rho = rho_preset("uniform" if name == "uniform-z" else "tilted", domain)

        def value(pts):
            r = rho(pts)
            out = np.zeros(pts.shape)
            out[:, 2] = r
            return out

        return VectorField(value, None, name)
    if name == "zero":
        return constant_field([0.0, 0.0, 0.0], "zero")
    raise KeyError(f"unknown j preset {name!r}")


def g_preset(name: str, domain: Box) -> VectorField:
    """Forcing presets (force divided by viscosity in the Stokes form)."""
    if name == "down-z":
        w = taper_width(domain)

        def value(pts):
            t = box_taper(pts, domain.corner, domain.sides, w)
            out = np.zeros(pts.shape)
            out[:, 2] = -t
            return out

        return VectorField(value, None, name)
    if name == "zero":
        return constant_field([0.0, 0.0, 0.0], "zero")
    raise KeyError(f"unknown g preset {name!r}")


RHO_PRESETS = ("uniform", "tilted")
J_PRESETS = ("uniform-z", "tilted-z", "zero")
G_PRESETS = ("down-z", "zero")


def moment_preset(rho_name: str, j_name: str, domain: Box) -> MomentField:
    """Bundle named rho and j presets into a MomentField."""
    rho = rho_preset(rho_name, domain)
    j = j_preset(j_name, domain)
    return MomentField(rho=rho, j=lambda pts: j(pts), name=f"{rho_name}/{j_name}")
