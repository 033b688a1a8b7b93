"""Smooth scalar/vector fields with analytic gradients, used as test data.

Vector fields carry an optional closed-form gradient so that pairings and
Green-identity checks never rely on finite differences of the test data.
Fields built from sympy expressions get exact gradients via lambdify.
"""

from __future__ import annotations

import numpy as np
import sympy as sp

__all__ = [
    "VectorField",
    "constant_field",
    "from_sympy",
    "solenoidal_field",
    "polynomial_field",
    "test_field_dictionary",
    "smoothstep",
    "box_taper",
]

_XYZ = sp.symbols("x y z")


class VectorField:
    """Vector field ``value: (M, 3) -> (M, 3)`` with optional exact gradient.

    The gradient convention is ``grad[m, i, j] = d_i f_j`` at point m.
    """

    def __init__(self, value, grad=None, name: str = ""):
        self._value = value
        self._grad = grad
        self.name = name

    def __call__(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return self._value(pts)

    def grad(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self._grad is not None:
            return self._grad(pts)
        # central differences as a fallback for fields without closed form
        h = 1e-6
        out = np.zeros(pts.shape[:1] + (3, 3))
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            out[:, i, :] = (self(pts + e) - self(pts - e)) / (2.0 * h)
        return out

    def __repr__(self):
        return f"VectorField({self.name or 'anonymous'})"


def constant_field(vec, name: str = "") -> VectorField:
    vec = np.asarray(vec, dtype=float)

    def value(pts):
        return np.broadcast_to(vec, pts.shape).copy()

    def grad(pts):
        return np.zeros(pts.shape[:1] + (3, 3))

    return VectorField(value, grad, name or f"const{tuple(vec)}")


def from_sympy(exprs, name: str = "") -> VectorField:
    """Build a VectorField from three sympy expressions in x, y, z."""
    exprs = [sp.sympify(e) for e in exprs]
    f = sp.lambdify(_XYZ, exprs, modules="numpy")
    grads = [[sp.diff(e, s) for e in exprs] for s in _XYZ]  # grads[i][j] = d_i f_j
    g = sp.lambdify(_XYZ, grads, modules="numpy")

    def value(pts):
        cols = f(pts[:, 0], pts[:, 1], pts[:, 2])
        return np.stack([np.broadcast_to(c, pts.shape[:1]) for c in cols], axis=-1)

    def grad(pts):
        rows = g(pts[:, 0], pts[:, 1], pts[:, 2])
        out = np.empty(pts.shape[:1] + (3, 3))
        for i in range(3):
            for j in range(3):
                out[:, i, j] = np.broadcast_to(rows[i][j], pts.shape[:1])
        return out

    return VectorField(value, grad, name)


def polynomial_field(coeffs, name: str = "poly") -> VectorField:
    """Low-order polynomial field; ``coeffs`` is a (3, 4) array for
    components ``c0 + c1*x + c2*y + c3*z``."""
    coeffs = np.asarray(coeffs, dtype=float)
    x, y, z = _XYZ
    exprs = [c[0] + c[1] * x + c[2] * y + c[3] * z for c in coeffs]
    return from_sympy(exprs, name)


def solenoidal_field(corner, sides, amplitude: float = 1.0,
                     name: str = "solenoidal") -> VectorField:
    """Divergence-free field vanishing (with tangential components) on the
    box boundary: the curl of a sin^2-bump vector potential."""
    corner = np.asarray(corner, dtype=float)
    sides = np.asarray(sides, dtype=float)
    x, y, z = _XYZ
    chi = [sp.sin(sp.pi * (s - c) / L) ** 2 for s, c, L in zip(_XYZ, corner, sides)]
    a3 = amplitude * chi[0] * chi[1] * chi[2]
    a1 = amplitude * chi[0] * chi[1] * chi[2]
    # curl of (a1, 0, a3)
    exprs = [sp.diff(a3, y), sp.diff(a1, z) - sp.diff(a3, x), -sp.diff(a1, y)]
    return from_sympy(exprs, name)


def test_field_dictionary(corner, sides) -> list:
    """Fixed dictionary of five smooth (G, phi) test pairs on a box."""
    corner = np.asarray(corner, dtype=float)
    sides = np.asarray(sides, dtype=float)
    cx, cy, cz = corner + 0.5 * sides
    x, y, z = _XYZ
    pairs = [
        (constant_field([1.0, 0.0, 0.0], "e1"), constant_field([1.0, 1.0, 1.0], "ones")),
        (constant_field([0.0, 0.5, 1.0], "const"),
         from_sympy([x - cx, y - cy, z - cz], "linear")),
        (from_sympy([y - cy, z - cz, x - cx], "rotated-linear"),
         from_sympy([1 + (x - cx) * (y - cy), (z - cz) ** 2, 2 - (x - cx)], "quad")),
        (from_sympy([(x - cx) ** 2, 1.0, (y - cy) * (z - cz)], "quad-G"),
         from_sympy([sp.sin(sp.pi * (x - cx) / sides[0]),
                     sp.cos(sp.pi * (y - cy) / sides[1]), 1.0], "trig")),
        (from_sympy([sp.cos(sp.pi * (z - cz) / sides[2]), (x - cx), 1.0], "mixed-G"),
         from_sympy([(y - cy), sp.sin(sp.pi * (x - cx) / sides[0]), (z - cz) ** 2], "mixed")),
    ]
    return pairs


def smoothstep(t):
    """C^2 polynomial step: 0 for t<=0, 1 for t>=1, 6t^5-15t^4+10t^3 between."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return t**3 * (10.0 + t * (-15.0 + 6.0 * t))


def box_taper(pts, corner, sides, width: float):
    """Product taper: 1 in the box interior, smoothly 0 at the walls."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    corner = np.asarray(corner, dtype=float)
    sides = np.asarray(sides, dtype=float)
    out = np.ones(pts.shape[0])
    for axis in range(3):
        lo = (pts[:, axis] - corner[axis]) / width
        hi = (corner[axis] + sides[axis] - pts[:, axis]) / width
        out *= smoothstep(lo) * smoothstep(hi)
    return out
