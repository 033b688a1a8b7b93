"""Exact Stokes flow around a unit sphere: annulus and free-space solutions.

All objects here are closed forms: the velocity/pressure of the flow that
equals ``v`` on the inner sphere and vanishes on an outer sphere of radius
``R`` (or at infinity), its gradient and surface traction, and the exact
radial integrals behind the L2/H1 norms and the drag-like interaction
integral.  Everything is a pure function of immutable inputs.

Conventions
-----------
* ``omega = x / |x|`` and ``P v = (omega . v) omega`` is the projection on
  the radial line.
* Velocity profiles: ``u = A(r) (v - Pv) + B(r) Pv`` with
  ``A(r) = -(4 a r^2 + 2 b + c/r - d/r^3)`` and
  ``B(r) = -2 (a r^2 + b + c/r + d/r^3)``.
* Gradients are stored with the derivative index first:
  ``grad[i, j] = d_i u_j``.
* The pressure additive constant is fixed to 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "INFINITE",
    "AnnulusCoefficients",
    "ScaledCoefficients",
    "RadialProfiles",
    "solve_coefficients",
    "scaled_coefficients",
    "eval_velocity",
    "eval_pressure",
    "eval_grad",
    "traction",
    "closed_form_norms",
    "pair_gradient_with_field",
    "radial_profiles",
]

INFINITE = math.inf


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


@dataclass(frozen=True)
class AnnulusCoefficients:
    """Constants of the annulus solution with inner radius 1, outer radius R.

    ``R = math.inf`` selects the free-space solution (decay at infinity),
    for which ``(alpha, beta, gamma, delta) = (0, 0, -3/4, 1/4)``.
    """

    R: float
    alpha: float
    beta: float
    gamma: float
    delta: float

    @property
    def infinite(self) -> bool:
        return math.isinf(self.R)


@dataclass(frozen=True)
class ScaledCoefficients:
    """Annulus constants rescaled to inner radius eps, outer radius eps**(1/3).

    The units make the velocity formula dimensionally consistent on the
    physical annulus: alpha1 ~ 1/length^2, beta1 dimensionless,
    gamma1 ~ length, delta1 ~ length^3.
    """

    eps: float
    base: AnnulusCoefficients
    alpha1: float
    beta1: float
    gamma1: float
    delta1: float

    @property
    def r_inner(self) -> float:
        return self.eps

    @property
    def r_outer(self) -> float:
        return self.eps ** (1.0 / 3.0)


@dataclass(frozen=True)
class RadialProfiles:
    """Radial velocity profiles A, B and gradient profiles a, b.

    ``a(r) = 6 (alpha1 r + delta1 / r^4)`` and
    ``b(r) = 2 alpha1 r - gamma1 / r^2 - 3 delta1 / r^4``.
    """

    coeffs: ScaledCoefficients

    def A(self, r):
        c = self.coeffs
        r = np.asarray(r, dtype=float)
        return -(4.0 * c.alpha1 * r**2 + 2.0 * c.beta1 + c.gamma1 / r - c.delta1 / r**3)

    def B(self, r):
        c = self.coeffs
        r = np.asarray(r, dtype=float)
        return -2.0 * (c.alpha1 * r**2 + c.beta1 + c.gamma1 / r + c.delta1 / r**3)

    def a(self, r):
        c = self.coeffs
        r = np.asarray(r, dtype=float)
        return 6.0 * (c.alpha1 * r + c.delta1 / r**4)

    def b(self, r):
        c = self.coeffs
        r = np.asarray(r, dtype=float)
        return 2.0 * c.alpha1 * r - c.gamma1 / r**2 - 3.0 * c.delta1 / r**4


def radial_profiles(coeffs: ScaledCoefficients) -> RadialProfiles:
    return RadialProfiles(coeffs)


def solve_coefficients(R: float) -> AnnulusCoefficients:
    """Solve the 4-constant system for the annulus with outer radius R.

    The 2x2 system for (alpha, beta) is
        3 (R^5 - 1) alpha + (R^3 - 1) beta = 1/2
        5 (R^3 - 1) alpha + 3 (R - 1) beta = 3/2
    and (gamma, delta) follow by back-substitution:
        delta = (3/2) alpha + (1/2) beta + 1/4
        gamma = -(5/2) alpha - (3/2) beta - 3/4.
    """
    if math.isinf(R):
        return AnnulusCoefficients(R=INFINITE, alpha=0.0, beta=0.0,
                                   gamma=-0.75, delta=0.25)
    if not R > 1.0:
        raise DomainError(f"outer radius must satisfy R > 1, got {R}")
    M = np.array([[3.0 * (R**5 - 1.0), R**3 - 1.0],
                  [5.0 * (R**3 - 1.0), 3.0 * (R - 1.0)]])
    rhs = np.array([0.5, 1.5])
    det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    assert det != 0.0, "2x2 system singular; cannot happen for R > 1"
    alpha, beta = np.linalg.solve(M, rhs)
    delta = 1.5 * alpha + 0.5 * beta + 0.25
    gamma = -2.5 * alpha - 1.5 * beta - 0.75
    return AnnulusCoefficients(R=float(R), alpha=float(alpha), beta=float(beta),
                               gamma=float(gamma), delta=float(delta))


def scaled_coefficients(eps: float) -> ScaledCoefficients:
    """Rescale the annulus constants to inner radius eps, outer eps**(1/3).

    Substituting x/eps into the unit-annulus velocity with R = eps**(-2/3)
    fixes the scaling: alpha1 = alpha/eps^2, beta1 = beta, gamma1 = gamma*eps,
    delta1 = delta*eps^3.  The derivation is validated numerically against
    the asymptotics alpha1 -> -3/8, beta1 ~ (9/8) eps^(2/3),
    gamma1 ~ -(3/4) eps, delta1 ~ (1/4) eps^3.
    """
    if not 0.0 < eps < 1.0:
        raise DomainError(f"sphere radius must satisfy 0 < eps < 1, got {eps}")
    base = solve_coefficients(eps ** (-2.0 / 3.0))
    return ScaledCoefficients(
        eps=float(eps),
        base=base,
        alpha1=base.alpha / eps**2,
        beta1=base.beta,
        gamma1=base.gamma * eps,
        delta1=base.delta * eps**3,
    )


def _abcd(coeffs):
    """Raw (a, b, c, d) profile constants and the (inner, outer) radii."""
    if isinstance(coeffs, ScaledCoefficients):
        return ((coeffs.alpha1, coeffs.beta1, coeffs.gamma1, coeffs.delta1),
                coeffs.r_inner, coeffs.r_outer)
    return ((coeffs.alpha, coeffs.beta, coeffs.gamma, coeffs.delta),
            1.0, coeffs.R)


def eval_velocity(coeffs, v, x) -> np.ndarray:
    """Velocity of the annulus/free-space solution at one or many points.

    ``x`` may have shape (3,) or (..., 3).  Returns ``v`` inside the inner
    ball, 0 outside the outer ball (finite R), and the closed form
    ``A(r)(v - Pv) + B(r) Pv`` in between.
    """
    (ca, cb, cg, cd), r_in, r_out = _abcd(coeffs)
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    r = np.linalg.norm(pts, axis=-1)
    infinite = math.isinf(r_out)
    if infinite and np.any(r == 0.0):
        raise DomainError("x = 0 is outside the free-space solution domain")

    out = np.zeros_like(pts)
    inner = r < r_in
    out[inner] = v

    mid = ~inner if infinite else (~inner) & (r <= r_out)
    if np.any(mid):
        rm = r[mid]
        omega = pts[mid] / rm[:, None]
        vdot = omega @ v
        A = -(4.0 * ca * rm**2 + 2.0 * cb + cg / rm - cd / rm**3)
        B = -2.0 * (ca * rm**2 + cb + cg / rm + cd / rm**3)
        pv = vdot[:, None] * omega
        out[mid] = A[:, None] * (v - pv) + B[:, None] * pv
    return out[0] if single else out.reshape(x.shape)


def eval_pressure(coeffs, v, x) -> float | np.ndarray:
    """Pressure of the solution, additive constant fixed to 0.

    Unit annulus: ``Pi = -[20 alpha r - 3/(2 r^2) - (5 alpha + 3 beta)/r^2]
    (omega . v)`` (free space reduces to ``3 (omega . v) / (2 r^2)``).
    Scaled coefficients delegate via ``p(x) = Pi(x/eps) / eps``.
    """
    if isinstance(coeffs, ScaledCoefficients):
        return eval_pressure(coeffs.base, v, np.asarray(x, dtype=float) / coeffs.eps) / coeffs.eps
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    r = np.linalg.norm(pts, axis=-1)
    if np.any(r == 0.0):
        raise DomainError("pressure undefined at x = 0")
    vdot = (pts @ v) / r
    p = -(20.0 * coeffs.alpha * r - 1.5 / r**2
          - (5.0 * coeffs.alpha + 3.0 * coeffs.beta) / r**2) * vdot
    return float(p[0]) if single else p.reshape(x.shape[:-1])


def eval_grad(scaled: ScaledCoefficients, v, x) -> np.ndarray:
    """Velocity gradient on the physical annulus, ``grad[i, j] = d_i u_j``.

    Assembled from the decomposition
    ``grad = -(a + b) omega (x) (v - Pv) + b [(v - Pv) (x) omega
    + (v . omega)(I - 3 omega (x) omega)]``.
    """
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    r = np.linalg.norm(pts, axis=-1)
    if np.any(r < scaled.r_inner - 1e-15) or np.any(r > scaled.r_outer + 1e-15):
        raise DomainError("gradient only defined on the annulus eps <= |x| <= eps**(1/3)")
    prof = RadialProfiles(scaled)
    a, b = prof.a(r), prof.b(r)
    omega = pts / r[:, None]
    vdot = omega @ v
    u_t = v[None, :] - vdot[:, None] * omega  # (I - P) v

    eye = np.eye(3)
    oo = omega[:, :, None] * omega[:, None, :]
    grad = (-(a + b)[:, None, None] * omega[:, :, None] * u_t[:, None, :]
            + b[:, None, None] * (u_t[:, :, None] * omega[:, None, :]
                                  + vdot[:, None, None] * (eye[None] - 3.0 * oo)))
    return grad[0] if single else grad.reshape(x.shape[:-1] + (3, 3))


def traction(coeffs, v, x) -> np.ndarray:
    """Traction ``omega . grad(u) - p omega`` of the solution at x.

    Free space: ``-(3/4)(I + 3P) v / r^2 - (3/4)(I - 3P) v / r^4``.
    Finite R adds the correction ``-8 alpha(R) r (I - 3P) v``; the
    O(1/R)/r^2 remainder is not modeled.  Scaled coefficients delegate via
    ``t(x) = T(x/eps) / eps``.
    """
    if isinstance(coeffs, ScaledCoefficients):
        return traction(coeffs.base, v, np.asarray(x, dtype=float) / coeffs.eps) / coeffs.eps
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    r = np.linalg.norm(pts, axis=-1)
    if np.any(r == 0.0):
        raise DomainError("traction undefined at x = 0")
    omega = pts / r[:, None]
    pv = (omega @ v)[:, None] * omega
    t = (-0.75 * (v + 3.0 * pv) / r[:, None]**2
         - 0.75 * (v - 3.0 * pv) / r[:, None]**4)
    if not coeffs.infinite:
        t = t - 8.0 * coeffs.alpha * r[:, None] * (v - 3.0 * pv)
    return t[0] if single else t.reshape(x.shape)


# --- exact radial integrals ------------------------------------------------
#
# The radial profiles are finite sums c_k r^k; products of them are too, so
# every norm integral has a closed antiderivative (with a log for the 1/r
# term).  These power-dict helpers are the production path; adaptive
# quadrature of the same integrands is the test oracle.

def _series_mul(p: dict, q: dict) -> dict:
    out: dict = {}
    for kp, cp in p.items():
        for kq, cq in q.items():
            out[kp + kq] = out.get(kp + kq, 0.0) + cp * cq
    return out

def _series_scale(p: dict, s: float) -> dict:
    return {k: c * s for k, c in p.items()}

def _series_add(*ps: dict) -> dict:
    out: dict = {}
    for p in ps:
        for k, c in p.items():
            out[k] = out.get(k, 0.0) + c
    return out

def _series_integral(p: dict, r0: float, r1: float) -> float:
    total = 0.0
    for k, c in p.items():
        if k == -1:
            total += c * math.log(r1 / r0)
        else:
            total += c * (r1 ** (k + 1) - r0 ** (k + 1)) / (k + 1)
    return total


def _profile_series(c: ScaledCoefficients):
    A = {2: -4.0 * c.alpha1, 0: -2.0 * c.beta1, -1: -c.gamma1, -3: c.delta1}
    B = {2: -2.0 * c.alpha1, 0: -2.0 * c.beta1, -1: -2.0 * c.gamma1, -3: -2.0 * c.delta1}
    a = {1: 6.0 * c.alpha1, -4: 6.0 * c.delta1}
    b = {1: 2.0 * c.alpha1, -2: -c.gamma1, -4: -3.0 * c.delta1}
    return A, B, a, b


def closed_form_norms(eps: float, v, w) -> dict:
    """Exact values of the per-sphere norm and interaction integrals.

    Returns a dict with

    * ``l2_phi``: squared L2 norm of the corrector built from ``v``
      (annulus integral plus the eps^3 rigid-ball contribution),
      ``(4 pi / 3) |v|^2 (int r^2 (2A^2 + B^2) dr + eps^3)``;
    * ``h1_phi``: squared L2 norm of its gradient,
      ``(16 pi / 3) |v|^2 int [(a+b)^2 + 2 b^2] r^2 dr``;
    * ``interaction``: ``4 pi (v . w) int r^2 F dr`` with
      ``F = (2/3)[(a+b)^2 + b^2] + 2 b^2`` — the gradient-pairing integral
      whose small-eps limit is the Stokes drag ``6 pi eps (v . w)``;
    * ``F_integral``: the bare value of ``int r^2 F dr``.
    """
    if not 0.0 < eps < 1.0:
        raise DomainError(f"sphere radius must satisfy 0 < eps < 1, got {eps}")
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    c = scaled_coefficients(eps)
    r0, r1 = c.r_inner, c.r_outer
    A, B, a, b = _profile_series(c)
    r2 = {2: 1.0}

    l2_int = _series_integral(
        _series_mul(r2, _series_add(_series_scale(_series_mul(A, A), 2.0),
                                    _series_mul(B, B))), r0, r1)
    ab = _series_add(a, b)
    h1_int = _series_integral(
        _series_mul(r2, _series_add(_series_mul(ab, ab),
                                    _series_scale(_series_mul(b, b), 2.0))), r0, r1)
    F = _series_add(_series_scale(_series_add(_series_mul(ab, ab), _series_mul(b, b)),
                                  2.0 / 3.0),
                    _series_scale(_series_mul(b, b), 2.0))
    F_int = _series_integral(_series_mul(r2, F), r0, r1)

    vv = float(v @ v)
    return {
        "l2_phi": (4.0 * math.pi / 3.0) * vv * (l2_int + eps**3),
        "h1_phi": (16.0 * math.pi / 3.0) * vv * h1_int,
        "interaction": 4.0 * math.pi * float(v @ w) * F_int,
        "F_integral": F_int,
    }


def pair_gradient_with_field(scaled: ScaledCoefficients, v, w_value, grad_w, x) -> float:
    """Frobenius pairing ``grad(phi_eps[v]) : grad(w)`` at a point x.

    Closed form in the local gradient G of w (``G[i, j] = d_i w_j``; the
    value ``w_value`` does not enter but is kept for signature symmetry):

        -(a+b) omega.grad(v.w) + b omega.(v.grad w)
        + (v.omega)(a - 3b) omega.(omega.grad w) + b (v.omega) div w
    """
    v = np.asarray(v, dtype=float)
    G = np.asarray(grad_w, dtype=float)
    x = np.asarray(x, dtype=float)
    r = float(np.linalg.norm(x))
    if r < scaled.r_inner - 1e-15 or r > scaled.r_outer + 1e-15:
        raise DomainError("pairing only defined on the annulus eps <= |x| <= eps**(1/3)")
    prof = RadialProfiles(scaled)
    a, b = float(prof.a(r)), float(prof.b(r))
    omega = x / r
    vdot = float(omega @ v)
    return float(
        -(a + b) * (omega @ G @ v)
        + b * (v @ G @ omega)
        + vdot * (a - 3.0 * b) * (omega @ G @ omega)
        + b * vdot * np.trace(G)
    )
