"""Mesh-free flow approximation by superposed exterior sphere solutions.

Each sphere carries the free-space rigid-sphere flow (Stokeslet plus
potential dipole) scaled to its radius; strengths are adjusted by Jacobi
sweeps so every sphere's surface velocity matches its rigid velocity
against the background flow and all other spheres' fields.  The sphere
fields alone leave a nonzero trace on the box walls; ``solve_mor_walled``
cancels it by alternating sweeps with coarse grid Stokes corrections,
while plain ``solve_mor`` leaves the walls to the supplied background.
"""

from __future__ import annotations

import json

import numpy as np

from . import annulus
from .cloud import ParticleCloud, validate_cloud
from .quadrature import sphere_rule

__all__ = [
    "MoRSolution",
    "ReflectionError",
    "solve_mor",
    "solve_mor_walled",
    "evaluate_u_bar",
    "drag_check",
    "save_solution",
    "load_solution",
]


class ReflectionError(RuntimeError):
    """Raised when the reflection iteration diverges."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


# 26-point surface sample: face, edge, and corner directions of the cube
def _sample_directions() -> np.ndarray:
    dirs = []
    for ix in (-1, 0, 1):
        for iy in (-1, 0, 1):
            for iz in (-1, 0, 1):
                if ix == iy == iz == 0:
                    continue
                v = np.array([ix, iy, iz], dtype=float)
                dirs.append(v / np.linalg.norm(v))
    return np.array(dirs)


_DIRS26 = _sample_directions()

# free-space rigid-sphere kernel coefficients (unit radius)
_FREE = annulus.solve_coefficients(annulus.INFINITE)


class MoRSolution:
    """Converged (or best-effort) strengths of the reflection iteration."""

    def __init__(self, cloud: ParticleCloud, strengths, background,
                 reflections: int, mismatch: float, history):
        self.cloud = cloud
        self.strengths = np.asarray(strengths, dtype=float)
        self.background = background
        self.reflections = int(reflections)
        self.mismatch = float(mismatch)
        self.history = list(history)

    def __repr__(self):
        return (f"MoRSolution(n={self.cloud.n}, reflections={self.reflections}, "
                f"mismatch={self.mismatch:.3e})")


def _sphere_fields_at(cloud: ParticleCloud, strengths, pts,
                      exclude: int = -1) -> np.ndarray:
    """Sum of all spheres' free-space fields at given points.

    Points inside a sphere's core get that sphere's rigid value from the
    kernel itself; ``exclude`` skips one sphere (its own surface).
    """
    out = np.zeros_like(pts)
    eps = cloud.eps
    for k in range(cloud.n):
        if k == exclude:
            continue
        rel = (pts - cloud.positions[k]) / eps
        out += annulus.eval_velocity(_FREE, strengths[k], rel)
    return out


def solve_mor(cloud: ParticleCloud, background, tol: float = 1e-3,
              max_reflections: int = 30) -> MoRSolution:
    """Fix the per-sphere strengths by Jacobi reflection sweeps.

    Each sweep sets strength_k = v_k - mean over 26 surface samples of
    (other spheres' fields + background); the mismatch is the largest
    surface-velocity error across spheres, measured on the same samples.
    Raises ReflectionError if the mismatch grows three sweeps in a row.
    """
    report = validate_cloud(cloud)
    if not report:
        bad = [k for k, c in report.checks.items() if not c["ok"]]
        raise ValueError(f"reflection solve needs a valid cloud: {bad}")
    if tol <= 0:
        raise ValueError("tol must be positive")

    eps = cloud.eps
    n = cloud.n
    surf = cloud.positions[:, None, :] + eps * _DIRS26[None, :, :]  # (n, 26, 3)
    flat = surf.reshape(-1, 3)
    bg = np.atleast_2d(np.asarray(background(flat), dtype=float)) \
        .reshape(n, len(_DIRS26), 3)

    strengths = cloud.velocities.copy()
    history = []
    best = None
    for sweep in range(1, max_reflections + 1):
        total = _sphere_fields_at(cloud, strengths, flat) \
            .reshape(n, len(_DIRS26), 3)
        # each sphere's own field equals its strength on its own surface,
        # so the other-sphere contribution is the total minus that value
        others = total - strengths[:, None, :]
        surface_error = total + bg - cloud.velocities[:, None, :]
        mismatch = float(np.abs(surface_error).max())
        new = cloud.velocities - (others + bg).mean(axis=1)
        history.append(mismatch)
        if best is None or mismatch <= best[0]:
            best = (mismatch, strengths.copy(), sweep)
        if mismatch < tol:
            break
        if len(history) >= 4 and all(
                history[-i] > history[-i - 1] for i in (1, 2, 3)):
            raise ReflectionError(
                f"reflection mismatch grew for 3 sweeps: {history[-4:]}",
                history)
        # the mean-value correction cannot beat the O(eps^2/d^2) surface
        # variation of the neighbour fields; stop once progress stalls
        if sweep - best[2] >= 3:
            break
        strengths = new
    mismatch, strengths, sweep = best
    return MoRSolution(cloud, strengths, background, sweep, mismatch, history)


def solve_mor_walled(cloud: ParticleCloud, g, cfg, nu: float = 1.0,
                     tol: float = 1e-3, max_reflections: int = 30,
                     wall_rounds: int = 10, wall_tol: float = 5e-3,
                     background=None) -> MoRSolution:
    """Reflection solve with the box walls enforced by grid corrections.

    The free-space sphere fields violate the wall no-slip condition by an
    O(1) amount once N*eps = 1 (the tails act like a single-layer force of
    total weight sum 6 pi eps s_k), so the iteration alternates sphere
    sweeps with a coarse grid Stokes solve whose wall velocity cancels the
    current sphere-field trace.  ``background`` may pass a precomputed
    homogeneous box flow (a StaggeredField) to avoid re-solving it.

    The returned solution's ``background`` evaluates the homogeneous flow
    plus the final wall correction, so ``evaluate_u_bar`` needs no change;
    ``wall_rounds_used`` and ``wall_change`` are attached as attributes.
    """
    from . import grid as grid_mod

    domain = cloud.domain
    if background is None:
        background = grid_mod.solve_stokes(domain, g, cfg, nu=nu)
    bg0 = background.interpolate

    correction = None
    sol = None
    prev = None
    rounds = 0
    change = np.inf
    for rounds in range(1, wall_rounds + 1):
        if correction is None:
            bg_eval = bg0
        else:
            corr = correction.interpolate

            def bg_eval(pts, corr=corr):
                return bg0(pts) + corr(pts)

        sol = solve_mor(cloud, bg_eval, tol=tol,
                        max_reflections=max_reflections)
        strengths = sol.strengths

        if prev is not None:
            change = float(np.abs(strengths - prev).max())
            if change < wall_tol:
                break
        prev = strengths.copy()

        def wall_data(pts, s=strengths):
            return -_sphere_fields_at(cloud, s, np.atleast_2d(pts))

        correction = grid_mod.solve_stokes(
            domain, lambda pts: np.zeros_like(np.atleast_2d(pts)), cfg,
            nu=nu, wall_velocity=wall_data)

    sol.wall_rounds_used = rounds
    sol.wall_change = change
    return sol


def evaluate_u_bar(sol: MoRSolution, pts) -> np.ndarray:
    """Extended velocity field: superposition outside the spheres, the
    rigid particle velocity inside each ball."""
    pts = np.asarray(pts, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    cloud = sol.cloud
    out = np.atleast_2d(np.asarray(sol.background(pts), dtype=float)).copy()
    out = np.broadcast_to(out, pts.shape).copy()
    dist, idx = cloud.tree().query(pts)
    inside = dist <= cloud.eps
    if np.any(~inside):
        out[~inside] += _sphere_fields_at(cloud, sol.strengths, pts[~inside])
    out[inside] = cloud.velocities[idx[inside]]
    return out[0] if single else out


def drag_check(sol: MoRSolution, k: int, n_theta: int = 24,
               n_phi: int = 48) -> np.ndarray:
    """Total traction force of sphere k's own field over its surface.

    For strength s the exact value is -6 pi eps nu s with nu = 1.
    """
    cloud = sol.cloud
    omega, wts = sphere_rule(n_theta, n_phi)
    # scaled traction t(x) = T(x/eps)/eps; the surface element contributes
    # eps**2, so the force is eps times the unit-sphere integral
    t = annulus.traction(_FREE, sol.strengths[k], omega)
    return cloud.eps * (wts[:, None] * t).sum(axis=0)


def save_solution(sol: MoRSolution, path: str, cloud_path: str = "") -> None:
    """Dump strengths and iteration metadata as JSON."""
    data = {
        "cloud_file": cloud_path,
        "eps": sol.cloud.eps,
        "strengths": sol.strengths.tolist(),
        "reflections": sol.reflections,
        "mismatch": sol.mismatch,
        "history": sol.history,
    }
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1)


def load_solution(path: str, cloud: ParticleCloud,
                  background=None) -> MoRSolution:
    """Rebuild a solution dump against its cloud (and a background field)."""
    with open(path) as fh:
        data = json.load(fh)
    if abs(data["eps"] - cloud.eps) > 1e-12:
        raise ValueError("solution dump does not match the supplied cloud")
    if background is None:
        def background(pts):
            return np.zeros_like(np.atleast_2d(pts))
    return MoRSolution(cloud, np.asarray(data["strengths"]), background,
                       data["reflections"], data["mismatch"], data["history"])
