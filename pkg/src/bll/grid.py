"""Staggered-grid (MAC) solvers on a box with no-slip walls.

Covers the plain Stokes problem, the volumetric drag (Brinkman) problem
-nu*lap(U) + 6 pi nu rho U + grad(P) = g + 6 pi nu j, steady Navier-Stokes
by damped Picard iteration, and perforated-domain solves where spheres are
imposed by volume penalization.  Velocity components live on face centers,
pressure on cell centers; the discrete divergence of every returned field
is zero up to the solver tolerance.

The saddle-point system is reduced to a Schur complement in the pressure,
solved by preconditioned conjugate gradients with algebraic-multigrid inner
velocity solves.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field as dfield

import numpy as np
import pyamg
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .cloud import Box, ParticleCloud, validate_cloud

__all__ = [
    "StaggeredField",
    "BrinkmanProblem",
    "SolverConfig",
    "SolverError",
    "solve_brinkman",
    "solve_stokes",
    "solve_perforated",
    "weak_residual",
    "poincare_and_nu0",
    "manufactured_solution",
    "save_snapshot",
    "load_snapshot",
    "probe_line_csv",
]


class SolverError(RuntimeError):
    """Raised when an iterative solve fails to reach its tolerance."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


@dataclass
class SolverConfig:
    """Discretization and iteration parameters.

    ``h`` must divide every domain side.  ``eta`` is the penalization
    strength for perforated solves (default 1e6 * nu / eps**2 chosen at
    solve time when left as None).  ``damping`` applies to the Picard
    update for the advection term.
    """

    h: float
    tolerance: float = 1e-8
    max_iterations: int = 400
    eta: float | None = None
    damping: float = 0.7
    inner_tolerance: float = 1e-10
    picard_max: int = 60


@dataclass
class BrinkmanProblem:
    """Data of the volumetric-drag problem.

    ``rho`` and ``j`` may be None (plain Stokes).  ``g`` maps (M, 3)
    points to (M, 3) force values (force divided by viscosity when nu=1,
    the Stokes-form convention).  ``advection`` switches on the steady
    nonlinear term, handled by damped Picard iteration.
    """

    domain: Box
    g: object
    rho: object = None
    j: object = None
    nu: float = 1.0
    advection: bool = False


class StaggeredField:
    """Velocity on face centers, pressure on cell centers.

    ``u[c]`` has shape n+1 along axis c (all faces, walls included and
    zero for no-slip solves) and n along the other axes; ``p`` has shape
    (nx, ny, nz).
    """

    def __init__(self, domain: Box, h: float, u, p, meta=None):
        self.domain = domain
        self.h = float(h)
        self.u = [np.asarray(a, dtype=float) for a in u]
        self.p = np.asarray(p, dtype=float)
        self.meta = dict(meta or {})

    @property
    def shape(self):
        return self.p.shape

    def face_points(self, c: int) -> np.ndarray:
        """Coordinates of all component-c faces, shape like u[c] + (3,)."""
        lo = np.asarray(self.domain.corner)
        n = self.p.shape
        axes = []
        for a in range(3):
            if a == c:
                axes.append(lo[a] + self.h * np.arange(n[a] + 1))
            else:
                axes.append(lo[a] + self.h * (np.arange(n[a]) + 0.5))
        g = np.meshgrid(*axes, indexing="ij")
        return np.stack(g, axis=-1)

    def center_points(self) -> np.ndarray:
        lo = np.asarray(self.domain.corner)
        n = self.p.shape
        axes = [lo[a] + self.h * (np.arange(n[a]) + 0.5) for a in range(3)]
        g = np.meshgrid(*axes, indexing="ij")
        return np.stack(g, axis=-1)

    def center_velocity(self) -> np.ndarray:
        """Velocity averaged to cell centers, shape (nx, ny, nz, 3)."""
        ux = 0.5 * (self.u[0][1:, :, :] + self.u[0][:-1, :, :])
        uy = 0.5 * (self.u[1][:, 1:, :] + self.u[1][:, :-1, :])
        uz = 0.5 * (self.u[2][:, :, 1:] + self.u[2][:, :, :-1])
        return np.stack([ux, uy, uz], axis=-1)

    def divergence(self) -> np.ndarray:
        """Discrete divergence at cell centers."""
        return (np.diff(self.u[0], axis=0) + np.diff(self.u[1], axis=1)
                + np.diff(self.u[2], axis=2)) / self.h

    def gradient_at_centers(self) -> np.ndarray:
        """grad[.., i, j] = d_i u_j of the center-averaged velocity."""
        uc = self.center_velocity()
        out = np.empty(uc.shape[:3] + (3, 3))
        for j in range(3):
            gj = np.gradient(uc[..., j], self.h, edge_order=2)
            for i in range(3):
                out[..., i, j] = gj[i]
        return out

    def l2_norm(self) -> float:
        uc = self.center_velocity()
        return float(np.sqrt(self.h**3 * np.sum(uc**2)))

    def l4_norm(self) -> float:
        uc = self.center_velocity()
        return float((self.h**3 * np.sum(np.sum(uc**2, axis=-1) ** 2)) ** 0.25)

    def h1_seminorm(self) -> float:
        return float(np.sqrt(self.h**3 * np.sum(self.gradient_at_centers() ** 2)))

    def interpolate(self, pts) -> np.ndarray:
        """Trilinear interpolation of each velocity component at points."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.empty(pts.shape)
        lo = np.asarray(self.domain.corner)
        n = self.p.shape
        for c in range(3):
            offs = np.array([0.5 * self.h] * 3)
            offs[c] = 0.0
            dims = [n[a] + (1 if a == c else 0) for a in range(3)]
            t = (pts - lo - offs) / self.h
            out[:, c] = _trilinear(self.u[c], t, dims)
        return out


def _trilinear(arr, t, dims):
    t = np.clip(t, 0.0, np.asarray(dims, dtype=float) - 1.0 - 1e-12)
    i0 = np.floor(t).astype(int)
    f = t - i0
    val = np.zeros(t.shape[0])
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = (np.where(dx, f[:, 0], 1 - f[:, 0])
                     * np.where(dy, f[:, 1], 1 - f[:, 1])
                     * np.where(dz, f[:, 2], 1 - f[:, 2]))
                val += w * arr[np.minimum(i0[:, 0] + dx, dims[0] - 1),
                               np.minimum(i0[:, 1] + dy, dims[1] - 1),
                               np.minimum(i0[:, 2] + dz, dims[2] - 1)]
    return val


class _MACGrid:
    """Shapes, DOF bookkeeping, and sparse operators for one (domain, h)."""

    def __init__(self, domain: Box, h: float):
        self.domain = domain
        self.h = float(h)
        n = []
        for s in domain.sides:
            m = s / h
            if abs(m - round(m)) > 1e-9:
                raise ValueError(f"h={h} does not divide side {s}")
            n.append(int(round(m)))
        self.n = tuple(n)
        # interior DOF shape per component: n-1 along the normal axis
        self.dof_shapes = [tuple(n[a] - 1 if a == c else n[a]
                                 for a in range(3)) for c in range(3)]
        self.dof_sizes = [int(np.prod(s)) for s in self.dof_shapes]
        self.n_cells = int(np.prod(n))
        self._div = None

    def interior_points(self, c: int) -> np.ndarray:
        lo = np.asarray(self.domain.corner)
        axes = []
        for a in range(3):
            if a == c:
                axes.append(lo[a] + self.h * np.arange(1, self.n[a]))
            else:
                axes.append(lo[a] + self.h * (np.arange(self.n[a]) + 0.5))
        g = np.meshgrid(*axes, indexing="ij")
        return np.stack(g, axis=-1).reshape(-1, 3)

    def _lap1d(self, m: int, normal: bool) -> sps.csr_matrix:
        if normal:
            # Dirichlet: wall faces are known zeros, not unknowns
            main = 2.0 * np.ones(m - 1)
            off = -np.ones(m - 2)
            return sps.diags([off, main, off], [-1, 0, 1]) / self.h**2
        # tangential: mirror ghost across the wall (u_ghost = -u_first)
        main = 2.0 * np.ones(m)
        main[0] = main[-1] = 3.0
        off = -np.ones(m - 1)
        return sps.diags([off, main, off], [-1, 0, 1]) / self.h**2

    def laplacian(self, c: int) -> sps.csr_matrix:
        mats = [self._lap1d(self.n[a], a == c) for a in range(3)]
        eyes = [sps.identity(self.dof_shapes[c][a]) for a in range(3)]
        out = None
        for a in range(3):
            terms = [mats[a] if b == a else eyes[b] for b in range(3)]
            k = sps.kron(sps.kron(terms[0], terms[1]), terms[2])
            out = k if out is None else out + k
        return out.tocsr()

    def divergence_op(self) -> sps.csr_matrix:
        """Maps stacked interior velocity DOFs to cell-centered divergence."""
        if self._div is None:
            blocks = []
            for c in range(3):
                m = self.n[c]
                d = sps.lil_matrix((m, m - 1))
                for i in range(m):
                    if i <= m - 2:
                        d[i, i] = 1.0 / self.h
                    if i >= 1:
                        d[i, i - 1] = -1.0 / self.h
                terms = [d.tocsr() if a == c else sps.identity(self.n[a])
                         for a in range(3)]
                blocks.append(sps.kron(sps.kron(terms[0], terms[1]), terms[2]))
            self._div = sps.hstack(blocks).tocsr()
        return self._div

    def wall_contributions(self, b, nu: float):
        """RHS terms produced by a prescribed wall velocity ``b``.

        Returns (momentum_extra, continuity_rhs): the stencil contributions
        of the known boundary values to each component's momentum equation
        and the wall-flux term of the discrete continuity equation.
        """
        lo = np.asarray(self.domain.corner)
        hi = lo + np.asarray(self.domain.sides)
        h = self.h
        momentum = [np.zeros(self.dof_shapes[c]) for c in range(3)]
        for c in range(3):
            for a in range(3):
                # dof-line coordinates in the wall plane
                axes = []
                for ax in range(3):
                    if ax == a:
                        continue
                    if ax == c:
                        axes.append(lo[ax] + h * np.arange(1, self.n[ax]))
                    else:
                        axes.append(lo[ax] + h * (np.arange(self.n[ax]) + 0.5))
                for side, wall in ((0, lo[a]), (-1, hi[a])):
                    mesh = np.meshgrid(*axes, indexing="ij")
                    pts = np.zeros(mesh[0].shape + (3,))
                    pts[..., a] = wall
                    k = 0
                    for ax in range(3):
                        if ax == a:
                            continue
                        pts[..., ax] = mesh[k]
                        k += 1
                    vals = np.atleast_2d(np.asarray(b(pts.reshape(-1, 3)),
                                                    dtype=float))[:, c]
                    vals = vals.reshape(mesh[0].shape)
                    # normal walls hold the face value itself; tangential
                    # walls enter through the mirror ghost (factor 2)
                    factor = nu / h**2 if a == c else 2.0 * nu / h**2
                    sl = [slice(None)] * 3
                    sl[a] = side
                    momentum[c][tuple(sl)] += factor * vals
        continuity = np.zeros(self.n)
        for a in range(3):
            axes = [lo[ax] + h * (np.arange(self.n[ax]) + 0.5)
                    for ax in range(3)]
            for side, wall, sign in ((0, lo[a], 1.0), (-1, hi[a], -1.0)):
                plane_axes = [axes[ax] for ax in range(3) if ax != a]
                mesh = np.meshgrid(*plane_axes, indexing="ij")
                pts = np.zeros(mesh[0].shape + (3,))
                pts[..., a] = wall
                k = 0
                for ax in range(3):
                    if ax == a:
                        continue
                    pts[..., ax] = mesh[k]
                    k += 1
                vals = np.atleast_2d(np.asarray(b(pts.reshape(-1, 3)),
                                                dtype=float))[:, a]
                sl = [slice(None)] * 3
                sl[a] = side
                continuity[tuple(sl)] += sign / h * vals.reshape(mesh[0].shape)
        return momentum, continuity.reshape(-1)

    def pack(self, arrays) -> np.ndarray:
        """Stack per-component interior-face arrays into one DOF vector."""
        return np.concatenate([np.asarray(a).ravel() for a in arrays])

    def unpack(self, vec: np.ndarray):
        out = []
        start = 0
        for c in range(3):
            out.append(vec[start:start + self.dof_sizes[c]]
                       .reshape(self.dof_shapes[c]))
            start += self.dof_sizes[c]
        return out

    def full_faces(self, interiors, wall_velocity=None):
        """Embed interior DOF arrays into full face arrays.

        Boundary normal faces carry the prescribed wall velocity (zero by
        default).
        """
        lo = np.asarray(self.domain.corner)
        hi = lo + np.asarray(self.domain.sides)
        out = []
        for c in range(3):
            shape = tuple(self.n[a] + (1 if a == c else 0) for a in range(3))
            a = np.zeros(shape)
            sl = [slice(None)] * 3
            sl[c] = slice(1, self.n[c])
            a[tuple(sl)] = interiors[c]
            if wall_velocity is not None:
                axes = [lo[ax] + self.h * (np.arange(self.n[ax]) + 0.5)
                        for ax in range(3)]
                plane_axes = [axes[ax] for ax in range(3) if ax != c]
                mesh = np.meshgrid(*plane_axes, indexing="ij")
                for side, wall in ((0, lo[c]), (-1, hi[c])):
                    pts = np.zeros(mesh[0].shape + (3,))
                    pts[..., c] = wall
                    k = 0
                    for ax in range(3):
                        if ax == c:
                            continue
                        pts[..., ax] = mesh[k]
                        k += 1
                    vals = np.atleast_2d(np.asarray(
                        wall_velocity(pts.reshape(-1, 3)), dtype=float))[:, c]
                    sl[c] = side
                    a[tuple(sl)] = vals.reshape(mesh[0].shape)
                    sl[c] = slice(1, self.n[c])
            out.append(a)
        return out


class _SchurStokesSolver:
    """Pressure Schur-complement CG with AMG velocity solves.

    The velocity operator is nu * lap + diag(coef) per component with
    ``coef`` sampled at the interior faces (zero for plain Stokes).
    """

    def __init__(self, grid: _MACGrid, nu: float, coef_arrays, cfg: SolverConfig):
        self.grid = grid
        self.cfg = cfg
        self.A = []
        self.amg = []
        diag_inv = []
        for c in range(3):
            a = nu * grid.laplacian(c)
            if coef_arrays is not None:
                a = a + sps.diags(np.asarray(coef_arrays[c]).ravel())
            a = a.tocsr()
            self.A.append(a)
            self.amg.append(pyamg.smoothed_aggregation_solver(
                a, max_coarse=400))
            diag_inv.append(1.0 / a.diagonal())
        self.D = grid.divergence_op()
        d_inv = sps.diags(np.concatenate(diag_inv))
        s_diag = (self.D @ d_inv @ self.D.T).tocsr()
        # Schur preconditioner: scaled pressure mass (the Stokes part) plus
        # an AMG sweep on D diag(A)^-1 D^T (captures drag/penalized zones)
        amg_s = pyamg.smoothed_aggregation_solver(
            s_diag, max_coarse=400,
            presmoother=("gauss_seidel", {"sweep": "symmetric"}),
            postsmoother=("gauss_seidel", {"sweep": "symmetric"}),
        ).aspreconditioner(cycle="V")

        def apply_prec(q):
            return nu * q + amg_s @ q

        self.prec = spla.LinearOperator((grid.n_cells, grid.n_cells),
                                        matvec=apply_prec)
        self._inner_iters = 0
        self._warm = [None, None, None]

    def solve_A(self, rhs_vec: np.ndarray, warm: bool = False) -> np.ndarray:
        out = np.empty_like(rhs_vec)
        start = 0
        for c in range(3):
            size = self.grid.dof_sizes[c]
            b = rhs_vec[start:start + size]
            guess = self._warm[c] if warm else None
            bn = np.linalg.norm(b)
            if bn == 0:
                out[start:start + size] = 0.0
            else:
                res = []
                x = self.amg[c].solve(b, x0=guess, tol=self.cfg.inner_tolerance,
                                      accel="cg", maxiter=300, residuals=res)
                self._inner_iters += len(res)
                out[start:start + size] = x
                if warm:
                    self._warm[c] = x
            start += size
        return out

    def solve(self, f_vec: np.ndarray, div_rhs=None):
        """Return (u_dof_vector, p_vector, info dict).

        ``div_rhs`` is the continuity right-hand side (nonzero when wall
        velocities are prescribed; its mean is removed for solvability).
        """
        grid, cfg = self.grid, self.cfg
        u0 = self.solve_A(f_vec)
        rhs_p = -self.D @ u0
        if div_rhs is not None:
            rhs_p = rhs_p + div_rhs
        rhs_p -= rhs_p.mean()

        def apply_S(q):
            return self.D @ self.solve_A(self.D.T @ q, warm=True)

        S = spla.LinearOperator((grid.n_cells, grid.n_cells), matvec=apply_S)

        norm_rhs = np.linalg.norm(rhs_p)
        if norm_rhs == 0:
            p = np.zeros(grid.n_cells)
            u = u0
        else:
            p, flag = spla.cg(S, rhs_p, rtol=cfg.tolerance, atol=0.0,
                              maxiter=cfg.max_iterations, M=self.prec)
            if flag > 0:
                raise SolverError(
                    f"pressure CG stalled after {cfg.max_iterations} "
                    "iterations")
            p -= p.mean()
            u = u0 + self.solve_A(self.D.T @ p)
        div = self.D @ u
        if div_rhs is not None:
            # the compatible (mean-free) part of the wall flux is enforced
            div = div - div_rhs
            div = div - div.mean()
        info = {"div_max": float(np.abs(div).max()),
                "inner_iterations": self._inner_iters}
        return u, p, info


def _sample_faces(grid: _MACGrid, fn):
    """Component-c values of a vector field at the interior faces."""
    out = []
    for c in range(3):
        pts = grid.interior_points(c)
        vals = np.atleast_2d(np.asarray(fn(pts), dtype=float))
        out.append(vals[:, c].reshape(grid.dof_shapes[c]))
    return out


def _advection_faces(grid: _MACGrid, field: StaggeredField):
    """(U . grad U) sampled at the interior faces of each component.

    Computed at cell centers from the averaged velocity and interpolated
    back to faces; adequate as a Picard source term.
    """
    uc = field.center_velocity()
    grads = [np.gradient(uc[..., j], field.h, edge_order=2) for j in range(3)]
    adv_c = np.stack([sum(uc[..., i] * grads[j][i] for i in range(3))
                      for j in range(3)], axis=-1)
    out = []
    for c in range(3):
        # average the two cells sharing each interior face
        sl_lo = [slice(None)] * 3
        sl_hi = [slice(None)] * 3
        sl_lo[c] = slice(0, grid.n[c] - 1)
        sl_hi[c] = slice(1, grid.n[c])
        out.append(0.5 * (adv_c[tuple(sl_lo)][..., c]
                          + adv_c[tuple(sl_hi)][..., c]))
    return out


def solve_stokes(domain: Box, g, cfg: SolverConfig, nu: float = 1.0,
                 coef_arrays=None, rhs_extra=None, meta=None,
                 wall_velocity=None) -> StaggeredField:
    """Solve -nu*lap(u) + diag(coef)*u + grad(p) = g (+ extra), div u = 0.

    ``coef_arrays``/``rhs_extra`` are optional per-component interior-face
    arrays used by the drag and penalization front ends.  ``wall_velocity``
    prescribes an inhomogeneous Dirichlet trace on the box walls (its net
    flux must vanish up to discretization).
    """
    grid = _MACGrid(domain, cfg.h)
    solver = _SchurStokesSolver(grid, nu, coef_arrays, cfg)
    f = _sample_faces(grid, g)
    if rhs_extra is not None:
        f = [a + b for a, b in zip(f, rhs_extra)]
    div_rhs = None
    if wall_velocity is not None:
        momentum, div_rhs = grid.wall_contributions(wall_velocity, nu)
        f = [a + b for a, b in zip(f, momentum)]
    u, p, info = solver.solve(grid.pack(f), div_rhs=div_rhs)
    meta = dict(meta or {})
    meta.update(info)
    return StaggeredField(domain, cfg.h,
                          grid.full_faces(grid.unpack(u), wall_velocity),
                          p.reshape(grid.n), meta)


def solve_brinkman(problem: BrinkmanProblem, cfg: SolverConfig) -> StaggeredField:
    """Solve the volumetric-drag problem, optionally with advection.

    Momentum: -nu*lap(U) + 6 pi nu rho U + grad(P) = g + 6 pi nu j
    (minus U.grad U moved to the right-hand side under damped Picard when
    ``problem.advection`` is set).
    """
    if problem.nu <= 0:
        raise ValueError("nu must be positive")
    grid = _MACGrid(problem.domain, cfg.h)
    six_pi_nu = 6.0 * np.pi * problem.nu

    coef = None
    if problem.rho is not None:
        coef = []
        for c in range(3):
            pts = grid.interior_points(c)
            coef.append(six_pi_nu * np.asarray(problem.rho(pts), dtype=float)
                        .reshape(grid.dof_shapes[c]))
    rhs_extra = None
    if problem.j is not None:
        rhs_extra = [six_pi_nu * a for a in _sample_faces(grid, problem.j)]

    if problem.advection:
        gn, jn = _field_l2(problem.domain, problem.g, cfg.h), 0.0
        if problem.j is not None:
            jn = _field_l2(problem.domain, problem.j, cfg.h)
        nu0 = poincare_and_nu0(problem.domain, gn, jn)["nu0"]
        if problem.nu <= nu0:
            raise ValueError(
                f"advection needs nu > nu0 = {nu0:g}, got {problem.nu:g}")

    field = solve_stokes(problem.domain, problem.g, cfg, problem.nu,
                         coef, rhs_extra, meta={"nu": problem.nu})
    if not problem.advection:
        return field

    solver = _SchurStokesSolver(grid, problem.nu, coef, cfg)
    base = grid.pack(_sample_faces(grid, problem.g))
    if rhs_extra is not None:
        base = base + grid.pack(rhs_extra)
    u_prev = grid.pack([a[tuple(
        slice(1, grid.n[c]) if a_ax == c else slice(None)
        for a_ax in range(3))] for c, a in enumerate(field.u)])
    increments = []
    for it in range(cfg.picard_max):
        adv = _advection_faces(grid, StaggeredField(
            problem.domain, cfg.h, grid.full_faces(grid.unpack(u_prev)),
            field.p, {}))
        u_new, p_new, info = solver.solve(base - grid.pack(adv))
        u_new = (1.0 - cfg.damping) * u_prev + cfg.damping * u_new
        inc = float(np.sqrt(cfg.h**3) * np.linalg.norm(u_new - u_prev))
        increments.append(inc)
        u_prev = u_new
        if inc < cfg.tolerance:
            break
    else:
        raise SolverError("Picard iteration did not converge", increments)
    meta = {"nu": problem.nu, "picard_increments": increments,
            "div_max": info["div_max"]}
    return StaggeredField(problem.domain, cfg.h,
                          grid.full_faces(grid.unpack(u_prev)),
                          p_new.reshape(grid.n), meta)


def solve_perforated(cloud: ParticleCloud, g, cfg: SolverConfig,
                     nu: float = 1.0) -> StaggeredField:
    """Flow past the cloud's rigid spheres by volume penalization.

    Adds eta * chi(x) * (u - v_k) to the momentum balance, with chi a
    sphere indicator smoothed over one grid cell; afterwards the velocity
    inside each ball is overwritten by the particle velocity (the natural
    extension).  The surface mismatch max_k |u - v_k| sampled on each
    sphere is recorded in the metadata.
    """
    report = validate_cloud(cloud)
    if not report:
        bad = [k for k, c in report.checks.items() if not c["ok"]]
        raise ValueError(f"perforated solve needs a valid cloud: {bad}")
    if cfg.h > cloud.eps / 4 + 1e-12:
        raise ValueError(
            f"h={cfg.h:g} under-resolves spheres of radius {cloud.eps:g}; "
            "need h <= eps/4")
    # penalty strength: residual slip scales like 4.5|v| eps**2 nu / eta,
    # so 1e4 nu/eps**2 keeps it below 0.1% without ruining conditioning
    eta = cfg.eta if cfg.eta is not None else 1e4 * nu / cloud.eps**2
    grid = _MACGrid(cloud.domain, cfg.h)

    coef, extra = [], []
    for c in range(3):
        pts = grid.interior_points(c)
        dist, idx = cloud.tree().query(pts)
        chi = np.clip((cloud.eps - dist) / cfg.h + 0.5, 0.0, 1.0)
        coef.append((eta * chi).reshape(grid.dof_shapes[c]))
        extra.append((eta * chi * cloud.velocities[idx, c])
                     .reshape(grid.dof_shapes[c]))

    field = solve_stokes(cloud.domain, g, cfg, nu, coef, extra,
                         meta={"nu": nu, "eta": eta})

    from .quadrature import sphere_rule
    omega, _ = sphere_rule(8, 16)
    mismatch = 0.0
    for xk, vk in zip(cloud.positions, cloud.velocities):
        surf = xk + cloud.eps * omega
        diff = field.interpolate(surf) - vk
        mismatch = max(mismatch, float(np.abs(diff).max()))
    field.meta["surface_mismatch"] = mismatch

    # natural extension: rigid velocity inside each ball
    for c in range(3):
        pts = field.face_points(c).reshape(-1, 3)
        dist, idx = cloud.tree().query(pts)
        inside = dist <= cloud.eps
        flat = field.u[c].reshape(-1)
        flat[inside] = cloud.velocities[idx[inside], c]
        field.u[c] = flat.reshape(field.u[c].shape)
    return field


def _field_l2(domain: Box, fn, h: float) -> float:
    """Discrete L2 norm of a closed-form field on cell centers."""
    grid = _MACGrid(domain, h)
    lo = np.asarray(domain.corner)
    axes = [lo[a] + h * (np.arange(grid.n[a]) + 0.5) for a in range(3)]
    g = np.meshgrid(*axes, indexing="ij")
    pts = np.stack(g, axis=-1).reshape(-1, 3)
    vals = np.atleast_2d(np.asarray(fn(pts), dtype=float))
    return float(np.sqrt(h**3 * np.sum(vals**2)))


def weak_residual(u, g, w, cloud: ParticleCloud = None,
                  advection: bool = False, nu: float = 1.0,
                  h: float = None, domain: Box = None) -> float:
    """Weak-form residual of a velocity field against a smooth test field.

        nu * int grad(u):grad(w) - int (u x u):grad(w) [advection]
        - int g . w

    integrated over the fluid region (ball interiors excluded when a cloud
    is supplied; ``w`` is then expected to vanish there).  ``u`` may be a
    StaggeredField or any evaluator of points; evaluators need ``h`` and
    ``domain`` for the quadrature grid and use central differences for the
    gradient.
    """
    if isinstance(u, StaggeredField):
        pts = u.center_points().reshape(-1, 3)
        grads = u.gradient_at_centers().reshape(-1, 3, 3)
        uv = u.center_velocity().reshape(-1, 3)
        hh = u.h
        dom = u.domain
    else:
        if h is None or domain is None:
            raise ValueError("evaluator input needs h and domain")
        grid = _MACGrid(domain, h)
        lo = np.asarray(domain.corner)
        axes = [lo[a] + h * (np.arange(grid.n[a]) + 0.5) for a in range(3)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack(mesh, axis=-1).reshape(-1, 3)
        uv = np.atleast_2d(np.asarray(u(pts), dtype=float))
        grads = np.zeros((len(pts), 3, 3))
        d = h / 2.0
        for i in range(3):
            e = np.zeros(3)
            e[i] = d
            grads[:, i, :] = (np.atleast_2d(np.asarray(u(pts + e), dtype=float))
                              - np.atleast_2d(np.asarray(u(pts - e), dtype=float))
                              ) / (2.0 * d)
        hh = h
        dom = domain

    if cloud is not None:
        dist, _ = cloud.tree().query(pts)
        keep = dist > cloud.eps
        pts, grads, uv = pts[keep], grads[keep], uv[keep]

    gw = _grad_of_test(w, pts)
    gv = np.atleast_2d(np.asarray(g(pts), dtype=float))
    wv = np.atleast_2d(np.asarray(w(pts), dtype=float))
    res = nu * np.sum(grads * gw) - np.sum(gv * wv)
    if advection:
        uu = uv[:, :, None] * uv[:, None, :]
        res -= np.sum(uu * gw)
    return float(hh**3 * res)


def _grad_of_test(w, pts):
    if hasattr(w, "grad"):
        return w.grad(pts)
    h = 1e-6
    out = np.zeros(pts.shape[:1] + (3, 3))
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        out[:, i, :] = (np.atleast_2d(np.asarray(w(pts + e), dtype=float))
                        - np.atleast_2d(np.asarray(w(pts - e), dtype=float))) \
            / (2.0 * h)
    return out


def poincare_and_nu0(domain: Box, g_norm: float, j_norm: float) -> dict:
    """Poincare constant of the box and the uniqueness viscosity threshold.

    C_P = 1/sqrt(lambda_1) with lambda_1 = pi**2 sum(1/L_i**2) the first
    Dirichlet eigenvalue; nu0 is the positive root of
    nu**2 - 24 pi C_P**1.5 |j| nu - 4 C_P**1.5 |g| = 0.
    """
    if g_norm < 0 or j_norm < 0:
        raise ValueError("norms must be nonnegative")
    lam1 = np.pi**2 * sum(1.0 / s**2 for s in domain.sides)
    c_p = 1.0 / np.sqrt(lam1)
    b = 12.0 * np.pi * c_p**1.5 * j_norm
    nu0 = b + np.sqrt(b**2 + 4.0 * c_p**1.5 * g_norm)
    return {"C_P": float(c_p), "nu0": float(nu0)}


def manufactured_solution(domain: Box, nu: float = 1.0, rho_coef=None):
    """Closed-form solenoidal no-slip velocity, pressure, and forcing.

    Returns (u_exact, p_exact, g) where g is the forcing that makes
    (u_exact, p_exact) solve -nu*lap(u) + 6 pi nu rho u + grad(p) = g
    (rho omitted when ``rho_coef`` is None).  Built from the curl of a
    sin**2 stream vector so all components vanish on the walls.
    """
    import sympy as sp

    x, y, z = sp.symbols("x y z")
    lo = domain.corner
    s = domain.sides
    xh = (x - lo[0]) / s[0]
    yh = (y - lo[1]) / s[1]
    zh = (z - lo[2]) / s[2]
    psi = sp.sin(sp.pi * xh) ** 2 * sp.sin(sp.pi * yh) ** 2 \
        * sp.sin(sp.pi * zh) ** 2
    u_expr = [sp.diff(psi, y), -sp.diff(psi, x), sp.Integer(0)]
    p_expr = sp.cos(sp.pi * xh) * sp.cos(2 * sp.pi * yh) * sp.cos(sp.pi * zh)
    lap = [sum(sp.diff(e, v, 2) for v in (x, y, z)) for e in u_expr]
    grad_p = [sp.diff(p_expr, v) for v in (x, y, z)]
    rho_expr = sp.sympify(rho_coef) if rho_coef is not None else None
    g_expr = []
    for c in range(3):
        e = -nu * lap[c] + grad_p[c]
        if rho_expr is not None:
            e = e + 6 * sp.pi * nu * rho_expr * u_expr[c]
        g_expr.append(sp.simplify(e))

    from .fields import from_sympy
    u_exact = from_sympy(u_expr, "manufactured-u")
    g = from_sympy(g_expr, "manufactured-g")
    p_fn = sp.lambdify((x, y, z), p_expr, modules="numpy")

    def p_exact(pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.broadcast_to(p_fn(pts[:, 0], pts[:, 1], pts[:, 2]),
                               pts.shape[:1]).astype(float)

    return u_exact, p_exact, g


def save_snapshot(field: StaggeredField, basepath: str) -> list:
    """Write one flat float64 binary per component plus JSON sidecars.

    Components are 'u0', 'u1', 'u2' (face grids) and 'p' (cell centers),
    flattened x-fastest.  Returns the written file paths.
    """
    written = []
    pieces = {f"u{c}": field.u[c] for c in range(3)}
    pieces["p"] = field.p
    for name, arr in pieces.items():
        binpath = f"{basepath}.{name}.bin"
        # layout "x-fastest": x is the fastest-varying index on disk
        np.ascontiguousarray(np.transpose(arr, (2, 1, 0))).tofile(binpath)
        sidecar = {
            "domain": {"corner": list(field.domain.corner),
                       "sides": list(field.domain.sides)},
            "h": field.h,
            "component": name,
            "shape": list(arr.shape),
            "layout": "x-fastest",
        }
        with open(f"{basepath}.{name}.json", "w") as fh:
            json.dump(sidecar, fh, indent=1)
        written += [binpath, f"{basepath}.{name}.json"]
    return written


def load_snapshot(basepath: str) -> StaggeredField:
    """Read a snapshot written by save_snapshot."""
    arrays = {}
    meta = None
    for name in ("u0", "u1", "u2", "p"):
        with open(f"{basepath}.{name}.json") as fh:
            meta = json.load(fh)
        raw = np.fromfile(f"{basepath}.{name}.bin", dtype=np.float64)
        shape = meta["shape"]
        arrays[name] = np.transpose(raw.reshape(shape[::-1]), (2, 1, 0))
    box = Box(meta["domain"]["corner"], meta["domain"]["sides"])
    return StaggeredField(box, meta["h"],
                          [arrays["u0"], arrays["u1"], arrays["u2"]],
                          arrays["p"])


def probe_line_csv(field: StaggeredField, start, end, n: int, path: str) -> None:
    """Sample the field along a segment and write x,y,z,ux,uy,uz rows."""
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    t = np.linspace(0.0, 1.0, n)[:, None]
    pts = start + t * (end - start)
    vals = field.interpolate(pts)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "y", "z", "ux", "uy", "uz"])
        for p, v in zip(pts, vals):
            wr.writerow([repr(float(c)) for c in (*p, *v)])
