"""Particle configurations: generation, validation, empirical-measure moments.

A cloud of N spheres of radius ``eps`` inside an axis-aligned box must
satisfy the scaling N*eps = 1, pairwise center separation strictly above
2*eps**(1/3), and wall clearance strictly above eps**(1/3).  These
constraints keep the annular neighbourhoods of distinct spheres disjoint,
which the corrector closed forms rely on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "Box",
    "Particle",
    "ParticleCloud",
    "MomentField",
    "CloudError",
    "PackingError",
    "generate_cloud",
    "validate_cloud",
    "pair_moments",
    "save_cloud",
    "load_cloud",
]


class CloudError(ValueError):
    """Raised for invalid cloud parameters or data."""


class PackingError(CloudError):
    """Raised when a valid configuration cannot be generated."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by its lower corner and side lengths."""

    corner: tuple
    sides: tuple

    def __post_init__(self):
        object.__setattr__(self, "corner", tuple(float(c) for c in self.corner))
        object.__setattr__(self, "sides", tuple(float(s) for s in self.sides))
        if len(self.corner) != 3 or len(self.sides) != 3:
            raise CloudError("box needs 3 corner and 3 side components")
        if any(s <= 0 for s in self.sides):
            raise CloudError("box side lengths must be positive")

    @property
    def upper(self):
        return tuple(c + s for c, s in zip(self.corner, self.sides))

    @property
    def volume(self) -> float:
        return float(np.prod(self.sides))

    def contains(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        lo = np.asarray(self.corner)
        hi = np.asarray(self.upper)
        return np.all((pts >= lo) & (pts <= hi), axis=-1)

    def wall_distance(self, pts) -> np.ndarray:
        """Distance from each point to the nearest wall (negative outside)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        lo = pts - np.asarray(self.corner)
        hi = np.asarray(self.upper) - pts
        return np.minimum(lo.min(axis=-1), hi.min(axis=-1))


@dataclass(frozen=True)
class Particle:
    """A single sphere center with its rigid velocity."""

    x: tuple
    v: tuple

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(c) for c in self.x))
        object.__setattr__(self, "v", tuple(float(c) for c in self.v))
        if not all(np.isfinite(self.x)) or not all(np.isfinite(self.v)):
            raise CloudError("particle components must be finite")


class ParticleCloud:
    """Sphere configuration with the mean-field radius eps = 1/N.

    Parameters
    ----------
    eps : float
        Sphere radius; must equal 1/N to within 1e-12.
    particles : sequence of Particle
    domain : Box
    """

    def __init__(self, eps: float, particles, domain: Box):
        self.eps = float(eps)
        self.particles = list(particles)
        self.domain = domain
        n = len(self.particles)
        if n == 0:
            raise CloudError("cloud needs at least one particle")
        if abs(n * self.eps - 1.0) > 1e-12:
            raise CloudError(f"N*eps = {n * self.eps!r} but must be 1")
        self.positions = np.array([p.x for p in self.particles], dtype=float)
        self.velocities = np.array([p.v for p in self.particles], dtype=float)
        self._tree = None

    @property
    def n(self) -> int:
        return len(self.particles)

    @property
    def r_sep(self) -> float:
        """Separation radius eps**(1/3): half the minimum center spacing."""
        return self.eps ** (1.0 / 3.0)

    @property
    def kinetic_energy(self) -> float:
        return float(0.5 * np.mean(np.sum(self.velocities**2, axis=1)))

    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.positions)
        return self._tree

    def __repr__(self):
        return f"ParticleCloud(n={self.n}, eps={self.eps:g})"


@dataclass
class MomentField:
    """Continuous number density and current density on the domain.

    ``rho`` maps (M, 3) points to (M,) nonnegative values; ``j`` maps
    (M, 3) points to (M, 3) vectors.
    """

    rho: object
    j: object
    name: str = ""

    def velocity(self, pts) -> np.ndarray:
        """Pointwise j/rho; errors where rho vanishes."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        r = np.asarray(self.rho(pts), dtype=float)
        if np.any(r <= 0):
            raise CloudError("rho must be positive where velocities are sampled")
        return np.asarray(self.j(pts), dtype=float) / r[:, None]


@dataclass
class ValidityReport:
    """Outcome of validate_cloud, one entry per geometric condition."""

    ok: bool
    checks: dict = field(default_factory=dict)

    def __bool__(self):
        return self.ok


def _marginal_quantile_axes(domain: Box, rho, m: int, margin: float,
                            blend: float):
    """Per-axis site coordinates at equispaced quantiles of rho's marginals.

    The marginal density along each axis is tabulated on a fine grid (the
    other two axes summed out), its CDF inverted by interpolation, and m
    quantiles placed between the wall-margin quantile levels.  ``blend``
    in [0, 1] interpolates toward the plain uniform lattice, used as a
    fallback when quantile compression violates the spacing constraint.
    """
    k = 256
    lo = np.asarray(domain.corner)
    sides = np.asarray(domain.sides)
    cells = [lo[a] + sides[a] * (np.arange(k) + 0.5) / k for a in range(3)]
    gx, gy, gz = np.meshgrid(*cells, indexing="ij")
    dens = np.asarray(rho(np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)))
    dens = np.maximum(dens, 0.0).reshape(k, k, k)

    pitch_floor = 2.05 / 1.05 * margin  # the 2.05*r_sep spacing target
    axes = []
    for a in range(3):
        marg = dens.sum(axis=tuple(i for i in range(3) if i != a))
        total = marg.sum()
        if total <= 0:
            raise CloudError("target rho has zero mass")
        cdf = np.concatenate([[0.0], np.cumsum(marg) / total])
        edges = lo[a] + sides[a] * np.arange(k + 1) / k
        # midpoint strata: consistent estimator of the marginal law
        x_q = np.interp((np.arange(m) + 0.5) / m, cdf, edges)
        x_u = (np.linspace(lo[a] + margin, lo[a] + sides[a] - margin, m)
               if m > 1 else np.array([lo[a] + 0.5 * sides[a]]))
        # smallest per-axis blend toward the uniform lattice restoring the
        # spacing and wall cushions (both constraints are linear in b)
        b = blend
        for gq, gu, floor in (
            [(np.diff(x_q), np.diff(x_u), pitch_floor)] if m > 1 else []):
            short = gq < floor
            if np.any(short):
                bb = (floor - gq[short]) / np.maximum(gu[short] - gq[short], 1e-30)
                b = max(b, float(np.clip(bb.max(), 0.0, 1.0)))
        for xq, xu in ((x_q[0] - lo[a], x_u[0] - lo[a]),
                       (lo[a] + sides[a] - x_q[-1], lo[a] + sides[a] - x_u[-1])):
            if xq < margin:
                b = max(b, float(np.clip((margin - xq) / max(xu - xq, 1e-30),
                                         0.0, 1.0)))
        axes.append((1.0 - b) * x_q + b * x_u)
    return axes


def _lattice_sites(n: int, domain: Box, eps: float, rng, jitter: float,
                   rho, blend: float):
    """Jittered candidate positions on a density-following lattice.

    Sites sit at quantiles of rho's per-axis marginals inside a
    1.05*eps**(1/3) wall margin, so the empirical measure tracks rho as n
    grows; jitter is capped so the spacing and wall constraints keep a
    strict cushion.
    """
    r_sep = eps ** (1.0 / 3.0)
    m = int(np.ceil(n ** (1.0 / 3.0)))
    margin = 1.05 * r_sep
    axes = _marginal_quantile_axes(domain, rho, m, margin, blend)
    pitch = min(np.diff(ax).min() for ax in axes) if m > 1 else np.inf
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    sites = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    # jitter keeps strict cushions above both the 2*r_sep spacing floor
    # and the r_sep wall clearance
    wall_slack = min(min(ax[0] - c, c + s - ax[-1])
                     for ax, c, s in zip(axes, domain.corner, domain.sides))
    room = min(0.5 * max(pitch - 2.05 * r_sep, 0.0),
               0.9 * max(wall_slack - r_sep, 0.0))
    if jitter > 0 and np.isfinite(room) and room > 0:
        sites = sites + rng.uniform(-jitter * room, jitter * room, sites.shape)
    return sites, pitch


def generate_cloud(n: int, domain: Box, target: MomentField,
                   jitter: float = 0.5, seed: int = 0,
                   velocity_noise: float = 0.0) -> ParticleCloud:
    """Generate a valid cloud of ``n`` spheres approximating ``target``.

    Particles sit on a jittered lattice; when the lattice has more sites
    than particles, sites are kept with probability proportional to the
    target density rho (largest weighted draws win), so the empirical
    measure tracks rho as n grows.  Velocities are j/rho at the centers
    plus optional uniform noise of amplitude ``velocity_noise``.
    """
    if n < 1:
        raise CloudError("n must be at least 1")
    if not 0.0 <= jitter < 1.0:
        raise CloudError("jitter must lie in [0, 1)")
    eps = 1.0 / n
    r_sep = eps ** (1.0 / 3.0)
    m = int(np.ceil(n ** (1.0 / 3.0)))
    need = 2.0 * 1.05 * r_sep + max(m - 1, 0) * 2.05 * r_sep
    if min(domain.sides) < need:
        raise PackingError(
            f"domain side {min(domain.sides):g} too small: n={n} spheres at "
            f"spacing >2*{r_sep:g} need side >= {need:g}")

    rng = np.random.default_rng(seed)
    for attempt in range(32):
        # later attempts relax toward the plain uniform lattice, which the
        # precondition guarantees to be feasible
        blend = min(attempt / 8.0, 1.0)
        sites, _ = _lattice_sites(n, domain, eps, rng, jitter, target.rho, blend)
        if len(sites) > n:
            w = np.asarray(target.rho(sites), dtype=float)
            if np.any(w < 0):
                raise CloudError("target rho is negative on the lattice")
            w = np.maximum(w, 1e-300)
            # Gumbel trick: top-n draws without replacement, rho-weighted
            keys = np.log(w) + rng.gumbel(size=len(sites))
            sites = sites[np.sort(np.argsort(keys)[-n:])]
        dists = cKDTree(sites).query(sites, k=2)[0][:, 1] if n > 1 else None
        wall = Box(domain.corner, domain.sides).wall_distance(sites)
        if (dists is None or dists.min() > 2.0 * r_sep) and wall.min() > r_sep:
            break
    else:
        raise PackingError("could not realize the separation constraints "
                           f"after 32 attempts (n={n}, eps={eps:g})")

    vels = target.velocity(sites)
    if velocity_noise > 0:
        vels = vels + rng.uniform(-velocity_noise, velocity_noise, vels.shape)
    particles = [Particle(x, v) for x, v in zip(sites, vels)]
    cloud = ParticleCloud(eps, particles, domain)
    report = validate_cloud(cloud)
    if not report:
        bad = [k for k, c in report.checks.items() if not c["ok"]]
        raise PackingError(f"generated cloud fails validation: {bad}")
    return cloud


def validate_cloud(cloud: ParticleCloud, e_max: float = np.inf) -> ValidityReport:
    """Check every geometric hypothesis; strict inequalities throughout.

    Returns a report with one entry per condition carrying the worst
    offender and its margin (positive margin means pass).
    """
    checks = {}
    r_sep = cloud.r_sep

    scaling = abs(cloud.n * cloud.eps - 1.0)
    checks["scaling"] = {"ok": scaling <= 1e-12, "margin": 1e-12 - scaling,
                         "detail": f"|N*eps-1|={scaling:.3e}"}

    if cloud.n > 1:
        d, idx = cloud.tree().query(cloud.positions, k=2)
        worst = int(np.argmin(d[:, 1]))
        dmin = float(d[worst, 1])
        checks["separation"] = {
            "ok": dmin > 2.0 * r_sep, "margin": dmin - 2.0 * r_sep,
            "detail": f"pair ({worst},{int(idx[worst, 1])}) at {dmin:.6g}"}
    else:
        checks["separation"] = {"ok": True, "margin": np.inf, "detail": "N=1"}

    wall = cloud.domain.wall_distance(cloud.positions)
    worst = int(np.argmin(wall))
    checks["wall"] = {"ok": float(wall[worst]) > r_sep,
                      "margin": float(wall[worst]) - r_sep,
                      "detail": f"particle {worst} at {wall[worst]:.6g} from wall"}

    ke = cloud.kinetic_energy
    checks["kinetic_energy"] = {"ok": ke <= e_max, "margin": e_max - ke,
                                "detail": f"(1/N)sum|v|^2/2 = {ke:.6g}"}

    return ValidityReport(ok=all(c["ok"] for c in checks.values()), checks=checks)


def pair_moments(cloud: ParticleCloud, test_fn) -> dict:
    """Empirical-measure moments paired with a smooth vector test field.

    rho_pairing = (1/N) sum_k sum_c phi_c(x_k) (componentwise sum) and
    j_pairing = (1/N) sum_k v_k . phi(x_k); these approximate the integrals
    of rho against phi and j . phi when the cloud tracks (rho, j).
    """
    phi = np.atleast_2d(np.asarray(test_fn(cloud.positions), dtype=float))
    return {
        "rho_pairing": float(phi.sum() / cloud.n),
        "j_pairing": float(np.sum(cloud.velocities * phi) / cloud.n),
    }


def save_cloud(cloud: ParticleCloud, path: str, fmt: str = "json") -> None:
    """Write a cloud as JSON or as whitespace text with an eps header."""
    if fmt == "json":
        data = {
            "eps": cloud.eps,
            "domain": {"corner": list(cloud.domain.corner),
                       "sides": list(cloud.domain.sides)},
            "particles": [{"x": list(p.x), "v": list(p.v)}
                          for p in cloud.particles],
        }
        with open(path, "w") as fh:
            json.dump(data, fh, indent=1)
    elif fmt == "text":
        with open(path, "w") as fh:
            fh.write(f"# eps={cloud.eps!r}\n")
            for p in cloud.particles:
                fh.write(" ".join(repr(c) for c in (*p.x, *p.v)) + "\n")
    else:
        raise CloudError(f"unknown cloud format {fmt!r}")


def load_cloud(path: str, domain: Box | None = None) -> ParticleCloud:
    """Read a cloud written by save_cloud; text files need ``domain``."""
    with open(path) as fh:
        first = fh.read(1)
        fh.seek(0)
        if first == "{":
            data = json.load(fh)
            box = Box(data["domain"]["corner"], data["domain"]["sides"])
            parts = [Particle(p["x"], p["v"]) for p in data["particles"]]
            return ParticleCloud(data["eps"], parts, box)
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("# eps="):
        raise CloudError("text cloud file must start with '# eps=<value>'")
    eps = float(lines[0].split("=", 1)[1])
    parts = []
    for ln in lines[1:]:
        vals = [float(t) for t in ln.split()]
        if len(vals) != 6:
            raise CloudError(f"bad particle line: {ln!r}")
        parts.append(Particle(vals[:3], vals[3:]))
    if domain is None:
        raise CloudError("text format carries no domain; pass one explicitly")
    return ParticleCloud(eps, parts, domain)
