"""Particle advection with facet-by-facet host tracking.

Within one tracking call a particle moves with a fixed velocity. For each
facet of the current cell the time to reach it is ``b_i / (v . n_i)`` (``b_i``
the distance to the facet, ``n_i`` the outward normal); only facets with
``v . n_i > 0`` can be hit. The particle either finishes inside the cell or
is pushed onto the nearest facet and handed to the neighbour, or to the
boundary behaviour of that facet (reflect, wrap, or delete).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InvalidArgument, LostParticleError, RunawayParticleError
from .mesh import CLOSED, INTERIOR, OPEN, PERIODIC

# Butcher tableaux (A, b, c) of the explicit schemes
SCHEMES = {
    "euler": (np.zeros((1, 1)), np.array([1.0]), np.array([0.0])),
    "rk2": (np.array([[0.0, 0.0], [0.5, 0.0]]), np.array([0.0, 1.0]), np.array([0.0, 0.5])),
    "rk3": (np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.25, 0.25, 0.0]]),
            np.array([1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0]), np.array([0.0, 1.0, 0.5])),
}


def constant_velocity(a):
    a = np.asarray(a, dtype=float)

    def velocity(x, t=0.0):
        return np.broadcast_to(a, np.shape(x)).copy()

    return velocity


def rotating_velocity(omega=np.pi):
    """Solid-body rotation ``omega * (-y, x)``."""

    def velocity(x, t=0.0):
        x = np.asarray(x, dtype=float)
        return omega * np.stack((-x[..., 1], x[..., 0]), axis=-1)

    return velocity


@dataclass
class AdvectionConfig:
    velocity: callable
    dt: float
    scheme: str = "euler"
    max_hops: int | None = None

    def __post_init__(self):
        if self.dt <= 0:
            raise InvalidArgument("dt must be positive")
        if self.scheme not in SCHEMES:
            raise InvalidArgument(f"unknown scheme {self.scheme!r}")


@dataclass
class StepReport:
    moved: int = 0
    reflected: int = 0
    wrapped: int = 0
    deleted: int = 0


@dataclass
class TrackResult:
    """Outcome of tracking a batch of particles over one sub-step."""

    positions: np.ndarray
    cells: np.ndarray
    velocities: np.ndarray
    exited: np.ndarray            # left through an open facet
    reflected: np.ndarray         # number of wall reflections per particle
    wrapped: np.ndarray           # number of periodic wraps per particle
    consumed: np.ndarray          # time consumed per particle
    history: list = field(default_factory=list)


def apply_closed(v, n):
    """Reflect velocity ``v`` at a wall with unit normal ``n``."""
    v = np.asarray(v, dtype=float)
    n = np.asarray(n, dtype=float)
    return v - 2.0 * np.sum(v * n, axis=-1, keepdims=True) * n


def apply_periodic(mesh, x, facet):
    """Map a point on a periodic facet to the partner facet.

    Returns ``(x', partner cell)``.
    """
    facet = int(facet)
    if mesh.boundary_marker[facet] != PERIODIC or mesh.periodic_partner[facet] < 0:
        raise ConfigurationError(f"facet {facet} has no periodic partner")
    partner = mesh.periodic_partner[facet]
    return np.asarray(x, dtype=float) + mesh.periodic_translation[facet], int(mesh.facet_cells[partner, 0])


def check_boundary_setup(mesh):
    bnd = mesh.boundary_facets
    marker = mesh.boundary_marker[bnd]
    if np.any(marker == INTERIOR):
        raise ConfigurationError("boundary facet without a boundary marker")
    per = bnd[marker == PERIODIC]
    if np.any(mesh.periodic_partner[per] < 0):
        raise ConfigurationError("periodic facets must be paired before advection")


def track(mesh, cells, x0, v, dt, max_hops=None, record=False):
    """Move particles with constant velocities ``v`` for time ``dt``.

    Vectorised over particles. ``cells`` are the hosts of ``x0``. Returns a
    :class:`TrackResult`; with ``record=True`` the visited ``(particle, cell,
    position)`` sequence is stored in ``history``.
    """
    cells = np.array(cells, dtype=np.int64, ndmin=1)
    x = np.array(x0, dtype=float, ndmin=2).copy()
    v = np.array(v, dtype=float, ndmin=2).copy()
    n = len(cells)
    v = np.broadcast_to(v, x.shape).copy()
    if max_hops is None:
        max_hops = 4 * mesh.num_cells
    rem = np.full(n, float(dt))
    exited = np.zeros(n, dtype=bool)
    reflected = np.zeros(n, dtype=np.int64)
    wrapped = np.zeros(n, dtype=np.int64)
    hops = np.zeros(n, dtype=np.int64)
    history = []
    if record:
        history.extend((i, int(cells[i]), x[i].copy()) for i in range(n))

    normals = mesh.outward_normals()
    mids = mesh.facet_midpoint[mesh.cell_facets]
    marker = mesh.boundary_marker
    fcells = mesh.facet_cells
    active = np.flatnonzero(rem > 0)
    while active.size:
        c = cells[active]
        xa = x[active]
        va = v[active]
        nrm = normals[c]
        dist = np.einsum("nfd,nfd->nf", mids[c] - xa[:, None, :], nrm)
        vn = np.einsum("nd,nfd->nf", va, nrm)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_hit = np.where(vn > 0.0, np.maximum(dist, 0.0) / vn, np.inf)
        imin = np.argmin(t_hit, axis=1)
        tmin = t_hit[np.arange(len(active)), imin]
        ra = rem[active]
        finish = tmin >= ra

        done = active[finish]
        x[done] += v[done] * rem[done, None]
        rem[done] = 0.0

        cross = active[~finish]
        if cross.size:
            tc = tmin[~finish]
            x[cross] += v[cross] * tc[:, None]
            rem[cross] -= tc
            hops[cross] += 1
            local = imin[~finish]
            f = mesh.cell_facets[cells[cross], local]
            a, b = fcells[f, 0], fcells[f, 1]
            interior = b >= 0
            idx = cross[interior]
            cells[idx] = np.where(a[interior] == cells[idx], b[interior], a[interior])

            bnd = ~interior
            fb = f[bnd]
            pb = cross[bnd]
            mk = marker[fb]
            wall = mk == CLOSED
            pw = pb[wall]
            v[pw] = apply_closed(v[pw], nrm[~finish][bnd][wall, local[bnd][wall]])
            reflected[pw] += 1
            per = mk == PERIODIC
            pp, fp = pb[per], fb[per]
            if np.any(mesh.periodic_partner[fp] < 0):
                raise ConfigurationError("particle reached an unpaired periodic facet")
            x[pp] += mesh.periodic_translation[fp]
            cells[pp] = fcells[mesh.periodic_partner[fp], 0]
            wrapped[pp] += 1
            opn = mk == OPEN
            po = pb[opn]
            exited[po] = True
            rem[po] = 0.0
            lost = ~(wall | per | opn)
            if np.any(lost):
                raise LostParticleError(
                    f"particle reached boundary facet {int(fb[lost][0])} without a boundary condition")
            if record:
                history.extend((int(i), int(cells[i]), x[i].copy()) for i in cross)
            if np.any(hops[cross] > max_hops):
                bad = cross[np.argmax(hops[cross])]
                trace = {"start": np.asarray(x0, dtype=float).reshape(-1, 2)[bad].tolist(),
                         "position": x[bad].tolist(), "cell": int(cells[bad])}
                raise RunawayParticleError(
                    f"particle {int(bad)} exceeded {max_hops} facet crossings", trace)
        active = active[rem[active] > 0]
    return TrackResult(x, cells, v, exited, reflected, wrapped, dt - rem,
                       history)


def track_particle(mesh, cell, x0, v, dt, max_hops=None):
    """Single-particle convenience wrapper around :func:`track`.

    Returns ``(x1, final cell or None when deleted, visited cells)``.
    """
    res = track(mesh, [cell], [x0], [v], dt, max_hops=max_hops, record=True)
    visited = []
    for _, c, _ in res.history:
        if not visited or visited[-1] != c:
            visited.append(c)
    final = None if res.exited[0] else int(res.cells[0])
    return res.positions[0], final, visited


def do_step(pset, config, t):
    """Advance every particle of ``pset`` by one time step.

    Each Runge-Kutta stage tracks the particle from its step-start position
    with the stage's effective velocity, so intermediate positions honour the
    boundary behaviour. Properties are left untouched.
    """
    mesh = pset.mesh
    check_boundary_setup(mesh)
    A, b, c = SCHEMES[config.scheme]
    dt = config.dt
    x0 = pset.positions
    h0 = pset.hosts
    ks = []
    xs, hs = x0, h0
    for i in range(len(b)):
        if i > 0:
            veff = sum(A[i, j] * ks[j] for j in range(i)) / c[i]
            res = track(mesh, h0, x0, veff, c[i] * dt, config.max_hops)
            # exited particles keep their start position for later stage evaluations
            xs = np.where(res.exited[:, None], x0, res.positions)
            hs = np.where(res.exited, h0, res.cells)
        ks.append(np.asarray(config.velocity(xs, t + c[i] * dt), dtype=float).reshape(-1, 2))
    vfinal = sum(b[j] * ks[j] for j in range(len(b)))
    res = track(mesh, h0, x0, vfinal, dt, config.max_hops)

    report = StepReport(reflected=int(np.count_nonzero(res.reflected)),
                        wrapped=int(np.count_nonzero(res.wrapped)),
                        deleted=int(np.count_nonzero(res.exited)))
    pset.positions = res.positions
    changed = (res.cells != h0) | res.exited
    report.moved = int(np.count_nonzero(changed & ~res.exited))
    idx = np.flatnonzero(changed)
    target = np.where(res.exited[idx], -1, res.cells[idx])
    pset._move(idx, target)
    return report
