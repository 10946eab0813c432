"""Particle storage keyed by hosting cell.

Particles live in flat arrays (positions, host cell, one array per property
slot). A cell's bucket is the subsequence of particles hosted by that cell,
in storage order; relocation appends a moved particle to the end of its new
bucket, so bucket order matches a per-cell list design.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import InvalidArgument, LostParticleError

#: receiving-cell sentinel for particles that cannot be tracked on the mesh
SENTINEL = np.iinfo(np.uint32).max
CONTAIN_TOL = 1e-10


def make_rng(seed):
    """Counter-based 64-bit generator used by every stochastic operation."""
    return np.random.Generator(np.random.Philox(int(seed)))


class ParticleSet:
    """Particles with ordered property slots.

    Slot 0 is the position; slots ``1..m`` follow ``schema`` (a list of
    ``(name, ncomp)`` with ``ncomp <= 3``). Slots may be referenced by name or
    by their 1-based index.
    """

    def __init__(self, mesh, positions, hosts, properties, schema):
        self.mesh = mesh
        self.positions = np.asarray(positions, dtype=float).reshape(-1, 2)
        self.hosts = np.asarray(hosts, dtype=np.int64)
        self.schema = [(str(name), int(nc)) for name, nc in schema]
        for name, nc in self.schema:
            if not 1 <= nc <= 3:
                raise InvalidArgument(f"slot {name!r} has {nc} components (max 3)")
        self.data = {name: np.asarray(arr, dtype=float) for (name, _), arr
                     in zip(self.schema, properties)}
        self.rejected = np.array([], dtype=np.int64)
        self._order = None

    # -- bookkeeping ----------------------------------------------------------

    def __len__(self):
        return len(self.positions)

    def slot_name(self, slot):
        if isinstance(slot, str):
            if slot not in self.data:
                raise InvalidArgument(f"unknown slot {slot!r}")
            return slot
        slot = int(slot)
        if not 1 <= slot <= len(self.schema):
            raise InvalidArgument(f"slot index {slot} out of range")
        return self.schema[slot - 1][0]

    def slot_ncomp(self, slot):
        name = self.slot_name(slot)
        return dict(self.schema)[name]

    def get(self, slot):
        return self.data[self.slot_name(slot)]

    def set(self, slot, values):
        name = self.slot_name(slot)
        values = np.asarray(values, dtype=float)
        if values.shape != self.data[name].shape:
            raise InvalidArgument(f"shape {values.shape} does not match slot {name!r}")
        self.data[name] = values.copy()

    def add_slot(self, name, ncomp=1, fill=0.0):
        if name in self.data:
            raise InvalidArgument(f"slot {name!r} exists")
        if not 1 <= ncomp <= 3:
            raise InvalidArgument("slots carry at most 3 components")
        self.schema.append((name, int(ncomp)))
        shape = (len(self),) if ncomp == 1 else (len(self), ncomp)
        self.data[name] = np.full(shape, float(fill))

    def counts(self):
        return np.bincount(self.hosts, minlength=self.mesh.num_cells)

    def cell_order(self):
        """Storage indices sorted by host cell, bucket order preserved."""
        if self._order is None:
            self._order = np.argsort(self.hosts, kind="stable")
        return self._order

    def bucket(self, cell):
        return np.flatnonzero(self.hosts == cell)

    def check_containment(self, tol=CONTAIN_TOL):
        """Indices of particles lying outside their host cell."""
        bary = self.mesh.barycentric(self.hosts, self.positions)
        return np.flatnonzero(bary.min(axis=1) < -tol)

    # -- mutation ------------------------------------------------------------

    def _move(self, index, new_host):
        """Move particles ``index`` to ``new_host`` (negative: delete).

        Moved particles are appended after the unmoved ones in the given order.
        """
        index = np.asarray(index, dtype=np.int64)
        new_host = np.asarray(new_host, dtype=np.int64)
        if len(index) == 0:
            return
        moved = np.zeros(len(self), dtype=bool)
        moved[index] = True
        keep = np.flatnonzero(~moved)
        survivors = new_host >= 0
        order = np.concatenate((keep, index[survivors]))
        hosts = self.hosts.copy()
        hosts[index[survivors]] = new_host[survivors]
        self._reorder(order, hosts)

    def _reorder(self, order, hosts=None):
        if hosts is None:
            hosts = self.hosts
        self.positions = self.positions[order]
        self.hosts = hosts[order]
        for name in self.data:
            self.data[name] = self.data[name][order]
        self._order = None

    def _append(self, positions, hosts, values):
        self.positions = np.concatenate((self.positions, positions))
        self.hosts = np.concatenate((self.hosts, hosts))
        for name in self.data:
            self.data[name] = np.concatenate((self.data[name], values[name]))
        self._order = None

    def relocate(self, moves, open_exit=None):
        """Apply ``(cell, particle index in bucket, receiving cell)`` moves.

        A receiving cell equal to ``SENTINEL`` deletes the particle when the
        matching ``open_exit`` flag is set; otherwise the particle is lost and
        ``LostParticleError`` is raised. All indices refer to the buckets as
        they are when the call starts.
        """
        moves = list(moves)
        if open_exit is None:
            open_exit = [False] * len(moves)
        index, target = [], []
        buckets = {}
        for (cell, pidx, recv), is_open in zip(moves, open_exit):
            if cell not in buckets:
                buckets[cell] = self.bucket(cell)
            b = buckets[cell]
            if not 0 <= pidx < len(b):
                raise InvalidArgument(f"particle index {pidx} out of range for cell {cell}")
            if recv == SENTINEL:
                if not is_open:
                    raise LostParticleError(
                        f"particle {pidx} of cell {cell} left the mesh outside an open boundary")
                recv = -1
            elif not 0 <= recv < self.mesh.num_cells:
                raise InvalidArgument(f"receiving cell {recv} out of range")
            index.append(b[pidx])
            target.append(recv)
        if len(set(index)) != len(index):
            raise InvalidArgument("a particle appears in more than one move")
        self._move(index, target)

    def remove(self, index):
        index = np.asarray(index, dtype=np.int64)
        self._move(index, np.full(len(index), -1))

    # -- output --------------------------------------------------------------

    def to_csv(self, path):
        header = ["x", "y"]
        for name, nc in self.schema:
            header += [name] if nc == 1 else [f"{name}_{i}" for i in range(nc)]
        order = self.cell_order()
        cols = [self.positions[order]]
        for name, nc in self.schema:
            cols.append(self.data[name][order].reshape(len(order), nc))
        table = np.hstack(cols) if cols else np.empty((0, 0))
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in table.tolist():
                writer.writerow([repr(v) for v in row])


def create(mesh, positions, properties=(), names=None):
    """Build a particle set, locating each particle's host cell.

    Particles outside the mesh are dropped; their input indices are kept in
    ``ParticleSet.rejected``.
    """
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    props = [np.asarray(p, dtype=float) for p in properties]
    for i, p in enumerate(props):
        if len(p) != len(positions):
            raise InvalidArgument(
                f"property {i} has length {len(p)}, expected {len(positions)}")
    if names is None:
        names = [f"slot{i + 1}" for i in range(len(props))]
    if len(names) != len(props):
        raise InvalidArgument("one name per property is required")
    schema = [(n, 1 if p.ndim == 1 else p.shape[1]) for n, p in zip(names, props)]
    hosts = mesh.locate_points(positions)
    inside = hosts >= 0
    pset = ParticleSet(mesh, positions[inside], hosts[inside], [p[inside] for p in props], schema)
    pset.rejected = np.flatnonzero(~inside)
    return pset


# -- generators -----------------------------------------------------------------------


def generate_lattice(bounds, counts):
    """Cell-centred lattice of ``nx * ny`` points in a rectangle."""
    (x0, y0), (x1, y1) = bounds
    nx, ny = (int(c) for c in counts)
    if nx < 1 or ny < 1:
        raise InvalidArgument("lattice counts must be at least 1")
    xs = x0 + (np.arange(nx) + 0.5) * (x1 - x0) / nx
    ys = y0 + (np.arange(ny) + 0.5) * (y1 - y0) / ny
    X, Y = np.meshgrid(xs, ys)
    return np.column_stack((X.ravel(), Y.ravel()))


def random_barycentric(rng, n):
    """Uniform barycentric coordinates on a triangle by folding the unit square."""
    s = rng.random(n)
    t = rng.random(n)
    fold = s + t > 1.0
    s[fold] = 1.0 - s[fold]
    t[fold] = 1.0 - t[fold]
    return np.column_stack((s, t, 1.0 - s - t))


def generate_random_cell(mesh, particles_per_cell, seed, cells=None):
    """Uniform random points inside cells; returns ``(positions, hosts)``."""
    ppc = np.asarray(particles_per_cell)
    if np.any(ppc < 0) or (ppc.ndim == 0 and ppc < 1):
        raise InvalidArgument("particles_per_cell must be at least 1")
    if cells is None:
        cells = np.arange(mesh.num_cells)
    cells = np.asarray(cells, dtype=np.int64)
    hosts = np.repeat(cells, np.broadcast_to(ppc, cells.shape))
    rng = make_rng(seed)
    bary = random_barycentric(rng, len(hosts))
    verts = mesh.vertices[mesh.cells[hosts]]
    return np.einsum("ni,nid->nd", bary, verts), hosts


# -- mesh-particle updates ------------------------------------------------------------


def interpolate(pset, field, slot):
    """Overwrite a scalar slot with the field value at each particle."""
    if pset.slot_ncomp(slot) != 1:
        raise InvalidArgument("interpolation target must be a scalar slot")
    pset.set(slot, field.eval_many(pset.hosts, pset.positions))


def increment(pset, field_new, field_old, slots, theta, step):
    """FLIP-style theta update of a scalar slot with the change of the mesh field.

    ``slots = (value, stash)``; the stash keeps the previous step's increment
    at the particle. Step 1 always uses ``theta = 1``.
    """
    value, stash = slots
    try:
        pset.slot_name(stash)
    except InvalidArgument:
        raise InvalidArgument(f"missing stash slot {stash!r}") from None
    if step < 1:
        raise InvalidArgument("step counts from 1")
    if step == 1:
        theta = 1.0
    dpsi = field_new.eval_many(pset.hosts, pset.positions) \
        - field_old.eval_many(pset.hosts, pset.positions)
    updated = pset.get(value) + (1.0 - theta) * pset.get(stash) + theta * dpsi
    pset.set(value, updated)
    pset.set(stash, dpsi)


def round_to_bounds(values, lower, upper):
    """Binary assignment: ``upper`` above the midpoint, else ``lower``."""
    return np.where(values > 0.5 * (lower + upper), upper, lower)


def add_delete_sweep(pset, p_min, p_max, init_fields=None, bounds=None, seed=0):
    """Keep per-cell particle counts within ``[p_min, p_max]``.

    Cells below ``p_min`` receive random particles whose slots are set by
    interpolating ``init_fields[slot]`` (optionally rounded to ``bounds[slot]``);
    slots without a field are zero. Cells above ``p_max`` lose the particles
    closest to another particle, one at a time.
    """
    if not 1 <= p_min <= p_max:
        raise InvalidArgument("require 1 <= p_min <= p_max")
    init_fields = {pset.slot_name(s): f for s, f in (init_fields or {}).items()}
    bounds = {pset.slot_name(s): b for s, b in (bounds or {}).items()}
    counts = pset.counts()

    drop = []
    order = pset.cell_order()
    starts = np.concatenate(([0], np.cumsum(counts)))
    for c in np.flatnonzero(counts > p_max):
        members = list(order[starts[c]:starts[c + 1]])
        for _ in range(counts[c] - p_max):
            pts = pset.positions[members]
            d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
            np.fill_diagonal(d, np.inf)
            i, j = np.unravel_index(np.argmin(d), d.shape)
            drop.append(members.pop(max(i, j)))
    if drop:
        pset.remove(drop)

    deficit = np.maximum(p_min - counts, 0)
    deficit[counts > p_max] = 0
    need = np.flatnonzero(deficit)
    if len(need) == 0:
        return
    positions, hosts = generate_random_cell(pset.mesh, deficit[need], seed, cells=need)
    values = {}
    for name, nc in pset.schema:
        shape = (len(hosts),) if nc == 1 else (len(hosts), nc)
        if name in init_fields:
            v = init_fields[name].eval_many(hosts, positions)
            if name in bounds:
                v = round_to_bounds(v, *bounds[name])
            values[name] = v.reshape(shape)
        else:
            values[name] = np.zeros(shape)
    pset._append(positions, hosts, values)
