"""Two-dimensional simplicial meshes with precomputed facet geometry.

A mesh stores its vertices and counter-clockwise cells, and derives the
facet connectivity needed for facet-walk particle tracking and for facet
integrals: facet midpoints, unit normals, lengths, facet-to-cell adjacency
and per-cell outward signs.

Facet normals carry one global orientation: they point out of the adjacent
cell with the lower id (for boundary facets, out of the domain).
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .errors import InvalidArgument, MeshParseError, PairingFailure

INTERIOR = 0
CLOSED = 1
OPEN = 2
PERIODIC = 3

BARY_TOL = 1e-12


class SimplicialMesh:
    """Triangulation with facet data.

    Parameters
    ----------
    vertices : (V, 2) array_like
    cells : (C, 3) array_like of int
        Vertex indices. Clockwise cells are reordered to counter-clockwise.
    boundary_marker : (F,) array_like of int, optional
        Marker per facet in the canonical facet order. Defaults to ``CLOSED``
        on every boundary facet.
    """

    def __init__(self, vertices, cells, boundary_marker=None,
                 periodic_partner=None, periodic_translation=None):
        vertices = np.ascontiguousarray(vertices, dtype=float)
        cells = np.array(cells, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise InvalidArgument(f"vertices must have shape (V, 2), got {vertices.shape}")
        if cells.ndim != 2 or cells.shape[1] != 3:
            raise InvalidArgument(f"cells must have shape (C, 3), got {cells.shape}")
        if cells.size and (cells.min() < 0 or cells.max() >= len(vertices)):
            raise InvalidArgument("cell vertex index out of range")

        v0, v1, v2 = (vertices[cells[:, i]] for i in range(3))
        signed = 0.5 * _cross(v1 - v0, v2 - v0)
        if np.any(signed == 0.0):
            raise InvalidArgument("degenerate (zero-area) cell")
        flip = signed < 0
        cells[flip] = cells[flip][:, [0, 2, 1]]

        self.vertices = vertices
        self.cells = cells
        self._build_topology()

        nf = len(self.facets)
        if boundary_marker is None:
            marker = np.where(self.facet_cells[:, 1] < 0, CLOSED, INTERIOR)
        else:
            marker = np.asarray(boundary_marker, dtype=np.int64).copy()
            if marker.shape != (nf,):
                raise InvalidArgument("boundary_marker length must equal the facet count")
        self.boundary_marker = marker

        if periodic_partner is None:
            periodic_partner = np.full(nf, -1, dtype=np.int64)
        if periodic_translation is None:
            periodic_translation = np.zeros((nf, 2))
        self.periodic_partner = np.asarray(periodic_partner, dtype=np.int64)
        self.periodic_translation = np.asarray(periodic_translation, dtype=float)
        self._locator = None

    # -- construction helpers -------------------------------------------------

    def _build_topology(self):
        cells = self.cells
        nc = len(cells)
        # local facet i is opposite local vertex i
        local = np.array([[1, 2], [2, 0], [0, 1]])
        edges = cells[:, local].reshape(-1, 2)
        edges = np.sort(edges, axis=1)
        facets, inverse = np.unique(edges, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        self.facets = facets
        self.cell_facets = inverse.reshape(nc, 3)

        nf = len(facets)
        owner = np.repeat(np.arange(nc), 3)
        order = np.argsort(inverse, kind="stable")
        counts = np.bincount(inverse, minlength=nf)
        if np.any(counts > 2):
            raise InvalidArgument("non-manifold mesh: facet shared by more than two cells")
        facet_cells = np.full((nf, 2), -1, dtype=np.int64)
        starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
        facet_cells[:, 0] = owner[order[starts]]
        two = counts == 2
        facet_cells[two, 1] = owner[order[starts[two] + 1]]
        # owner ids come out ascending because of the stable sort
        self.facet_cells = facet_cells

        va = self.vertices[facets[:, 0]]
        vb = self.vertices[facets[:, 1]]
        tangent = vb - va
        length = np.hypot(tangent[:, 0], tangent[:, 1])
        normal = np.column_stack((tangent[:, 1], -tangent[:, 0])) / length[:, None]
        mid = 0.5 * (va + vb)
        centroid = self.vertices[cells].mean(axis=1)
        away = np.einsum("ij,ij->i", mid - centroid[facet_cells[:, 0]], normal)
        normal[away < 0] *= -1.0
        self.facet_midpoint = mid
        self.facet_normal = normal
        self.facet_length = length

        lower = facet_cells[self.cell_facets, 0]
        self.cell_facet_sign = np.where(lower == np.arange(nc)[:, None], 1.0, -1.0)

        v0, v1, v2 = (self.vertices[cells[:, i]] for i in range(3))
        jac = np.stack((v1 - v0, v2 - v0), axis=2)  # columns are edge vectors
        self.cell_jacobian = jac
        self.cell_detj = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        self.cell_jacobian_inv = np.linalg.inv(jac)
        self.cell_area = 0.5 * self.cell_detj
        self.cell_centroid = centroid

    def copy(self):
        return SimplicialMesh(self.vertices.copy(), self.cells.copy(),
                              self.boundary_marker.copy(),
                              self.periodic_partner.copy(),
                              self.periodic_translation.copy())

    # -- sizes ------------------------------------------------------------------

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_cells(self):
        return len(self.cells)

    @property
    def num_facets(self):
        return len(self.facets)

    @property
    def boundary_facets(self):
        return np.flatnonzero(self.facet_cells[:, 1] < 0)

    @property
    def interior_facets(self):
        return np.flatnonzero(self.facet_cells[:, 1] >= 0)

    def facet_cell_list(self, facet):
        return [int(c) for c in self.facet_cells[facet] if c >= 0]

    def outward_normals(self):
        """Outward unit normals per cell and local facet, shape (C, 3, 2)."""
        return self.facet_normal[self.cell_facets] * self.cell_facet_sign[..., None]

    def hmax(self):
        return float(self.facet_length.max())

    # -- geometry queries -----------------------------------------------------

    def barycentric(self, cells, points):
        """Barycentric coordinates of ``points`` w.r.t. ``cells`` (broadcast)."""
        cells = np.asarray(cells)
        points = np.asarray(points, dtype=float)
        v0 = self.vertices[self.cells[cells, 0]]
        ref = np.einsum("...ij,...j->...i", self.cell_jacobian_inv[cells], points - v0)
        return np.concatenate((1.0 - ref.sum(axis=-1, keepdims=True), ref), axis=-1)

    def contains(self, cells, points, tol=BARY_TOL):
        return self.barycentric(cells, points).min(axis=-1) >= -tol

    def locate_point(self, x):
        """Return the lowest-id cell whose closed triangle contains ``x``, or None."""
        found = self.locate_points(np.asarray(x, dtype=float).reshape(1, 2))[0]
        return None if found < 0 else int(found)

    def locate_points(self, points, tol=BARY_TOL):
        """Vectorised point location; returns -1 for points outside the mesh."""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        if self._locator is None:
            self._locator = _BinLocator(self)
        return self._locator.locate(points, tol)


class _BinLocator:
    """Uniform bin grid over the mesh bounding box, cells registered by bbox."""

    def __init__(self, mesh):
        self.mesh = mesh
        lo = mesh.vertices.min(axis=0)
        hi = mesh.vertices.max(axis=0)
        span = np.maximum(hi - lo, 1e-300)
        nb = max(1, int(math.sqrt(mesh.num_cells)))
        self.lo, self.hi, self.nb = lo, hi, nb
        self.width = span / nb
        pts = mesh.vertices[mesh.cells]
        pad = 1e-9 * span
        clo = np.floor((pts.min(axis=1) - pad - lo) / self.width).astype(np.int64)
        chi = np.floor((pts.max(axis=1) + pad - lo) / self.width).astype(np.int64)
        clo = np.clip(clo, 0, nb - 1)
        chi = np.clip(chi, 0, nb - 1)
        bins, owners = [], []
        for c in range(mesh.num_cells):
            ix = np.arange(clo[c, 0], chi[c, 0] + 1)
            iy = np.arange(clo[c, 1], chi[c, 1] + 1)
            b = (iy[:, None] * nb + ix[None, :]).ravel()
            bins.append(b)
            owners.append(np.full(len(b), c, dtype=np.int64))
        bins = np.concatenate(bins)
        owners = np.concatenate(owners)
        order = np.lexsort((owners, bins))
        self.bin_cells = owners[order]
        self.bin_start = np.searchsorted(bins[order], np.arange(nb * nb + 1))

    def locate(self, points, tol):
        mesh = self.mesh
        n = len(points)
        result = np.full(n, -1, dtype=np.int64)
        if n == 0:
            return result
        rel = (points - self.lo) / self.width
        ij = np.floor(rel).astype(np.int64)
        # points on the upper bounding edge belong to the last bin
        ij = np.where((ij == self.nb) & (rel <= self.nb + 1e-9), self.nb - 1, ij)
        inside = np.all((ij >= 0) & (ij < self.nb), axis=1)
        idx = np.flatnonzero(inside)
        b = ij[idx, 1] * self.nb + ij[idx, 0]
        start = self.bin_start[b]
        counts = self.bin_start[b + 1] - start
        rep = np.repeat(idx, counts)
        offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        cand = self.bin_cells[np.repeat(start, counts) + offs]
        ok = mesh.contains(cand, points[rep], tol)
        best = np.full(n, mesh.num_cells, dtype=np.int64)
        np.minimum.at(best, rep[ok], cand[ok])
        hit = best < mesh.num_cells
        result[hit] = best[hit]
        return result


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


# -- generators -----------------------------------------------------------------

def build_rectangle_mesh(nx, ny, bounds=((0.0, 0.0), (1.0, 1.0))):
    """Structured triangulation of a rectangle, 2*nx*ny cells.

    Each quadrilateral is split along its (lower-left, upper-right) diagonal.
    """
    nx, ny = int(nx), int(ny)
    if nx < 1 or ny < 1:
        raise InvalidArgument("nx and ny must be at least 1")
    (x0, y0), (x1, y1) = bounds
    if not (x1 > x0 and y1 > y0):
        raise InvalidArgument(f"degenerate bounds {bounds!r}")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack((X.ravel(), Y.ravel()))
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    v00 = j * (nx + 1) + i
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    lower = np.column_stack((v00, v10, v11))
    upper = np.column_stack((v00, v11, v01))
    cells = np.stack((lower, upper), axis=1).reshape(-1, 3)
    return SimplicialMesh(vertices, cells)


def build_disk_mesh(radius, target_h, center=(0.0, 0.0)):
    """Disk triangulation built from concentric rings of vertices.

    Ring ``i`` (radius ``i * radius / n``) carries ``6 i`` equally spaced
    vertices; neighbouring rings are stitched together by merging their
    angular sequences. The mesh has ``6 n^2`` cells.
    """
    radius = float(radius)
    target_h = float(target_h)
    if radius <= 0 or target_h <= 0:
        raise InvalidArgument("radius and target_h must be positive")
    if target_h > radius:
        raise InvalidArgument("target_h must not exceed the radius")
    nrings = max(1, int(math.ceil(radius / target_h - 1e-12)))
    cx, cy = center
    verts = [(cx, cy)]
    ring_ids = [np.array([0])]
    ring_angles = [np.array([0.0])]
    for i in range(1, nrings + 1):
        n = 6 * i
        r = radius * i / nrings
        ang = 2.0 * np.pi * np.arange(n) / n
        ids = np.arange(len(verts), len(verts) + n)
        for a in ang:
            verts.append((cx + r * math.cos(a), cy + r * math.sin(a)))
        ring_ids.append(ids)
        ring_angles.append(ang)

    cells = []
    for i in range(1, nrings + 1):
        outer, oang = ring_ids[i], ring_angles[i]
        if i == 1:
            for j in range(len(outer)):
                cells.append((0, outer[j], outer[(j + 1) % len(outer)]))
            continue
        inner, iang = ring_ids[i - 1], ring_angles[i - 1]
        ni, no = len(inner), len(outer)
        a, b = 0, 0
        while a < ni or b < no:
            next_in = iang[a + 1] if a + 1 < ni else 2.0 * np.pi
            next_out = oang[b + 1] if b + 1 < no else 2.0 * np.pi
            if b < no and (a >= ni or next_out <= next_in):
                cells.append((inner[a % ni], outer[b], outer[(b + 1) % no]))
                b += 1
            else:
                cells.append((inner[a % ni], outer[b % no], inner[(a + 1) % ni]))
                a += 1
    return SimplicialMesh(np.array(verts), np.array(cells))


# -- markers and periodicity -----------------------------------------------------

def set_boundary_markers(mesh, marker, where=None):
    """Return a copy of ``mesh`` with ``marker`` assigned to selected facets.

    ``where`` is either a boolean mask / index array over facets, or a callable
    taking facet midpoints ``(F, 2)`` and returning a boolean mask. ``None``
    selects every boundary facet.
    """
    marker = int(marker)
    if marker not in (CLOSED, OPEN, PERIODIC):
        raise InvalidArgument(f"unknown boundary marker {marker}")
    boundary = mesh.facet_cells[:, 1] < 0
    if where is None:
        sel = boundary
    elif callable(where):
        sel = np.asarray(where(mesh.facet_midpoint), dtype=bool)
    else:
        sel = np.zeros(mesh.num_facets, dtype=bool)
        sel[np.asarray(where)] = True
    bad = np.flatnonzero(sel & ~boundary)
    if len(bad):
        raise InvalidArgument(f"cannot mark interior facets {bad[:10].tolist()}")
    new = mesh.copy()
    new.boundary_marker[sel] = marker
    # facets that stop being periodic lose their pairing
    unpaired = sel & (marker != PERIODIC)
    new.periodic_partner[unpaired] = -1
    new.periodic_translation[unpaired] = 0.0
    return new


def pair_periodic(mesh, limits, tol=1e-10):
    """Pair opposing periodic facets.

    Parameters
    ----------
    limits : sequence of (axis, lower, upper)
        Each entry names an axis (0/1 or "x"/"y") and the coordinates of the two
        opposing boundaries that are identified.
    """
    new = mesh.copy()
    partner = np.full(mesh.num_facets, -1, dtype=np.int64)
    shift = np.zeros((mesh.num_facets, 2))
    periodic = np.flatnonzero(mesh.boundary_marker == PERIODIC)
    mid = mesh.facet_midpoint
    for axis, lower, upper in limits:
        axis = {"x": 0, "y": 1}.get(axis, axis)
        other = 1 - axis
        lo = periodic[np.abs(mid[periodic, axis] - lower) <= tol]
        hi = periodic[np.abs(mid[periodic, axis] - upper) <= tol]
        lo = lo[np.argsort(mid[lo, other], kind="stable")]
        hi = hi[np.argsort(mid[hi, other], kind="stable")]
        if len(lo) != len(hi):
            extra = lo if len(lo) > len(hi) else hi
            raise PairingFailure(
                f"unmatched periodic facet at midpoint {mid[extra[-1]].tolist()}")
        mismatch = np.abs(mid[lo, other] - mid[hi, other]) > tol
        if np.any(mismatch):
            f = lo[np.argmax(mismatch)]
            raise PairingFailure(f"unmatched periodic facet at midpoint {mid[f].tolist()}")
        span = float(upper) - float(lower)
        partner[lo], partner[hi] = hi, lo
        shift[lo, axis] = span
        shift[hi, axis] = -span
    missing = periodic[partner[periodic] < 0]
    if len(missing):
        raise PairingFailure(
            f"unmatched periodic facet at midpoint {mid[missing[0]].tolist()}")
    lengths_differ = np.abs(mesh.facet_length[periodic] - mesh.facet_length[partner[periodic]])
    if np.any(lengths_differ > 1e-12):
        raise PairingFailure("paired periodic facets differ in length")
    new.periodic_partner = partner
    new.periodic_translation = shift
    return new


def bi_periodic_unit_square(n):
    """Unit square with n x n quads, all four sides periodic."""
    mesh = build_rectangle_mesh(n, n)
    mesh = set_boundary_markers(mesh, PERIODIC)
    return pair_periodic(mesh, [(0, 0.0, 1.0), (1, 0.0, 1.0)])


# -- text format -------------------------------------------------------------------

MAGIC = "tri2d"
VERSION = 1


def write_mesh(mesh, path):
    lines = [f"{MAGIC} {VERSION}", f"{mesh.num_vertices} {mesh.num_cells}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += [f"{a} {b} {c}" for a, b, c in mesh.cells.tolist()]
    marked = np.flatnonzero(mesh.boundary_marker != INTERIOR)
    lines.append(f"markers {len(marked)}")
    for f in marked:
        a, b = mesh.facets[f]
        lines.append(f"{a} {b} {mesh.boundary_marker[f]}")
    pairs = [f for f in np.flatnonzero(mesh.periodic_partner >= 0)
             if f < mesh.periodic_partner[f]]
    lines.append(f"periodic {len(pairs)}")
    for f in pairs:
        g = mesh.periodic_partner[f]
        lines.append("{} {} {} {}".format(*mesh.facets[f], *mesh.facets[g]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path):
    raw = Path(path).read_text().splitlines()
    rows = []
    for lineno, text in enumerate(raw, start=1):
        text = text.split("#", 1)[0].strip()
        if text:
            rows.append((lineno, text.split()))
    it = iter(rows)

    def take(what):
        try:
            return next(it)
        except StopIteration:
            raise MeshParseError(f"unexpected end of file while reading {what}") from None

    def ints(lineno, toks, n):
        if len(toks) != n:
            raise MeshParseError(f"expected {n} fields, got {len(toks)}", lineno)
        try:
            return [int(t) for t in toks]
        except ValueError:
            raise MeshParseError(f"expected integers, got {' '.join(toks)!r}", lineno) from None

    lineno, toks = take("header")
    if len(toks) != 2 or toks[0] != MAGIC:
        raise MeshParseError(f"malformed header, expected '{MAGIC} {VERSION}'", lineno)
    if toks[1] != str(VERSION):
        raise MeshParseError(f"unsupported version {toks[1]}", lineno)
    lineno, toks = take("sizes")
    nv, nc = ints(lineno, toks, 2)
    verts = np.empty((nv, 2))
    for i in range(nv):
        lineno, toks = take("vertices")
        if len(toks) != 2:
            raise MeshParseError("expected 2 coordinates", lineno)
        try:
            verts[i] = [float(t) for t in toks]
        except ValueError:
            raise MeshParseError(f"bad coordinate {' '.join(toks)!r}", lineno) from None
    cells = np.empty((nc, 3), dtype=np.int64)
    for i in range(nc):
        lineno, toks = take("cells")
        cell = ints(lineno, toks, 3)
        if min(cell) < 0 or max(cell) >= nv:
            raise MeshParseError(f"vertex index out of range (V={nv})", lineno)
        cells[i] = cell
    try:
        mesh = SimplicialMesh(verts, cells)
    except InvalidArgument as exc:
        raise MeshParseError(str(exc)) from None

    lookup = {tuple(f): i for i, f in enumerate(mesh.facets.tolist())}

    def facet_of(lineno, a, b):
        key = (min(a, b), max(a, b))
        if key not in lookup:
            raise MeshParseError(f"no facet joins vertices {a} and {b}", lineno)
        return lookup[key]

    for lineno, toks in it:
        if toks[0] == "markers":
            (count,) = ints(lineno, toks[1:], 1)
            for _ in range(count):
                lineno, toks = take("markers")
                a, b, m = ints(lineno, toks, 3)
                f = facet_of(lineno, a, b)
                if m != INTERIOR and mesh.facet_cells[f, 1] >= 0:
                    raise MeshParseError("interior facet cannot carry a boundary marker", lineno)
                mesh.boundary_marker[f] = m
        elif toks[0] == "periodic":
            (count,) = ints(lineno, toks[1:], 1)
            for _ in range(count):
                lineno, toks = take("periodic")
                a0, a1, b0, b1 = ints(lineno, toks, 4)
                f, g = facet_of(lineno, a0, a1), facet_of(lineno, b0, b1)
                mesh.periodic_partner[f], mesh.periodic_partner[g] = g, f
                d = mesh.facet_midpoint[g] - mesh.facet_midpoint[f]
                mesh.periodic_translation[f] = d
                mesh.periodic_translation[g] = -d
        else:
            raise MeshParseError(f"unknown section {toks[0]!r}", lineno)
    return mesh
