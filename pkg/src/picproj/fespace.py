"""Discontinuous Lagrange spaces, facet trace spaces and element matrices.

Cell-local dofs of a discontinuous space are stored contiguously: dof ``j``
of cell ``c`` has global index ``c * dofs_per_cell + j``. Reference nodes
are equispaced and ordered vertices first, then edge-interior nodes (edge
``i`` is opposite local vertex ``i``), then cell-interior nodes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidArgument
from .mesh import PERIODIC
from .quadrature import cell_quadrature, facet_quadrature

_REF_VERTS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def _monomial_exponents(k):
    return [(a, d - a) for d in range(k + 1) for a in range(d, -1, -1)]


@lru_cache(maxsize=None)
def lagrange_multi_indices(k):
    """Barycentric multi-indices ``(a0, a1, a2)`` of the order-k nodes."""
    if k == 0:
        return ((0, 0, 0),)
    nodes = []
    for i in range(3):
        idx = [0, 0, 0]
        idx[i] = k
        nodes.append(tuple(idx))
    for i in range(3):
        first, second = (i + 1) % 3, (i + 2) % 3
        for m in range(1, k):
            idx = [0, 0, 0]
            idx[first] = k - m
            idx[second] = m
            nodes.append(tuple(idx))
    for a1 in range(1, k):
        for a2 in range(1, k - a1):
            nodes.append((k - a1 - a2, a1, a2))
    return tuple(nodes)


class LagrangeBasis:
    """Nodal basis of P_k on the reference triangle."""

    def __init__(self, k):
        if k < 0:
            raise InvalidArgument("polynomial order must be non-negative")
        self.k = k
        self.exponents = np.array(_monomial_exponents(k))
        idx = np.array(lagrange_multi_indices(k), dtype=float)
        if k == 0:
            self.nodes = np.array([[1.0 / 3.0, 1.0 / 3.0]])
        else:
            self.nodes = idx[:, 1:] / k
        self.dim = len(self.exponents)
        vander = self._monomials(self.nodes)
        # phi_j = sum_m coeffs[m, j] * monomial_m
        self.coeffs = np.linalg.inv(vander)

    def _monomials(self, xi):
        xi = np.asarray(xi, dtype=float)
        ex = self.exponents
        return xi[..., 0, None] ** ex[:, 0] * xi[..., 1, None] ** ex[:, 1]

    def __call__(self, xi):
        """Basis values at reference points, shape (..., dim)."""
        return self._monomials(xi) @ self.coeffs

    def grad(self, xi):
        """Reference gradients, shape (..., dim, 2)."""
        xi = np.asarray(xi, dtype=float)
        ex = self.exponents
        x, y = xi[..., 0, None], xi[..., 1, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            dx = np.where(ex[:, 0] > 0, ex[:, 0] * x ** np.maximum(ex[:, 0] - 1, 0), 0.0) * y ** ex[:, 1]
            dy = np.where(ex[:, 1] > 0, ex[:, 1] * y ** np.maximum(ex[:, 1] - 1, 0), 0.0) * x ** ex[:, 0]
        return np.stack((dx @ self.coeffs, dy @ self.coeffs), axis=-1)


@lru_cache(maxsize=None)
def lagrange_basis(k):
    return LagrangeBasis(k)


def interval_basis(k, s):
    """Equispaced Lagrange basis of order k on [0, 1] at points ``s``."""
    s = np.asarray(s, dtype=float)
    if k == 0:
        return np.ones(s.shape + (1,))
    nodes = np.linspace(0.0, 1.0, k + 1)
    out = np.ones(s.shape + (k + 1,))
    for j in range(k + 1):
        for m in range(k + 1):
            if m != j:
                out[..., j] *= (s - nodes[m]) / (nodes[j] - nodes[m])
    return out


class DgSpace:
    """Discontinuous P_k space on the cells of a mesh."""

    def __init__(self, mesh, k):
        k = int(k)
        if k < 0:
            raise InvalidArgument("polynomial order must be non-negative")
        self.mesh = mesh
        self.k = k
        self.basis = lagrange_basis(k)
        self.dofs_per_cell = (k + 1) * (k + 2) // 2

    @property
    def dim(self):
        return self.mesh.num_cells * self.dofs_per_cell

    def cell_dofs(self, cell):
        n = self.dofs_per_cell
        return np.arange(cell * n, (cell + 1) * n)

    def node_coordinates(self):
        """Physical coordinates of every dof, shape (C, dofs_per_cell, 2)."""
        m = self.mesh
        v0 = m.vertices[m.cells[:, 0]]
        return v0[:, None, :] + np.einsum("cij,nj->cni", m.cell_jacobian, self.basis.nodes)

    def reference_coordinates(self, cells, points):
        m = self.mesh
        v0 = m.vertices[m.cells[cells, 0]]
        return np.einsum("...ij,...j->...i", m.cell_jacobian_inv[cells], points - v0)

    def basis_at(self, cells, points):
        """Basis values of the hosting cells at physical points, shape (n, dofs)."""
        return self.basis(self.reference_coordinates(cells, points))

    def basis_integrals(self):
        """Integral of each reference basis function (reference area 1/2)."""
        pts, w = cell_quadrature(self.k)
        return w @ self.basis(pts)

    def interpolate(self, f):
        """Nodal interpolant of a vectorised callable ``f(points) -> values``."""
        x = self.node_coordinates()
        return DgField(self, np.asarray(f(x), dtype=float).reshape(-1))

    def zero(self):
        return DgField(self, np.zeros(self.dim))


class MultiplierSpace(DgSpace):
    """Cellwise P_l space for the conservation multiplier."""


class TraceSpace:
    """Discontinuous P_k space on facets; periodic partners share dofs."""

    def __init__(self, mesh, k):
        k = int(k)
        if k < 0:
            raise InvalidArgument("polynomial order must be non-negative")
        self.mesh = mesh
        self.k = k
        self.dofs_per_facet = k + 1
        nf = mesh.num_facets
        raw = np.arange(nf * (k + 1)).reshape(nf, k + 1)
        dofs = raw.copy()
        partner = mesh.periodic_partner
        for f in np.flatnonzero((partner >= 0) & (mesh.boundary_marker == PERIODIC)):
            g = partner[f]
            if g > f:
                continue
            # facet f is the higher id: reuse the dofs of g, matched in space
            a_f = mesh.vertices[mesh.facets[f, 0]] + mesh.periodic_translation[f]
            a_g = mesh.vertices[mesh.facets[g, 0]]
            same = np.linalg.norm(a_f - a_g) < 1e-8 * max(1.0, mesh.facet_length[g])
            dofs[f] = raw[g] if same else raw[g][::-1]
        _, compact = np.unique(dofs, return_inverse=True)
        self.facet_dofs = compact.reshape(nf, k + 1)
        self.dim = int(compact.max()) + 1 if compact.size else 0

    def cell_dofs(self, cell):
        return self.facet_dofs[self.mesh.cell_facets[cell]].reshape(-1)

    def all_cell_dofs(self):
        m = self.mesh
        return self.facet_dofs[m.cell_facets].reshape(m.num_cells, -1)


class DgField:
    """Coefficient vector over a ``DgSpace``."""

    def __init__(self, space, coeffs=None):
        self.space = space
        if coeffs is None:
            coeffs = np.zeros(space.dim)
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (space.dim,):
            raise InvalidArgument(
                f"coefficient length {coeffs.shape} does not match space dimension {space.dim}")
        self.coeffs = coeffs

    @property
    def cell_coeffs(self):
        return self.coeffs.reshape(self.space.mesh.num_cells, self.space.dofs_per_cell)

    def copy(self):
        return type(self)(self.space, self.coeffs.copy())

    def eval(self, cell, x, tol=1e-10):
        x = np.asarray(x, dtype=float)
        mesh = self.space.mesh
        if mesh.barycentric(cell, x).min() < -tol:
            raise InvalidArgument(f"point {x.tolist()} lies outside cell {cell}")
        phi = self.space.basis_at(cell, x)
        return float(phi @ self.cell_coeffs[cell])

    def eval_many(self, cells, points):
        phi = self.space.basis_at(cells, points)
        return np.einsum("nj,nj->n", phi, self.cell_coeffs[cells])

    def cell_integrals(self):
        mesh = self.space.mesh
        return 2.0 * mesh.cell_area * (self.cell_coeffs @ self.space.basis_integrals())

    def integral(self):
        return float(self.cell_integrals().sum())

    def min(self):
        return float(self.coeffs.min())

    def max(self):
        return float(self.coeffs.max())


MultiplierField = DgField


class TraceField:
    def __init__(self, space, coeffs=None):
        self.space = space
        if coeffs is None:
            coeffs = np.zeros(space.dim)
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (space.dim,):
            raise InvalidArgument("coefficient length does not match trace space dimension")
        self.coeffs = coeffs


def l2_error(field, exact, degree=None):
    """L2 norm of ``field - exact`` with ``exact`` a vectorised callable."""
    space = field.space
    mesh = space.mesh
    if degree is None:
        degree = min(10, 2 * space.k + 4)
    pts, w = cell_quadrature(degree)
    phi = space.basis(pts)
    v0 = mesh.vertices[mesh.cells[:, 0]]
    x = v0[:, None, :] + np.einsum("cij,qj->cqi", mesh.cell_jacobian, pts)
    diff = field.cell_coeffs @ phi.T - exact(x)
    return float(np.sqrt(np.sum(diff ** 2 * w * mesh.cell_detj[:, None])))


def mass_error(field_t, field_0):
    """Absolute change of the domain integral between two fields."""
    if field_t.space is not field_0.space and (
            field_t.space.mesh is not field_0.space.mesh or field_t.space.k != field_0.space.k):
        raise InvalidArgument("fields must live on the same space")
    diff = field_t.cell_coeffs - field_0.cell_coeffs
    mesh = field_t.space.mesh
    return float(abs(np.sum(2.0 * mesh.cell_area * (diff @ field_t.space.basis_integrals()))))


# -- element matrices -----------------------------------------------------------------


def particle_blocks(space, cells, positions, values, num_cells=None):
    """Per-cell particle Gram matrices and right-hand sides.

    Returns ``(M, rhs, counts)`` with ``M[c] = sum_p phi(x_p) phi(x_p)^T`` and
    ``rhs[c] = sum_p phi(x_p) psi_p`` over particles hosted by cell ``c``.
    """
    nc = space.mesh.num_cells if num_cells is None else num_cells
    nd = space.dofs_per_cell
    phi = space.basis_at(cells, positions)
    M = np.zeros((nc, nd, nd))
    rhs = np.zeros((nc, nd))
    if len(cells):
        order = np.argsort(cells, kind="stable")
        cs = cells[order]
        ph = phi[order]
        starts = np.flatnonzero(np.r_[True, cs[1:] != cs[:-1]])
        outer = ph[:, :, None] * ph[:, None, :]
        M[cs[starts]] = np.add.reduceat(outer, starts, axis=0)
        rhs[cs[starts]] = np.add.reduceat(ph * np.asarray(values)[order, None], starts, axis=0)
    counts = np.bincount(cells, minlength=nc)
    return M, rhs, counts


def local_particle_blocks(space, cell, positions, values):
    """``(M_p, chi_p psi_p)`` for the particles of one cell."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    phi = space.basis_at(np.full(len(positions), cell), positions)
    return phi.T @ phi, phi.T @ np.asarray(values, dtype=float)


@dataclass
class LocalBlocks:
    """Element matrices of the PDE-constrained projection, batched over cells.

    Shapes: ``N`` (C, nk, nk), ``G`` (C, nk, nl), ``L`` (C, nk, nt),
    ``H`` (C, nl, nt), ``B`` (C, nt, nt) with ``nt = 3 (k + 1)`` local trace
    dofs. ``G_rhs`` maps the previous field onto the multiplier equation.
    """

    N: np.ndarray
    G: np.ndarray
    L: np.ndarray
    H: np.ndarray
    B: np.ndarray
    G_rhs: np.ndarray

    def cell(self, c):
        return LocalBlocks(*(getattr(self, f)[c] for f in ("N", "G", "L", "H", "B", "G_rhs")))


def _facet_geometry(mesh, trace_k, degree):
    """Facet quadrature data in cell-local facet order.

    Returns reference points (3, nq, 2), physical points (C, 3, nq, 2),
    weights scaled by facet length (C, 3, nq), and trace basis values at the
    points (C, 3, nq, nt_f) in each facet's global orientation.
    """
    s, w = facet_quadrature(degree)
    first = np.array([1, 2, 0])
    second = np.array([2, 0, 1])
    ref = _REF_VERTS[first][:, None, :] * (1.0 - s)[None, :, None] \
        + _REF_VERTS[second][:, None, :] * s[None, :, None]
    v = mesh.vertices[mesh.cells]  # (C, 3, 2)
    xa = v[:, first]
    xb = v[:, second]
    phys = xa[:, :, None, :] * (1.0 - s)[None, None, :, None] \
        + xb[:, :, None, :] * s[None, None, :, None]
    length = mesh.facet_length[mesh.cell_facets]
    wq = length[..., None] * w[None, None, :]
    flip = mesh.cells[:, first] != mesh.facets[mesh.cell_facets, 0]
    xi = interval_basis(trace_k, s)
    xi_flip = interval_basis(trace_k, 1.0 - s)
    xi_c = np.where(flip[..., None, None], xi_flip[None, None], xi[None, None])
    return ref, phys, wq, xi_c


def assemble_local_blocks(wspace, tspace, trace, velocity, dt, theta, beta, zeta, t=0.0,
                          cells=None):
    """Element matrices of the cellwise saddle system for every cell.

    ``velocity(x, t)`` must accept points of shape (..., 2) and return an array
    of the same shape.
    """
    if beta <= 0:
        raise InvalidArgument("beta must be positive")
    if dt <= 0:
        raise InvalidArgument("dt must be positive")
    if not 0.0 <= theta <= 1.0:
        raise InvalidArgument("theta must lie in [0, 1]")
    mesh = wspace.mesh
    k, l = wspace.k, tspace.k
    deg = 2 * max(k, l) + 1
    pts, w = cell_quadrature(deg)
    phi = wspace.basis(pts)                     # (q, nk)
    tau = tspace.basis(pts)                     # (q, nl)
    gphi_ref = wspace.basis.grad(pts)           # (q, nk, 2)
    gtau_ref = tspace.basis.grad(pts)           # (q, nl, 2)
    jinv = mesh.cell_jacobian_inv               # (C, 2, 2)
    detj = mesh.cell_detj
    if cells is not None:
        cells = np.atleast_1d(cells)
        jinv, detj = jinv[cells], detj[cells]
    else:
        cells = np.arange(mesh.num_cells)

    # physical gradient = J^{-T} grad_ref
    gphi = np.einsum("cji,qnj->cqni", jinv, gphi_ref)
    gtau = np.einsum("cji,qnj->cqni", jinv, gtau_ref)
    wdet = w[None, :] * detj[:, None]           # (C, q)

    v0 = mesh.vertices[mesh.cells[cells, 0]]
    xq = v0[:, None, :] + np.einsum("cij,qj->cqi", mesh.cell_jacobian[cells], pts)
    a = np.asarray(velocity(xq, t), dtype=float)
    a = np.broadcast_to(a, xq.shape)

    mass_phitau = np.einsum("cq,qi,qj->cij", wdet, phi, tau, optimize=True)
    adv = np.einsum("cq,qi,cqd,cqjd->cij", wdet, phi, a, gtau, optimize=True)
    G = mass_phitau / dt - theta * adv
    G_rhs = mass_phitau / dt + (1.0 - theta) * adv

    stiff = 0.0 if zeta == 0 else np.einsum("cq,cqid,cqjd->cij", wdet, gphi, gphi, optimize=True)

    ref, phys, wq, xi = _facet_geometry(mesh, trace.k, 2 * k + 1)
    phys, wq, xi = phys[cells], wq[cells], xi[cells]
    phi_f = wspace.basis(ref)                   # (3, nq, nk)
    tau_f = tspace.basis(ref)                   # (3, nq, nl)
    nrm = mesh.outward_normals()[cells]         # (C, 3, 2)
    af = np.asarray(velocity(phys, t), dtype=float)
    af = np.broadcast_to(af, phys.shape)
    an = np.einsum("cfqd,cfd->cfq", af, nrm)

    facet_mass = np.einsum("cfq,fqi,fqj->cij", wq, phi_f, phi_f, optimize=True)
    N = zeta * stiff + beta * facet_mass

    nc = len(cells)
    ntf = trace.k + 1
    L = -beta * np.einsum("cfq,fqi,cfqj->cifj", wq, phi_f, xi, optimize=True).reshape(nc, -1, 3 * ntf)
    H = np.einsum("cfq,cfq,fqi,cfqj->cifj", wq, an, tau_f, xi, optimize=True).reshape(nc, -1, 3 * ntf)
    Bf = beta * np.einsum("cfq,cfqi,cfqj->cfij", wq, xi, xi, optimize=True)
    B = np.zeros((nc, 3 * ntf, 3 * ntf))
    for f in range(3):
        B[:, f * ntf:(f + 1) * ntf, f * ntf:(f + 1) * ntf] = Bf[:, f]
    return LocalBlocks(N=N, G=G, L=L, H=H, B=B, G_rhs=G_rhs)
