"""Particle-to-mesh projections.

* :func:`l2_project` - cellwise least-squares fit onto a discontinuous space.
* :func:`l2_project_bounded` - the same fit with box constraints per cell.
* :func:`l2_project_cg` - global least-squares fit onto a continuous space.
* :func:`pde_project_assemble` / :func:`pde_project_solve` - least-squares fit
  constrained by a discrete conservation law, solved by static condensation
  onto facet unknowns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import smallsolve
from .errors import ConfigurationError, InvalidArgument, SingularSystemError, UnderdeterminedCellError
from .fespace import (DgField, MultiplierSpace, TraceField, TraceSpace, assemble_local_blocks,
                      lagrange_basis, lagrange_multi_indices, particle_blocks)
from .mesh import PERIODIC
from .quadrature import facet_quadrature

COND_LIMIT = 1e13


def _scalar_values(pset, slot):
    if pset.slot_ncomp(slot) != 1:
        raise InvalidArgument("only scalar slots can be projected")
    return pset.get(slot)


def _check_cells(M, counts, ndofs):
    few = np.flatnonzero(counts < ndofs)
    if len(few):
        c = few[0]
        raise UnderdeterminedCellError(c, counts[c])
    cond = np.linalg.cond(M)
    bad = np.flatnonzero(~(cond < COND_LIMIT))
    if len(bad):
        c = bad[0]
        raise UnderdeterminedCellError(
            c, counts[c], f"cell {c} is underdetermined ({counts[c]} particles, "
                          f"particle Gram condition number {cond[c]:.3g})")


def l2_project(pset, slot, space):
    """Cellwise least-squares fit of particle values onto ``space``."""
    values = _scalar_values(pset, slot)
    M, rhs, counts = particle_blocks(space, pset.hosts, pset.positions, values)
    _check_cells(M, counts, space.dofs_per_cell)
    coeffs = np.linalg.solve(M, rhs[..., None])[..., 0]
    return DgField(space, coeffs.reshape(-1))


def l2_project_bounded(pset, slot, space, lower, upper):
    """Cellwise least-squares fit with coefficients confined to ``[lower, upper]``."""
    if not lower < upper:
        raise InvalidArgument("lower bound must be below upper bound")
    values = _scalar_values(pset, slot)
    M, rhs, counts = particle_blocks(space, pset.hosts, pset.positions, values)
    _check_cells(M, counts, space.dofs_per_cell)
    coeffs = np.linalg.solve(M, rhs[..., None])[..., 0]
    span = upper - lower
    # rounding-level violations are clipped; genuine ones go to the QP
    over = np.maximum(coeffs - upper, lower - coeffs).max(axis=1)
    tiny = (over > 0) & (over <= 1e-13 * span)
    coeffs[tiny] = np.clip(coeffs[tiny], lower, upper)
    for c in np.flatnonzero(over > 1e-13 * span):
        coeffs[c] = smallsolve.box_qp(M[c], rhs[c], lower, upper)
    return DgField(space, coeffs.reshape(-1))


# -- continuous space -----------------------------------------------------------------


class CgSpace:
    """Continuous Lagrange P_k space (no periodic identification)."""

    def __init__(self, mesh, k):
        if k < 1:
            raise InvalidArgument("continuous spaces need k >= 1")
        self.mesh = mesh
        self.k = k
        self.basis = lagrange_basis(k)
        self.dofs_per_cell = self.basis.dim
        multi = lagrange_multi_indices(k)
        keys = {}
        dofmap = np.empty((mesh.num_cells, len(multi)), dtype=np.int64)
        for c, verts in enumerate(mesh.cells.tolist()):
            for j, idx in enumerate(multi):
                key = tuple(sorted((v, a) for v, a in zip(verts, idx) if a > 0))
                dofmap[c, j] = keys.setdefault(key, len(keys))
        self.dofmap = dofmap
        self.dim = len(keys)

    def basis_at(self, cells, points):
        m = self.mesh
        v0 = m.vertices[m.cells[cells, 0]]
        ref = np.einsum("...ij,...j->...i", m.cell_jacobian_inv[cells], points - v0)
        return self.basis(ref)


class CgField:
    def __init__(self, space, coeffs):
        self.space = space
        self.coeffs = np.asarray(coeffs, dtype=float)

    def eval_many(self, cells, points):
        phi = self.space.basis_at(cells, points)
        return np.einsum("nj,nj->n", phi, self.coeffs[self.space.dofmap[cells]])


def particle_gram_cg(space, pset, values):
    phi = space.basis_at(pset.hosts, pset.positions)
    dofs = space.dofmap[pset.hosts]
    rows = np.repeat(dofs, dofs.shape[1], axis=1).ravel()
    cols = np.tile(dofs, (1, dofs.shape[1])).ravel()
    vals = (phi[:, :, None] * phi[:, None, :]).ravel()
    A = sp.csr_matrix((vals, (rows, cols)), shape=(space.dim, space.dim))
    b = np.zeros(space.dim)
    np.add.at(b, dofs.ravel(), (phi * values[:, None]).ravel())
    return A, b


def l2_project_cg(pset, slot, space, tol=1e-10):
    """Global least-squares fit onto a continuous space, solved by CG."""
    values = _scalar_values(pset, slot)
    A, b = particle_gram_cg(space, pset, values)
    if np.any(A.diagonal() <= 0):
        dof = int(np.argmin(A.diagonal()))
        cell = int(np.flatnonzero((space.dofmap == dof).any(axis=1))[0])
        raise UnderdeterminedCellError(cell, int(np.count_nonzero(pset.hosts == cell)),
                                       f"no particle data supports dof {dof}")
    x, _ = smallsolve.cg_solve(A, b, tol=tol, maxit=10 * space.dim)
    return CgField(space, x)


# -- PDE-constrained projection --------------------------------------------------------


@dataclass
class PdeSpaces:
    """The three spaces of the constrained projection."""

    W: object
    T: object
    Wbar: object

    @classmethod
    def create(cls, wspace, l=0):
        mesh = wspace.mesh
        return cls(wspace, MultiplierSpace(mesh, l), TraceSpace(mesh, wspace.k))


@dataclass
class CondensedSystem:
    spaces: PdeSpaces
    matrix: sp.csr_matrix
    rhs: np.ndarray
    X: np.ndarray            # A_K^{-1} [L; H], per cell
    y: np.ndarray            # A_K^{-1} f_K, per cell
    trace_dofs: np.ndarray   # (C, 3 (k+1)) global trace dofs per cell
    saddle: np.ndarray       # A_K
    coupling: np.ndarray     # [L; H]
    local_rhs: np.ndarray    # f_K
    B: np.ndarray
    fixed: np.ndarray = None  # pinned trace dofs


def check_pde_boundary(mesh, velocity, t, tol=1e-10):
    """Require periodic facets or vanishing normal velocity on the boundary."""
    bnd = mesh.boundary_facets
    bnd = bnd[mesh.boundary_marker[bnd] != PERIODIC]
    if len(bnd) == 0:
        return
    s, _ = facet_quadrature(3)
    va = mesh.vertices[mesh.facets[bnd, 0]]
    vb = mesh.vertices[mesh.facets[bnd, 1]]
    pts = va[:, None, :] * (1.0 - s)[None, :, None] + vb[:, None, :] * s[None, :, None]
    a = np.broadcast_to(np.asarray(velocity(pts, t), dtype=float), pts.shape)
    an = np.einsum("fqd,fd->fq", a, mesh.facet_normal[bnd])
    scale = max(1.0, float(np.abs(a).max()))
    if np.abs(an).max() > tol * scale:
        f = bnd[np.argmax(np.abs(an).max(axis=1))]
        raise ConfigurationError(
            f"normal velocity does not vanish on non-periodic boundary facet {int(f)}")


def _wall_trace_dofs(Wbar):
    mesh = Wbar.mesh
    bnd = mesh.boundary_facets
    bnd = bnd[mesh.boundary_marker[bnd] != PERIODIC]
    return np.unique(Wbar.facet_dofs[bnd])


def pde_project_assemble(pset, slot, spaces, velocity, dt, psi_star, theta=1.0,
                         beta=1e-6, zeta=0.0, t=0.0, wall_value=None):
    """Assemble the condensed facet system of the conservative projection.

    ``psi_star`` is the field the conservation law starts from (the previous
    mesh field). ``velocity(x, t)`` is evaluated at time ``t``.

    By default the normal velocity must vanish on every non-periodic boundary
    facet. Passing ``wall_value`` instead pins the facet unknowns there to that
    value, which removes the boundary flux when it is 0; this suits polygonal
    approximations of curved walls, where ``a . n`` only vanishes on average.
    """
    W, T, Wbar = spaces.W, spaces.T, spaces.Wbar
    mesh = W.mesh
    if beta <= 0:
        raise InvalidArgument("beta must be positive")
    if wall_value is None:
        check_pde_boundary(mesh, velocity, t)
    values = _scalar_values(pset, slot)
    Mp, chi, counts = particle_blocks(W, pset.hosts, pset.positions, values)
    empty = np.flatnonzero(counts == 0)
    if len(empty):
        raise UnderdeterminedCellError(empty[0], 0)

    blocks = assemble_local_blocks(W, T, Wbar, velocity, dt, theta, beta, zeta, t=t)
    nk, nl = W.dofs_per_cell, T.dofs_per_cell
    nc = mesh.num_cells
    A = np.zeros((nc, nk + nl, nk + nl))
    A[:, :nk, :nk] = Mp + blocks.N
    A[:, :nk, nk:] = blocks.G
    A[:, nk:, :nk] = np.swapaxes(blocks.G, 1, 2)
    LH = np.concatenate((blocks.L, blocks.H), axis=1)
    f = np.concatenate((chi, np.einsum("cij,ci->cj", blocks.G_rhs, psi_star.cell_coeffs)), axis=1)

    cond = np.linalg.cond(A)
    bad = np.flatnonzero(~(cond < COND_LIMIT))
    if len(bad):
        c = bad[0]
        raise UnderdeterminedCellError(
            c, counts[c], f"cell {c}: singular local saddle block ({counts[c]} particles)")
    sol = np.linalg.solve(A, np.concatenate((LH, f[..., None]), axis=2))
    X, y = sol[..., :-1], sol[..., -1]

    S = blocks.B - np.einsum("cai,caj->cij", LH, X)
    S = 0.5 * (S + np.swapaxes(S, 1, 2))
    r = -np.einsum("cai,ca->ci", LH, y)
    dofs = Wbar.all_cell_dofs()
    nt = dofs.shape[1]
    rows = np.repeat(dofs, nt, axis=1).ravel()
    cols = np.tile(dofs, (1, nt)).ravel()
    matrix = sp.csr_matrix((S.ravel(), (rows, cols)), shape=(Wbar.dim, Wbar.dim))
    rhs = np.zeros(Wbar.dim)
    np.add.at(rhs, dofs.ravel(), r.ravel())
    fixed = np.zeros(0, dtype=np.int64)
    if wall_value is not None:
        fixed = _wall_trace_dofs(Wbar)
        matrix, rhs = _pin_dofs(matrix, rhs, fixed, float(wall_value))
    return CondensedSystem(spaces, matrix, rhs, X, y, dofs, A, LH, f, blocks.B, fixed)


def _pin_dofs(matrix, rhs, fixed, value):
    """Decouple the rows and columns of ``fixed``, keeping symmetry.

    The pinned rows keep their diagonal entry so the matrix scaling (and the
    pivoting of the sparse factorisation) is undisturbed.
    """
    if len(fixed) == 0:
        return matrix, rhs
    g = np.zeros(matrix.shape[0])
    g[fixed] = value
    rhs = rhs - matrix @ g
    keep = np.ones(matrix.shape[0])
    keep[fixed] = 0.0
    diag = np.where(keep == 0.0, matrix.diagonal(), 0.0)
    K = sp.diags(keep)
    matrix = (K @ matrix @ K + sp.diags(diag)).tocsr()
    rhs[fixed] = diag[fixed] * value
    return matrix, rhs


def _full_residual(system, u, psibar):
    """Residual of the uncondensed block system at ``(u, psibar)``."""
    local = psibar[system.trace_dofs]
    r_cell = system.local_rhs - np.einsum("cab,cb->ca", system.saddle, u) \
        - np.einsum("cai,ci->ca", system.coupling, local)
    r_loc = -np.einsum("cai,ca->ci", system.coupling, u) - np.einsum("cij,cj->ci", system.B, local)
    r_trace = np.zeros(len(psibar))
    np.add.at(r_trace, system.trace_dofs.ravel(), r_loc.ravel())
    if system.fixed is not None:
        r_trace[system.fixed] = 0.0
    return r_cell, r_trace


def pde_project_solve(system, solver="direct", tol=1e-12, refine=1):
    """Solve the condensed system and back-substitute the cell unknowns.

    With the direct solver, ``refine`` steps of iterative refinement are taken
    on the uncondensed system. Its residual avoids the cancellation in the
    Schur complement, which costs several digits in the trace unknowns when
    ``beta`` is small. Returns ``(psi, lam, psibar)``.
    """
    if solver == "direct":
        factor = smallsolve.SparseFactor(system.matrix)
        psibar = factor.solve(system.rhs)
    elif solver == "cg":
        # small beta makes the trace system stiff; allow many sweeps
        psibar, _ = smallsolve.cg_solve(system.matrix, system.rhs, tol=tol,
                                        maxit=50 * max(system.matrix.shape[0], 1))
        refine = 0
    else:
        raise InvalidArgument(f"unknown solver {solver!r}")
    if not np.all(np.isfinite(psibar)):
        raise SingularSystemError("trace solve failed")
    u = system.y - np.einsum("cai,ci->ca", system.X, psibar[system.trace_dofs])
    for _ in range(refine):
        r_cell, r_trace = _full_residual(system, u, psibar)
        z = np.linalg.solve(system.saddle, r_cell[..., None])[..., 0]
        rhs = r_trace.copy()
        np.add.at(rhs, system.trace_dofs.ravel(),
                  -np.einsum("cai,ca->ci", system.coupling, z).ravel())
        if system.fixed is not None:
            rhs[system.fixed] = 0.0
        dbar = factor.solve(rhs)
        psibar = psibar + dbar
        u = u + z - np.einsum("cai,ci->ca", system.X, dbar[system.trace_dofs])
    nk = system.spaces.W.dofs_per_cell
    psi = DgField(system.spaces.W, u[:, :nk].reshape(-1))
    lam = DgField(system.spaces.T, u[:, nk:].reshape(-1))
    return psi, lam, TraceField(system.spaces.Wbar, psibar)


def local_residuals(system, psi, lam, psibar):
    """Max-norm residual of the full cellwise block system, per cell."""
    u = np.concatenate((psi.cell_coeffs, lam.cell_coeffs), axis=1)
    local = psibar.coeffs[system.trace_dofs]
    r12 = np.einsum("cab,cb->ca", system.saddle, u) + np.einsum("cai,ci->ca", system.coupling, local) \
        - system.local_rhs
    return np.abs(r12).max(axis=1)


def pde_project(pset, slot, spaces, velocity, dt, psi_star, theta=1.0, beta=1e-6, zeta=0.0,
                t=0.0, solver="direct", wall_value=None):
    system = pde_project_assemble(pset, slot, spaces, velocity, dt, psi_star, theta, beta, zeta, t,
                                  wall_value=wall_value)
    return pde_project_solve(system, solver)
