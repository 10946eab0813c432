import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import monolithic_pde_solve
from picproj.advection import constant_velocity, rotating_velocity
from picproj.errors import ConfigurationError, InvalidArgument, UnderdeterminedCellError
from picproj.fespace import DgField, DgSpace, mass_error, particle_blocks
from picproj.mesh import CLOSED, bi_periodic_unit_square, build_rectangle_mesh, set_boundary_markers
from picproj.particles import create, generate_lattice, generate_random_cell
from picproj.projection import (CgSpace, PdeSpaces, l2_project, l2_project_bounded, l2_project_cg,
                                local_residuals, pde_project, pde_project_assemble,
                                pde_project_solve)
from picproj.smallsolve import kkt_residual


def lattice_particles(mesh, values, n=24):
    pos = generate_lattice(((0, 0), (1, 1)), (n, n))
    return create(mesh, pos, [values(pos)], ["psi"])


def quadratic(x):
    return 1 + x[..., 0] - 0.5 * x[..., 1] + 0.3 * x[..., 0] * x[..., 1]


class TestL2:
    def test_constant(self, square4):
        ps = lattice_particles(square4, lambda x: np.full(len(x), 1.5))
        f = l2_project(ps, "psi", DgSpace(square4, 2))
        assert np.allclose(f.coeffs, 1.5, atol=1e-13)

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_reproduces_polynomials(self, square4, k):
        ps = lattice_particles(square4, quadratic, n=40)
        V = DgSpace(square4, k)
        f = l2_project(ps, "psi", V)
        if k >= 2:
            assert np.abs(f.coeffs - V.interpolate(quadratic).coeffs).max() <= 1e-11

    def test_underdetermined(self, square4):
        ps = create(square4, [square4.cell_centroid[c] for c in range(square4.num_cells)],
                    [np.ones(square4.num_cells)], ["psi"])
        with pytest.raises(UnderdeterminedCellError) as err:
            l2_project(ps, "psi", DgSpace(square4, 1))
        assert err.value.cell == 0

    def test_collinear_particles(self):
        # enough particles, but all on one line: the Gram matrix is singular
        m = build_rectangle_mesh(1, 1)
        t = np.linspace(0.1, 0.4, 5)
        pos = np.concatenate((np.column_stack((t + 0.5, t)), [[0.2, 0.6], [0.1, 0.7], [0.3, 0.8]]))
        ps = create(m, pos, [np.ones(len(pos))], ["psi"])
        with pytest.raises(UnderdeterminedCellError):
            l2_project(ps, "psi", DgSpace(m, 1))


class TestBounded:
    def test_inactive_bounds(self, square4):
        ps = lattice_particles(square4, lambda x: 0.2 + 0.5 * x[:, 0])
        V = DgSpace(square4, 1)
        a = l2_project(ps, "psi", V)
        b = l2_project_bounded(ps, "psi", V, 0.0, 1.0)
        assert np.array_equal(a.coeffs, b.coeffs)

    def test_saturated(self, square4):
        ps = lattice_particles(square4, lambda x: np.full(len(x), 2.0))
        f = l2_project_bounded(ps, "psi", DgSpace(square4, 1), 0.0, 1.0)
        assert np.all(f.coeffs == 1.0)

    def test_step_data(self, square4, rng):
        ps = lattice_particles(square4, lambda x: (x[:, 0] > 0.4).astype(float))
        V = DgSpace(square4, 2)
        f = l2_project_bounded(ps, "psi", V, 0.0, 1.0)
        assert f.coeffs.min() >= 0.0 and f.coeffs.max() <= 1.0
        assert l2_project(ps, "psi", V).coeffs.min() < -1e-3     # the unconstrained fit overshoots
        M, q, _ = particle_blocks(V, ps.hosts, ps.positions, ps.get("psi"))
        for c in range(square4.num_cells):
            assert kkt_residual(M[c], q[c], 0.0, 1.0, f.cell_coeffs[c]) <= 1e-9

    def test_bad_bounds(self, square4):
        ps = lattice_particles(square4, lambda x: x[:, 0])
        with pytest.raises(InvalidArgument):
            l2_project_bounded(ps, "psi", DgSpace(square4, 1), 1.0, 1.0)


class TestContinuous:
    def test_dimension(self, square4):
        assert CgSpace(square4, 1).dim == 25
        assert CgSpace(square4, 2).dim == 81

    def test_constant_and_linear(self, square4):
        ps = lattice_particles(square4, lambda x: 3 * x[:, 0] - x[:, 1] + 0.5)
        S = CgSpace(square4, 1)
        f = l2_project_cg(ps, "psi", S, tol=1e-13)
        x = ps.positions
        assert np.abs(f.eval_many(ps.hosts, x) - (3 * x[:, 0] - x[:, 1] + 0.5)).max() <= 1e-9

    def test_dense_oracle(self, rng):
        m = build_rectangle_mesh(1, 1)
        pos = rng.random((40, 2))
        vals = rng.normal(size=40)
        ps = create(m, pos, [vals], ["psi"])
        S = CgSpace(m, 2)
        f = l2_project_cg(ps, "psi", S, tol=1e-14)
        phi = np.zeros((40, S.dim))
        loc = S.basis_at(ps.hosts, ps.positions)
        for p in range(40):
            phi[p, S.dofmap[ps.hosts[p]]] = loc[p]
        ref = np.linalg.lstsq(phi, ps.get("psi"), rcond=None)[0]
        assert np.abs(f.coeffs - ref).max() <= 1e-8

    def test_unsupported_dof(self, square4):
        ps = create(square4, [[0.1, 0.05]], [[1.0]], ["psi"])
        with pytest.raises(UnderdeterminedCellError):
            l2_project_cg(ps, "psi", CgSpace(square4, 1))

    def test_needs_k1(self, square4):
        with pytest.raises(InvalidArgument):
            CgSpace(square4, 0)


# -- constrained projection ----------------------------------------------------------


def linear(x):
    return 1 + x[..., 0] - 0.5 * x[..., 1]


def pde_setup(mesh, k, rng, n=30, l=0):
    """Random particles, the three spaces, and an exactly representable starting field."""
    pos, _ = generate_random_cell(mesh, n, int(rng.integers(2**31)))
    vals = rng.normal(size=len(pos))
    ps = create(mesh, pos, [vals], ["psi"])
    V = DgSpace(mesh, k)
    return ps, PdeSpaces.create(V, l), V.interpolate(quadratic if k > 1 else linear)


class TestPde:
    @pytest.mark.parametrize("k", [1, 2])
    @pytest.mark.parametrize("l", [0, 1])
    @pytest.mark.parametrize("theta", [0.5, 1.0])
    @pytest.mark.parametrize("zeta", [0.0, 2.0])
    def test_matches_monolithic(self, k, l, theta, zeta, rng):
        m = bi_periodic_unit_square(1)
        ps, spaces, star = pde_setup(m, k, rng, 15, l)
        a, dt, beta = [0.7, 0.4], 0.1, 1e-3
        psi, lam, pb = pde_project(ps, "psi", spaces, constant_velocity(a), dt, star, theta, beta, zeta)
        ref = monolithic_pde_solve(m, k, l, ps.positions, ps.get("psi"), a, dt, theta, beta, zeta,
                                   quadratic if k > 1 else linear, period=1.0)
        q = rng.dirichlet(np.ones(3), size=20)
        for c in range(m.num_cells):
            x = q @ m.vertices[m.cells[c]]
            cc = np.full(20, c)
            assert np.abs(psi.eval_many(cc, x) - ref.psi(c, x)).max() <= 1e-10 * np.abs(ref.psi(c, x)).max()
            assert np.abs(lam.eval_many(cc, x) - ref.lam(c, x)).max() <= 1e-10 * np.abs(ref.lam(c, x)).max()
        scale = max(np.abs(v).max() for v in ref.trace.values())
        for f, v in ref.trace.items():
            assert np.abs(pb.coeffs[spaces.Wbar.facet_dofs[f]] - v).max() <= 1e-10 * scale

    def test_condensed_dimension(self, periodic8, rng):
        for k in (1, 2):
            ps, spaces, star = pde_setup(periodic8, k, rng, 10)
            system = pde_project_assemble(ps, "psi", spaces, constant_velocity([1, 0]), 0.1, star)
            assert system.matrix.shape == ((k + 1) * (periodic8.num_facets - 16),) * 2
            assert abs(system.matrix - system.matrix.T).max() <= 1e-12 * abs(system.matrix).max()

    def test_empty_cell(self, square4, rng):
        ps = create(square4, [[0.9, 0.1]], [[1.0]], ["psi"])
        V = DgSpace(square4, 1)
        with pytest.raises(UnderdeterminedCellError):
            pde_project(ps, "psi", PdeSpaces.create(V), constant_velocity([0, 0]), 0.1, V.zero(), zeta=1.0)

    def test_stationary_exact_data(self, square4, rng):
        m = set_boundary_markers(square4, CLOSED)
        ps = create(m, rng.random((400, 2)))
        ps = create(m, ps.positions, [quadratic(ps.positions)], ["psi"])
        V = DgSpace(m, 2)
        star = V.interpolate(quadratic)
        psi, lam, pb = pde_project(ps, "psi", PdeSpaces.create(V), constant_velocity([0, 0]), 0.1, star)
        # exact up to round-off amplified by the beta = 1e-6 penalty
        assert np.abs(psi.coeffs - star.coeffs).max() <= 1e-8
        assert np.abs(lam.coeffs).max() <= 1e-8
        s = np.linspace(0, 1, 3)
        for f in range(m.num_facets):
            p, q = m.vertices[m.facets[f]]
            exact = quadratic(p + s[:, None] * (q - p))
            assert np.allclose(pb.coeffs[PdeSpaces.create(V).Wbar.facet_dofs[f]], exact, atol=1e-8)

    def test_local_residual(self, periodic8, rng):
        ps, spaces, star = pde_setup(periodic8, 2, rng, 12)
        system = pde_project_assemble(ps, "psi", spaces, constant_velocity([0.3, -0.8]), 0.05, star,
                                      zeta=1.0)
        psi, lam, pb = pde_project_solve(system)
        assert local_residuals(system, psi, lam, pb).max() <= 1e-10

    def test_theta_independent_for_l0(self, periodic8, rng):
        ps, spaces, star = pde_setup(periodic8, 1, rng, 8)
        v = constant_velocity([0.3, -0.8])
        a = pde_project(ps, "psi", spaces, v, 0.05, star, theta=1.0)[0]
        b = pde_project(ps, "psi", spaces, v, 0.05, star, theta=0.5)[0]
        assert np.array_equal(a.coeffs, b.coeffs)

    def test_cg_agrees_with_direct(self, periodic8, rng):
        ps, spaces, star = pde_setup(periodic8, 2, rng, 10)
        v = constant_velocity([0.3, -0.8])
        a = pde_project(ps, "psi", spaces, v, 0.05, star, beta=1e-3, solver="direct")[0]
        b = pde_project(ps, "psi", spaces, v, 0.05, star, beta=1e-3, solver="cg")[0]
        assert np.abs(a.coeffs - b.coeffs).max() <= 1e-8 * np.abs(a.coeffs).max()

    def test_unknown_solver(self, periodic8, rng):
        ps, spaces, star = pde_setup(periodic8, 1, rng, 4)
        with pytest.raises(InvalidArgument):
            pde_project(ps, "psi", spaces, constant_velocity([0, 1]), 0.1, star, solver="gmres")

    def test_boundary_flux_rejected(self, square4, rng):
        m = set_boundary_markers(square4, CLOSED)
        ps, spaces, star = pde_setup(m, 1, rng, 6)
        with pytest.raises(ConfigurationError):
            pde_project(ps, "psi", spaces, constant_velocity([1, 0]), 0.1, star)

    @pytest.mark.parametrize("k", [1, 2])
    def test_wall_pinning_conserves(self, square4, rng, k):
        m = set_boundary_markers(square4, CLOSED)
        ps, spaces, star = pde_setup(m, k, rng, 10)

        def vel(x, t=0.0):
            # rotation about the centre: nonzero normal velocity on the walls
            return rotating_velocity()(np.asarray(x) - [0.4, 0.5], t)

        psi, _, pb = pde_project(ps, "psi", spaces, vel, 0.05, star, wall_value=0.0)
        assert abs(psi.integral() - star.integral()) <= 1e-12 * abs(star.integral())
        walls = np.unique(spaces.Wbar.facet_dofs[m.boundary_facets])
        assert np.all(pb.coeffs[walls] == 0.0)

    def test_beta_positive(self, periodic8, rng):
        ps, spaces, star = pde_setup(periodic8, 1, rng, 4)
        with pytest.raises(InvalidArgument):
            pde_project(ps, "psi", spaces, constant_velocity([0, 1]), 0.1, star, beta=0.0)


class TestMassError:
    def test_identical(self, square4):
        f = DgSpace(square4, 2).interpolate(quadratic)
        assert mass_error(f, f) == 0.0

    def test_constants(self, square4):
        V = DgSpace(square4, 1)
        one = DgField(V, np.ones(V.dim))
        two = DgField(V, np.full(V.dim, 2.0))
        assert mass_error(two, one) == pytest.approx(1.0, abs=1e-14)

    def test_other_space(self, square4):
        with pytest.raises(InvalidArgument):
            mass_error(DgSpace(square4, 1).zero(), DgSpace(square4, 2).zero())

    @given(st.floats(-10, 10), st.floats(-10, 10))
    def test_symmetric(self, a, b):
        V = DgSpace(build_rectangle_mesh(2, 3), 1)
        fa = V.interpolate(lambda x: a * x[..., 0] + 1)
        fb = V.interpolate(lambda x: b * x[..., 1] - 1)
        assert mass_error(fa, fb) == pytest.approx(mass_error(fb, fa), abs=1e-12)
