import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from picproj.errors import InvalidArgument, LostParticleError
from picproj.fespace import DgField, DgSpace
from picproj.mesh import build_rectangle_mesh
from picproj.particles import (SENTINEL, ParticleSet, add_delete_sweep, create, generate_lattice,
                               generate_random_cell, increment, interpolate, round_to_bounds)
from picproj.projection import l2_project


def linear(x):
    return 2 * x[..., 0] + x[..., 1]


class TestCreate:
    def test_single(self, square4):
        ps = create(square4, [[0.5, 0.5]], [[1.0]], ["psi"])
        c = ps.hosts[0]
        assert len(ps.bucket(c)) == 1 and square4.contains(c, [0.5, 0.5])

    def test_lattice_density(self):
        m = build_rectangle_mesh(11, 11)
        pos = generate_lattice(((0, 0), (1, 1)), (63, 63))
        assert abs(len(pos) - 3984) <= 0.01 * 3984
        ps = create(m, pos)
        assert len(ps.rejected) == 0
        assert ps.counts().mean() == pytest.approx(16.4, abs=0.1)

    def test_rejected(self, square4):
        ps = create(square4, [[0.5, 0.5], [2.0, 2.0]], [[1.0, 2.0]])
        assert len(ps) == 1 and list(ps.rejected) == [1]

    def test_length_mismatch(self, square4):
        with pytest.raises(InvalidArgument):
            create(square4, [[0.5, 0.5]], [[1.0, 2.0]])

    def test_slot_limits(self, square4):
        with pytest.raises(InvalidArgument):
            create(square4, [[0.5, 0.5]], [np.zeros((1, 4))])
        ps = create(square4, [[0.5, 0.5]], [np.zeros((1, 3)), [7.0]], ["v", "psi"])
        assert ps.slot_ncomp("v") == 3 and ps.get(2)[0] == 7.0


class TestGenerators:
    def test_lattice_two_by_two(self):
        pos = generate_lattice(((0, 0), (1, 1)), (2, 2))
        assert sorted(map(tuple, pos)) == [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)]

    def test_lattice_points_locate(self):
        m = build_rectangle_mesh(7, 5)
        pos = generate_lattice(((0, 0), (1, 1)), (20, 13))
        assert np.all(m.locate_points(pos) >= 0)

    def test_random_deterministic(self, square4):
        a, _ = generate_random_cell(square4, 5, seed=3)
        b, _ = generate_random_cell(square4, 5, seed=3)
        c, _ = generate_random_cell(square4, 5, seed=4)
        assert np.array_equal(a, b) and not np.array_equal(a, c)

    def test_random_uniform_in_cell(self, square4):
        n = 100_000
        pos, hosts = generate_random_cell(square4, n, seed=1, cells=[6])
        v = square4.vertices[square4.cells[6]]
        # barycentric coordinates of a uniform point are Dirichlet(1,1,1): var = 1/18
        bary = square4.barycentric(hosts, pos)
        sigma = np.sqrt(1 / 18 / n)
        assert np.all(np.abs(bary.mean(axis=0) - 1 / 3) <= 3 * sigma)
        assert np.allclose(pos.mean(axis=0), v.mean(axis=0), atol=3 * sigma * np.ptp(v, axis=0).max())
        assert bary.min() >= 0.0

    @given(st.integers(1, 4), st.integers(0, 2**32 - 1))
    def test_random_inside(self, ppc, seed):
        m = build_rectangle_mesh(3, 2)
        pos, hosts = generate_random_cell(m, ppc, seed)
        assert len(pos) == ppc * m.num_cells
        assert m.barycentric(hosts, pos).min() >= -1e-15


class TestRelocate:
    def make(self, square4):
        c = square4.cell_centroid
        pos = np.array([c[0], c[0] + [0.01, -0.005], c[0] + [-0.005, 0.01], c[1]])
        return create(square4, pos, [[10.0, 11.0, 12.0, 13.0]], ["id"])

    def test_conserves(self, square4):
        ps = self.make(square4)
        ps.relocate([(0, 0, 1)])
        assert len(ps) == 4 and len(ps.bucket(1)) == 2

    def test_open_exit_deletes(self, square4):
        ps = self.make(square4)
        ps.relocate([(0, 1, SENTINEL)], open_exit=[True])
        assert len(ps) == 3
        assert 11.0 not in ps.get("id")

    def test_lost(self, square4):
        ps = self.make(square4)
        with pytest.raises(LostParticleError):
            ps.relocate([(0, 1, SENTINEL)])

    def test_two_moves_same_bucket(self, square4):
        ps = self.make(square4)
        ps.relocate([(0, 0, 1), (0, 2, 1)])
        survivor = ps.bucket(0)
        assert len(survivor) == 1 and ps.get("id")[survivor[0]] == 11.0
        # appended to the receiving bucket after its resident, in move order
        assert list(ps.get("id")[ps.bucket(1)]) == [13.0, 10.0, 12.0]

    def test_bad_index(self, square4):
        ps = self.make(square4)
        with pytest.raises(InvalidArgument):
            ps.relocate([(0, 5, 1)])


class TestInterpolate:
    def test_constant(self, square4, rng):
        ps = create(square4, rng.random((50, 2)), [np.zeros(50)], ["psi"])
        V = DgSpace(square4, 1)
        interpolate(ps, DgField(V, np.full(V.dim, 2.0)), "psi")
        assert np.all(ps.get("psi") == 2.0)

    def test_linear(self, square4, rng):
        ps = create(square4, rng.random((50, 2)), [np.zeros(50)], ["psi"])
        interpolate(ps, DgSpace(square4, 1).interpolate(linear), "psi")
        assert np.abs(ps.get("psi") - linear(ps.positions)).max() <= 1e-13

    @pytest.mark.parametrize("k", [1, 2])
    def test_round_trip(self, k, rng):
        m = build_rectangle_mesh(5, 5)
        V = DgSpace(m, k)
        f = DgField(V, rng.normal(size=V.dim))
        pos = generate_lattice(((0, 0), (1, 1)), (28, 28))
        ps = create(m, pos, [np.zeros(len(pos))], ["psi"])
        assert ps.counts().min() >= V.dofs_per_cell
        interpolate(ps, f, "psi")
        g = l2_project(ps, "psi", V)
        assert np.abs(g.coeffs - f.coeffs).max() <= 1e-10

    def test_vector_slot_rejected(self, square4):
        ps = create(square4, [[0.5, 0.5]], [np.zeros((1, 2))], ["v"])
        with pytest.raises(InvalidArgument):
            interpolate(ps, DgSpace(square4, 1).zero(), "v")


class TestIncrement:
    def setup(self, square4, rng):
        ps = create(square4, rng.random((40, 2)), [rng.normal(size=40), np.zeros(40)],
                    ["psi", "dpsi"])
        return ps, DgSpace(square4, 1)

    def test_no_change(self, square4, rng):
        ps, V = self.setup(square4, rng)
        before = ps.get("psi").copy()
        f = V.interpolate(linear)
        increment(ps, f, f, ("psi", "dpsi"), 0.5, 1)
        assert np.array_equal(ps.get("psi"), before)

    def test_theta_one(self, square4, rng):
        ps, V = self.setup(square4, rng)
        before = ps.get("psi").copy()
        old = V.interpolate(linear)
        new = V.interpolate(lambda x: 3 * x[..., 0] - x[..., 1])
        increment(ps, new, old, ("psi", "dpsi"), 1.0, 3)
        x = ps.positions
        assert np.allclose(ps.get("psi"), before + x[:, 0] - 2 * x[:, 1], atol=1e-12)

    def test_trapezoid_recovers_linear_in_time(self, square4, rng):
        ps, V = self.setup(square4, rng)
        before = ps.get("psi").copy()

        def field(t):
            return V.interpolate(lambda x: (1 + t) * linear(x))

        increment(ps, field(1), field(0), ("psi", "dpsi"), 0.5, 1)
        increment(ps, field(2), field(1), ("psi", "dpsi"), 0.5, 2)
        assert np.allclose(ps.get("psi") - before, 2 * linear(ps.positions), atol=1e-12)

    def test_missing_stash(self, square4, rng):
        ps = create(square4, rng.random((4, 2)), [np.zeros(4)], ["psi"])
        f = DgSpace(square4, 1).zero()
        with pytest.raises(InvalidArgument):
            increment(ps, f, f, ("psi", "nope"), 1.0, 1)


class TestAddDelete:
    def test_fill_empty_cell(self, square4):
        ps = create(square4, [square4.cell_centroid[1]], [[0.0]], ["psi"])
        V = DgSpace(square4, 1)
        one = DgField(V, np.ones(V.dim))
        add_delete_sweep(ps, 4, 10, init_fields={"psi": one})
        assert ps.counts()[0] == 4
        assert np.all(ps.get("psi")[ps.bucket(0)] == 1.0)
        assert len(ps.check_containment()) == 0

    def test_rounding(self):
        assert list(round_to_bounds(np.array([0.3, 0.6]), 0.0, 1.0)) == [0.0, 1.0]

    def test_rounded_insertion(self, square4):
        ps = create(square4, [square4.cell_centroid[1]], [[0.0]], ["psi"])
        V = DgSpace(square4, 1)
        add_delete_sweep(ps, 3, 10, init_fields={"psi": DgField(V, np.full(V.dim, 0.6))},
                         bounds={"psi": (0.0, 1.0)})
        assert set(ps.get("psi")[ps.bucket(0)]) == {1.0}

    def test_remove_closest(self, square4):
        c = square4.cell_centroid[0]
        offsets = np.array([[0, 0], [0.02, 0], [0, 0.02], [-0.02, 0.01], [0.01, -0.015], [0, 0]])
        ps = create(square4, c + 0.3 * offsets, [np.arange(6.0)], ["id"])
        add_delete_sweep(ps, 1, 5)
        ids = set(ps.get("id"))
        assert len(ids) == 5 and ({0.0, 5.0} & ids) != {0.0, 5.0}

    def test_bad_limits(self, square4):
        ps = create(square4, [[0.5, 0.5]])
        with pytest.raises(InvalidArgument):
            add_delete_sweep(ps, 5, 2)


def test_csv_dump(square4, tmp_path):
    pos = np.array([square4.cell_centroid[3], square4.cell_centroid[0]])
    ps = create(square4, pos, [[1.0, 2.0], np.zeros((2, 2))], ["psi", "v"])
    ps.to_csv(tmp_path / "p.csv")
    rows = list(csv.reader(open(tmp_path / "p.csv")))
    assert rows[0] == ["x", "y", "psi", "v_0", "v_1"]
    # ordered by host cell
    assert float(rows[1][2]) == 2.0 and float(rows[2][2]) == 1.0


def test_particle_set_direct_construction(square4):
    ps = ParticleSet(square4, [[0.5, 0.5]], [square4.locate_point([0.5, 0.5])], [[3.0]], [("a", 1)])
    assert ps.slot_name(1) == "a"
    with pytest.raises(InvalidArgument):
        ps.slot_name(2)
