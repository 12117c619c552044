import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpcov.geometry import (
    Environment,
    SensingGeometry,
    VoronoiCell,
    cell_mass_centroid,
    clip_halfplane,
    disk_polygon,
    limited_voronoi_cell,
    performance_value,
    points_in_polygon,
    polygon_area,
    polygon_centroid,
)

# 0.5 * 32 * 2**2 * sin(2*pi/32), evaluated independently with math.sin
INSCRIBED_32GON_AREA_R2 = 12.485780609032208

UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def brute_cell_mask(pts, owner, neighbors, env, geom, segments=32):
    """Direct membership test from the cell definition: in Q, in the inscribed
    disk polygon, and no farther from the owner than from any in-range neighbor."""
    owner = np.asarray(owner)
    mask = env.contains(pts)
    disk = disk_polygon(owner, geom.cell_radius, segments)
    mask &= points_in_polygon(pts, disk)
    for q in neighbors:
        q = np.asarray(q)
        if np.hypot(*(q - owner)) > geom.sensing_radius:
            continue
        mask &= np.hypot(*(pts - owner).T) <= np.hypot(*(pts - q).T) + 1e-12
    return mask


def grid_points(env, n=400):
    x0, y0, x1, y1 = env.bounds
    xs = x0 + (np.arange(n) + 0.5) * (x1 - x0) / n
    ys = y0 + (np.arange(n) + 0.5) * (y1 - y0) / n
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()]), (x1 - x0) * (y1 - y0) / n**2


class TestEnvironment:
    def test_rectangle(self):
        env = Environment.rectangle(10, 4)
        assert env.area == pytest.approx(40.0)
        assert env.bounds == (0.0, 0.0, 10.0, 4.0)
        assert env.diameter == pytest.approx(math.hypot(10, 4))

    def test_clockwise_input_is_reoriented(self):
        env = Environment(UNIT_SQUARE[::-1].copy())
        assert polygon_area(env.vertices) > 0

    @pytest.mark.parametrize(
        "verts",
        [
            [[0, 0], [1, 0]],
            [[0, 0], [1, 0], [1, 0], [0, 1]],
            [[0, 0], [2, 0], [1, 0.2], [2, 2], [0, 2]],
            [[0, 0], [1, 0], [np.nan, 1]],
        ],
    )
    def test_rejects_invalid(self, verts):
        with pytest.raises(ValueError):
            Environment(np.array(verts, dtype=float))

    def test_contains_and_project(self):
        env = Environment.rectangle(2, 2)
        assert env.contains(np.array([1.0, 1.0]))
        assert not env.contains(np.array([3.0, 1.0]))
        assert np.allclose(env.project(np.array([3.0, 1.0])), [2.0, 1.0])
        assert np.allclose(env.project(np.array([-1.0, -1.0])), [0.0, 0.0])
        assert np.allclose(env.project(np.array([0.5, 0.5])), [0.5, 0.5])


def test_sensing_geometry():
    g = SensingGeometry(4.0)
    assert g.cell_radius == 2.0
    with pytest.raises(ValueError):
        SensingGeometry(0.0)


class TestDiskPolygon:
    def test_square(self):
        sq = disk_polygon((0.0, 0.0), 1.0, 4)
        assert np.allclose(sq, [[1, 0], [0, 1], [-1, 0], [0, -1]], atol=1e-15)
        assert polygon_area(sq) == pytest.approx(2.0)

    def test_32gon_area(self):
        assert polygon_area(disk_polygon((3.0, -1.0), 2.0, 32)) == pytest.approx(INSCRIBED_32GON_AREA_R2, rel=1e-12)

    @pytest.mark.parametrize("center,radius", [((0, 0), 0.0), ((0, 0), -1.0), ((np.inf, 0), 1.0), ((0, 0), np.nan)])
    def test_rejects_degenerate(self, center, radius):
        with pytest.raises(ValueError):
            disk_polygon(center, radius)


class TestClip:
    def test_half_square(self):
        out = clip_halfplane(UNIT_SQUARE, (0.5, 0.0), (1.0, 0.0))
        assert polygon_area(out) == pytest.approx(0.5)
        assert out[:, 0].max() == pytest.approx(0.5)
        assert polygon_area(out) > 0  # still CCW

    def test_identity(self):
        out = clip_halfplane(UNIT_SQUARE, (5.0, 0.0), (1.0, 0.0))
        assert np.array_equal(out, UNIT_SQUARE)

    def test_empty(self):
        out = clip_halfplane(UNIT_SQUARE, (-1.0, 0.0), (1.0, 0.0))
        assert out.shape == (0, 2)

    def test_through_vertex_has_no_duplicates(self):
        out = clip_halfplane(UNIT_SQUARE, (0.5, 0.5), (1.0, 1.0))
        assert len(out) == 3
        assert polygon_area(out) == pytest.approx(0.5)


class TestLimitedVoronoiCell:
    env = Environment.rectangle(10, 10)
    geom = SensingGeometry(4.0)

    def test_lone_robot(self):
        cell = limited_voronoi_cell((5.0, 5.0), [], self.env, self.geom)
        assert len(cell.vertices) == 32
        assert cell.area == pytest.approx(INSCRIBED_32GON_AREA_R2, rel=1e-12)

    def test_pair_is_mirror_symmetric(self):
        a = limited_voronoi_cell((4.0, 5.0), [(6.0, 5.0)], self.env, self.geom)
        b = limited_voronoi_cell((6.0, 5.0), [(4.0, 5.0)], self.env, self.geom, owner_id=1)
        assert a.vertices[:, 0].max() == pytest.approx(5.0)
        assert b.vertices[:, 0].min() == pytest.approx(5.0)
        assert a.area == pytest.approx(b.area)
        mirrored = np.column_stack([10.0 - b.vertices[:, 0], b.vertices[:, 1]])
        for v in mirrored:
            assert np.min(np.hypot(*(a.vertices - v).T)) < 1e-9

    def test_far_neighbor_ignored(self):
        alone = limited_voronoi_cell((5.0, 5.0), [], self.env, self.geom)
        far = limited_voronoi_cell((5.0, 5.0), [(9.5, 9.5)], self.env, self.geom)
        assert np.array_equal(alone.vertices, far.vertices)

    def test_owner_outside(self):
        with pytest.raises(ValueError):
            limited_voronoi_cell((11.0, 5.0), [], self.env, self.geom)

    def test_matches_definition_by_brute_force(self):
        rng = np.random.default_rng(3)
        pts, da = grid_points(self.env)
        for _ in range(5):
            P = rng.uniform(0, 10, size=(5, 2))
            for i in range(5):
                others = np.delete(P, i, axis=0)
                cell = limited_voronoi_cell(P[i], others, self.env, self.geom)
                brute = brute_cell_mask(pts, P[i], others, self.env, self.geom).sum() * da
                # grid of 400x400 over 100 m^2: boundary error of order perimeter * h
                assert cell.area == pytest.approx(brute, abs=0.35)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.floats(0.1, 9.9), st.floats(0.1, 9.9)), min_size=2, max_size=6, unique=True), st.randoms())
    def test_invariants(self, pts, rnd):
        P = np.array(pts)
        r = self.geom.cell_radius
        cells = []
        for i in range(len(P)):
            others = [q for j, q in enumerate(P) if j != i]
            cell = limited_voronoi_cell(P[i], others, self.env, self.geom, owner_id=i)
            cells.append(cell)
            assert not cell.is_empty
            assert points_in_polygon(P[i][None], cell.vertices, tol=1e-9)[0]
            assert np.all(self.env.contains(cell.vertices, tol=1e-9))
            assert np.all(np.hypot(*(cell.vertices - P[i]).T) <= r + 1e-9)
            # order independence
            shuffled = list(others)
            rnd.shuffle(shuffled)
            again = limited_voronoi_cell(P[i], shuffled, self.env, self.geom)
            assert len(again.vertices) == len(cell.vertices)
            for v in again.vertices:
                assert np.min(np.hypot(*(cell.vertices - v).T)) < 1e-9
        # interiors do not overlap: intersection of two convex cells has ~zero area
        for i in range(len(cells)):
            for j in range(i + 1, len(cells)):
                inter = cells[i].vertices
                vj = cells[j].vertices
                for k in range(len(vj)):
                    a, b = vj[k], vj[(k + 1) % len(vj)]
                    e = b - a
                    inter = clip_halfplane(inter, a, np.array([e[1], -e[0]]))
                    if len(inter) == 0:
                        break
                assert (polygon_area(inter) if len(inter) else 0.0) < 1e-9


def test_performance_value():
    r = 2.0
    assert performance_value(0.0, r) == 0.0
    assert performance_value(r, r) == -(r**2)
    assert performance_value(2 * r, r) == -(r**2)
    assert performance_value(np.nextafter(r, 0), r) == pytest.approx(-(r**2), abs=1e-12)
    assert np.allclose(performance_value(np.array([1.0, 3.0]), r), [-1.0, -4.0])


class TestMassCentroid:
    def test_uniform_square(self):
        m, c = cell_mass_centroid(UNIT_SQUARE, lambda p: np.ones(len(p)), resolution=0.01)
        assert m == pytest.approx(1.0, abs=1e-9)
        assert np.allclose(c, [0.5, 0.5], atol=0.02)

    def test_zero_density_falls_back(self):
        cell = VoronoiCell(0, UNIT_SQUARE.copy())
        m, c = cell_mass_centroid(cell, lambda p: np.zeros(len(p)))
        assert m == 0.0
        assert np.allclose(c, polygon_centroid(UNIT_SQUARE))
        assert cell.mass == 0.0 and np.allclose(cell.centroid, c)

    def test_linear_density_against_fine_grid(self):
        phi = lambda p: p[:, 0]  # noqa: E731
        m, c = cell_mass_centroid(UNIT_SQUARE, phi, resolution=0.02)
        m_fine, c_fine = cell_mass_centroid(UNIT_SQUARE, phi, resolution=0.002)
        assert m == pytest.approx(0.5, abs=1e-3)
        assert np.allclose(c, [2 / 3, 0.5], atol=2e-3)
        assert m == pytest.approx(m_fine, abs=1e-3)
        assert np.allclose(c, c_fine, atol=1e-3)

    @pytest.mark.parametrize("bad", [np.nan, -1.0, np.inf])
    def test_rejects_bad_density(self, bad):
        with pytest.raises(ValueError):
            cell_mass_centroid(UNIT_SQUARE, lambda p: np.full(len(p), bad))

    def test_converges(self):
        cell = limited_voronoi_cell((5.0, 5.0), [(6.5, 5.5)], Environment.rectangle(10, 10), SensingGeometry(4.0))
        phi = lambda p: np.exp(-0.5 * np.sum((p - [5.5, 4.0]) ** 2, axis=1))  # noqa: E731
        masses = [cell_mass_centroid(cell, phi, grid=n)[0] for n in (20, 40, 80, 160, 320)]
        changes = np.abs(np.diff(masses))
        assert changes[-1] < changes[0]
        assert np.all(changes[1:] <= 4 * changes[:-1] + 1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.5, 9.5), st.floats(0.5, 9.5), st.floats(0.1, 3.0))
    def test_centroid_inside_cell(self, x, y, width):
        env = Environment.rectangle(10, 10)
        cell = limited_voronoi_cell((x, y), [], env, SensingGeometry(4.0))
        phi = lambda p: np.exp(-np.sum((p - [x + 1, y]) ** 2, axis=1) / width)  # noqa: E731
        m, c = cell_mass_centroid(cell, phi)
        assert m > 0
        assert points_in_polygon(c[None], cell.vertices, tol=1e-9)[0]
