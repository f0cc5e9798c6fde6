import math

import numpy as np
import pytest

from phenofield.terrain import (CostFieldConfig, ObstacleField, TerrainCloud,
                                TraversabilityGrid, build_grid,
                                extract_obstacles, load_cloud, min_separation,
                                obstacle_cost, save_cloud_ply, slope_at,
                                step_at)


def lattice_cloud(nx=30, ny=30, spacing=0.1, z=None):
    xs, ys = np.meshgrid(np.arange(nx) * spacing, np.arange(ny) * spacing)
    zs = np.zeros_like(xs) if z is None else z(xs, ys)
    return TerrainCloud(points=np.stack([xs.ravel(), ys.ravel(), zs.ravel()], axis=1))


class TestCloudIO:
    def test_ply_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        cloud = TerrainCloud(points=rng.uniform(-3, 3, (40, 3)))
        p = tmp_path / "c.ply"
        save_cloud_ply(cloud, p)
        back = load_cloud(p)
        assert np.array_equal(back.points, cloud.points)

    def test_xyz_text(self, tmp_path):
        p = tmp_path / "c.xyz"
        p.write_text("0 0 0\n1 2 3\n")
        back = load_cloud(p)
        assert np.allclose(back.points, [[0, 0, 0], [1, 2, 3]])

    def test_bad_ply_header(self, tmp_path):
        p = tmp_path / "c.ply"
        p.write_text("noply\n")
        with pytest.raises(ValueError, match="PLY"):
            load_cloud(p)

    def test_nonfinite_points_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            TerrainCloud(points=np.array([[0.0, 0.0, np.nan]]))


class TestSlope:
    def test_flat_plane_zero(self):
        cloud = lattice_cloud()
        s = slope_at(np.array([1.0, 1.0, 0.0]), cloud, window=0.4)
        assert s == pytest.approx(0.0, abs=1e-9)

    def test_ramp_quarter_pi(self):
        # plane z = x has normal at 45 degrees from vertical
        cloud = lattice_cloud(z=lambda x, y: x)
        s = slope_at(np.array([1.0, 1.0, 1.0]), cloud, window=0.4)
        assert s == pytest.approx(math.pi / 4, abs=1e-6)

    def test_oblique_plane_matches_gradient(self):
        # slope of plane z = a x + b y is atan(|grad|)
        a, b = 0.3, -0.2
        cloud = lattice_cloud(z=lambda x, y: a * x + b * y)
        s = slope_at(np.array([1.0, 1.0, a + b]), cloud, window=0.4)
        assert s == pytest.approx(math.atan(math.hypot(a, b)), abs=1e-6)

    def test_degenerate_neighbourhood_nan(self):
        cloud = TerrainCloud(points=np.array([[0, 0, 0], [0.01, 0, 0]], dtype=float))
        assert math.isnan(slope_at(np.zeros(3), cloud, window=0.4))

    def test_collinear_nan(self):
        pts = np.array([[0, 0, 0], [0.02, 0, 0], [0.04, 0, 0], [0.06, 0, 0]], dtype=float)
        assert math.isnan(slope_at(np.zeros(3), TerrainCloud(points=pts), window=0.4))


class TestStep:
    def test_curb(self):
        ground = np.zeros((3, 3))
        ground[:, 2] = 0.30
        assert step_at(1, 1, ground) == pytest.approx(0.30, abs=1e-12)
        assert step_at(1, 0, ground) == pytest.approx(0.0, abs=1e-12)

    def test_ignores_empty_neighbours(self):
        ground = np.full((3, 3), np.nan)
        ground[1, 1] = 0.0
        ground[0, 0] = 0.5
        assert step_at(1, 1, ground) == pytest.approx(0.5)
        ground[0, 0] = np.nan
        assert step_at(1, 1, ground) == 0.0

    def test_empty_cell_nan(self):
        ground = np.full((2, 2), np.nan)
        assert math.isnan(step_at(0, 0, ground))


class TestBuildGrid:
    def test_risk_recomposition(self):
        # oracle: recombine the saved layers with the published weights
        rng = np.random.default_rng(4)
        pts = rng.uniform(0, 2, (400, 3)) * np.array([1, 1, 0.2])
        cfg = CostFieldConfig()
        grid = build_grid(TerrainCloud(points=pts), cfg, cell_size=0.25)
        finite = np.isfinite(grid.risk)
        expect = (grid.collision[finite]
                  + cfg.alpha_s * grid.slope[finite] / cfg.s_crit
                  + cfg.alpha_lambda * grid.step[finite] / cfg.lambda_crit)
        assert np.max(np.abs(grid.risk[finite] - expect)) <= 1e-12

    def test_empty_cells_infinite(self):
        pts = np.array([[0.0, 0.0, 0.0]])
        grid = build_grid(TerrainCloud(points=pts), cell_size=0.1,
                          bounds=(np.array([0.0, 0.0]), np.array([1.0, 1.0])))
        assert np.isinf(grid.risk).any()
        # the lone point has a degenerate slope fit, so even its cell is inf
        assert np.isinf(grid.risk).all()

    def test_flat_lattice_zero_risk(self):
        grid = build_grid(lattice_cloud(), cell_size=0.2)
        finite = np.isfinite(grid.risk)
        assert finite.any()
        assert np.allclose(grid.risk[finite], 0.0, atol=1e-9)

    def test_ground_is_low_percentile(self):
        # one cell: 10 points with known heights
        zs = np.arange(10) * 0.01
        pts = np.column_stack([np.full(10, 0.05), np.full(10, 0.05), zs])
        grid = build_grid(TerrainCloud(points=pts), cell_size=0.2,
                          bounds=(np.zeros(2), np.full(2, 0.1)))
        r, c = grid.cell_of([0.05, 0.05])
        assert grid.ground[r, c] == pytest.approx(np.percentile(zs, 10))

    def test_collision_fraction(self):
        # 8 ground points plus 2 points well above body clearance
        cfg = CostFieldConfig()
        base = np.column_stack([np.full(8, 0.05), np.full(8, 0.05), np.zeros(8)])
        high = np.array([[0.05, 0.05, 1.0], [0.05, 0.05, 1.5]])
        pts = np.vstack([base, high])
        grid = build_grid(TerrainCloud(points=pts), cfg, cell_size=0.2,
                          bounds=(np.zeros(2), np.full(2, 0.1)))
        r, c = grid.cell_of([0.05, 0.05])
        assert grid.collision[r, c] == pytest.approx(0.2)

    def test_risk_at_outside_grid_free(self):
        grid = build_grid(lattice_cloud(), cell_size=0.2)
        assert grid.risk_at([100.0, 100.0]) == 0.0

    def test_save_layout(self, tmp_path):
        grid = build_grid(lattice_cloud(nx=5, ny=4), cell_size=0.2)
        jp, cp = tmp_path / "g.json", tmp_path / "g.csv"
        grid.save(jp, cp)
        import json
        header = json.loads(jp.read_text())
        assert header["width"] == grid.width and header["height"] == grid.height
        rows = cp.read_text().strip().split("\n")
        assert len(rows) == grid.height
        assert all(len(r.split(",")) == grid.width for r in rows)


def square_grid(mask, cell=1.0, origin=(0.0, 0.0)):
    shape = mask.shape
    risk = np.where(mask, np.inf, 0.0)
    return TraversabilityGrid(origin=np.asarray(origin, dtype=float), cell_size=cell,
                              collision=np.zeros(shape), slope=np.zeros(shape),
                              step=np.zeros(shape), ground=np.zeros(shape),
                              risk=risk, config=CostFieldConfig())


class TestExtractObstacles:
    def test_single_cell_square(self):
        mask = np.zeros((3, 3), dtype=bool)
        mask[1, 1] = True
        field = extract_obstacles(square_grid(mask), 0.8)
        assert len(field.polygons) == 1
        poly = field.polygons[0]
        assert sorted(map(tuple, poly)) == [(1, 1), (1, 2), (2, 1), (2, 2)]
        # CCW orientation: positive shoelace area equal to one cell
        x, y = poly[:, 0], poly[:, 1]
        area = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
        assert area == pytest.approx(1.0)

    def test_collinear_vertices_merged(self):
        mask = np.zeros((3, 5), dtype=bool)
        mask[1, 1:4] = True    # 3x1 bar -> still a 4-vertex rectangle
        field = extract_obstacles(square_grid(mask), 0.8)
        assert len(field.polygons) == 1
        assert field.polygons[0].shape == (4, 2)

    def test_l_shape_six_vertices(self):
        mask = np.zeros((4, 4), dtype=bool)
        mask[1, 1:3] = True
        mask[2, 1] = True
        field = extract_obstacles(square_grid(mask), 0.8)
        assert field.polygons[0].shape == (6, 2)

    def test_two_components(self):
        mask = np.zeros((3, 5), dtype=bool)
        mask[1, 1] = True
        mask[1, 3] = True      # diagonal-only contact is not 4-connected
        field = extract_obstacles(square_grid(mask), 0.8)
        assert len(field.polygons) == 2


class TestMinSeparation:
    unit_square = ObstacleField(polygons=[np.array([[0.0, 0.0], [1.0, 0.0],
                                                    [1.0, 1.0], [0.0, 1.0]])])

    def test_outside_axis(self):
        assert min_separation([2.0, 0.5], self.unit_square) == pytest.approx(1.0)

    def test_outside_corner(self):
        assert min_separation([2.0, 2.0], self.unit_square) == pytest.approx(math.sqrt(2))

    def test_inside_negative(self):
        assert min_separation([0.5, 0.6], self.unit_square) == pytest.approx(-0.4)

    def test_on_boundary_zero(self):
        assert min_separation([1.0, 0.5], self.unit_square) == pytest.approx(0.0, abs=1e-12)

    def test_empty_field(self):
        assert min_separation([0.0, 0.0], ObstacleField(polygons=[])) == math.inf

    def test_random_vs_bruteforce(self):
        # oracle: dense sampling of the boundary
        rng = np.random.default_rng(9)
        poly = self.unit_square.polygons[0]
        ts = np.linspace(0, 1, 2001)[:-1]
        boundary = np.vstack([poly[i] + ts[:, None] * (poly[(i + 1) % 4] - poly[i])
                              for i in range(4)])
        for _ in range(30):
            q = rng.uniform(-1, 2, 2)
            d = np.min(np.linalg.norm(boundary - q, axis=1))
            inside = (0 < q[0] < 1) and (0 < q[1] < 1)
            expect = -d if inside else d
            assert min_separation(q, self.unit_square) == pytest.approx(expect, abs=1e-3)


class TestObstacleCost:
    field = ObstacleField(polygons=[np.array([[0.0, 0.0], [1.0, 0.0],
                                              [1.0, 1.0], [0.0, 1.0]])])

    def test_far_away_zero(self):
        c, g = obstacle_cost([5.0, 0.5], self.field, epsilon=0.8)
        assert c == 0.0
        assert np.allclose(g, 0.0)

    def test_piecewise_values(self):
        eps = 0.8
        c_near, _ = obstacle_cost([1.3, 0.5], self.field, eps)   # phi = 0.3
        assert c_near == pytest.approx((eps - 0.3) ** 2 / (2 * eps))
        c_in, _ = obstacle_cost([0.9, 0.5], self.field, eps)     # phi = -0.1
        assert c_in == pytest.approx(0.1 + eps / 2)

    def test_gradient_finite_difference(self):
        # central differences at points away from kinks of the distance field
        eps = 0.8
        h = 1e-6
        for q in ([1.4, 0.5], [0.5, 1.2], [-0.3, 0.5], [0.8, 0.5]):
            q = np.array(q)
            _, g = obstacle_cost(q, self.field, eps)
            for k in range(2):
                d = np.zeros(2)
                d[k] = h
                cp, _ = obstacle_cost(q + d, self.field, eps)
                cm, _ = obstacle_cost(q - d, self.field, eps)
                assert g[k] == pytest.approx((cp - cm) / (2 * h), abs=1e-5)

    def test_continuity_at_boundary(self):
        eps = 0.8
        c_out, _ = obstacle_cost([1.0 + 1e-9, 0.5], self.field, eps)
        c_on, _ = obstacle_cost([1.0, 0.5], self.field, eps)
        assert abs(c_out - c_on) < 1e-6
        assert c_on == pytest.approx(eps / 2)
