import json
import math

import numpy as np
import pytest

from phenofield.farm_map import (DetectionsError, GraphConfig, Instance,
                                 RowConfig, build_graph, detect_rows,
                                 generate_nodes, load_detections)


def make_instance(iid=0, center=(0.0, 0.0), half=(0.5, 0.5), yaw=0.0, height=1.0):
    return Instance(id=iid, center=np.array(center), half_extents=np.array(half),
                    yaw=yaw, height=height)


class TestLoadDetections:
    def test_empty_file(self, tmp_path):
        p = tmp_path / "det.json"
        p.write_text("[]")
        assert load_detections(p) == []

    def test_two_records_in_order(self, tmp_path):
        p = tmp_path / "det.json"
        records = [
            {"id": 1, "center": [0, 0], "half_extents": [0.5, 0.5], "yaw": 0, "height": 1},
            {"id": 2, "center": [2, 0], "half_extents": [0.5, 0.5], "yaw": 0, "height": 1},
        ]
        p.write_text(json.dumps(records))
        out = load_detections(p)
        assert [i.id for i in out] == [1, 2]

    def test_duplicate_id(self, tmp_path):
        p = tmp_path / "det.json"
        rec = {"id": 7, "center": [0, 0], "half_extents": [0.5, 0.5], "yaw": 0, "height": 1}
        p.write_text(json.dumps([rec, rec]))
        with pytest.raises(DetectionsError, match="duplicate"):
            load_detections(p)

    def test_parse_error_reports_line(self, tmp_path):
        p = tmp_path / "det.json"
        p.write_text("[\n{broken\n]")
        with pytest.raises(DetectionsError, match="line"):
            load_detections(p)


class TestGenerateNodes:
    def test_zero_clearance_unit_box(self):
        inst = make_instance(half=(1.0, 1.0))
        nodes = generate_nodes(inst, clearance=0.0)
        positions = {tuple(np.round(n.position, 9)) for n in nodes}
        assert positions == {(1, 1), (-1, 1), (-1, -1), (1, -1)}
        assert len(nodes) == 8

    def test_diagonal_offset(self):
        c = 0.6
        inst = make_instance(half=(1.0, 0.5))
        nodes = generate_nodes(inst, clearance=c)
        d = c / math.sqrt(2)
        expected = {(1 + d, 0.5 + d), (-(1 + d), 0.5 + d),
                    (-(1 + d), -(0.5 + d)), (1 + d, -(0.5 + d))}
        got = {tuple(np.round(n.position, 9)) for n in nodes}
        assert got == {tuple(np.round(e, 9)) for e in expected}

    def test_no_node_inside_inflated_box(self):
        # brute-force point-in-box oracle on the inflated box
        rng = np.random.default_rng(3)
        for _ in range(50):
            inst = make_instance(center=rng.uniform(-5, 5, 2),
                                 half=rng.uniform(0.2, 2.0, 2),
                                 yaw=rng.uniform(-math.pi, math.pi))
            c = rng.uniform(0.1, 1.0)
            for n in generate_nodes(inst, clearance=c):
                local = n.position - inst.center
                rot = np.array([[math.cos(-inst.yaw), -math.sin(-inst.yaw)],
                                [math.sin(-inst.yaw), math.cos(-inst.yaw)]])
                local = rot @ local
                inflated = inst.half_extents + c / math.sqrt(2)
                strictly_inside = np.all(np.abs(local) < inflated - 1e-9)
                assert not strictly_inside

    def test_rotation_equivariance(self):
        inst0 = make_instance(half=(1.0, 0.5))
        inst90 = make_instance(half=(1.0, 0.5), yaw=math.pi / 2)
        n0 = generate_nodes(inst0, clearance=0.3)
        n90 = generate_nodes(inst90, clearance=0.3)
        rot = np.array([[0.0, -1.0], [1.0, 0.0]])
        rotated = sorted(map(tuple, np.round([rot @ n.position for n in n0], 9)))
        got = sorted(map(tuple, np.round([n.position for n in n90], 9)))
        assert rotated == got

    def test_translation_equivariance(self):
        rng = np.random.default_rng(11)
        shift = rng.uniform(-10, 10, 2)
        a = generate_nodes(make_instance(), clearance=0.4)
        b = generate_nodes(make_instance(center=shift), clearance=0.4)
        for na, nb in zip(a, b):
            assert np.allclose(na.position + shift, nb.position)
            assert na.heading == nb.heading

    def test_corner_pairs_opposite_headings(self):
        nodes = generate_nodes(make_instance(), clearance=0.2)
        by_corner = {}
        for n in nodes:
            by_corner.setdefault(n.corner_index, []).append(n)
        for pair in by_corner.values():
            diff = abs(pair[0].heading - pair[1].heading)
            assert math.isclose(min(diff, 2 * math.pi - diff), math.pi, abs_tol=1e-12)


class TestDetectRows:
    def test_three_collinear(self):
        instances = [make_instance(i, center=(2.0 * i, 0.0)) for i in range(3)]
        groups = detect_rows(instances)
        assert len(groups) == 1
        assert groups[0].instance_ids == [0, 1, 2]

    def test_two_parallel_rows(self):
        # oracle: exhaustive grouping of 6 points into lines with residual <= tol
        instances = []
        for r in range(2):
            for c in range(3):
                instances.append(make_instance(3 * r + c, center=(2.0 * c, 4.0 * r)))
        groups = detect_rows(instances, RowConfig(lateral_tolerance=0.5))
        assert len(groups) == 2
        got = sorted(sorted(g.instance_ids) for g in groups)
        assert got == [[0, 1, 2], [3, 4, 5]]

    def test_singleton(self):
        groups = detect_rows([make_instance(5)])
        assert len(groups) == 1
        assert groups[0].instance_ids == [5]
        assert np.allclose(groups[0].axis_direction, [1.0, 0.0])

    def test_partition_property(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = rng.integers(1, 12)
            instances = [make_instance(i, center=rng.uniform(-10, 10, 2))
                         for i in range(n)]
            groups = detect_rows(instances)
            all_ids = sorted(iid for g in groups for iid in g.instance_ids)
            assert all_ids == list(range(n))

    def test_access_nodes_beyond_row(self):
        instances = [make_instance(i, center=(2.0 * i, 0.0)) for i in range(3)]
        g = detect_rows(instances, RowConfig(row_margin=1.5))[0]
        proj = [float(g.axis_direction @ i.center) for i in instances]
        left = float(g.axis_direction @ g.left_access.position)
        right = float(g.axis_direction @ g.right_access.position)
        assert left == pytest.approx(min(proj) - 1.5)
        assert right == pytest.approx(max(proj) + 1.5)


class TestBuildGraph:
    def row_fixture(self):
        instances = [make_instance(i, center=(3.0 * i, 0.0)) for i in range(2)]
        groups = detect_rows(instances)
        return instances, groups

    def test_single_row_edge_set(self):
        # hand-enumerated oracle for the 2-instance row
        instances, groups = self.row_fixture()
        g = build_graph(instances, groups)
        nodes = g.nodes
        # node count invariant: 8 per instance + 2 access
        assert len(nodes) == 8 * 2 + 2
        adj = {nid: set() for nid in nodes}
        for a, b, _ in g.edges:
            adj[a].add(b)
            adj[b].add(a)
        # every same-direction same-flank lane chains 4 nodes: 3 edges per lane
        lane_edges = 0
        for a, b, _ in g.edges:
            na, nb = nodes[a], nodes[b]
            if na.instance_id is not None and nb.instance_id is not None:
                assert na.direction_index == nb.direction_index
                lane_edges += 1
        assert lane_edges == 4 * 3
        # both access nodes connect to 4 end corner nodes
        for grp in g.groups.values():
            assert len(adj[grp.left_access.id]) == 4
            assert len(adj[grp.right_access.id]) == 4
        assert g.is_connected

    def test_edge_lengths_euclidean(self):
        instances, groups = self.row_fixture()
        g = build_graph(instances, groups)
        for a, b, w in g.edges:
            d = np.linalg.norm(g.nodes[a].position - g.nodes[b].position)
            assert abs(w - d) <= 1e-9

    def test_edges_symmetric_via_neighbours(self):
        instances, groups = self.row_fixture()
        g = build_graph(instances, groups)
        for a, b, w in g.edges:
            assert (a, w) in g.neighbours(b)
            assert (b, w) in g.neighbours(a)

    def test_impassable_wall_disconnects(self):
        from phenofield.terrain import CostFieldConfig, TraversabilityGrid

        instances = ([make_instance(i, center=(3.0 * i, 0.0)) for i in range(3)]
                     + [make_instance(3 + i, center=(3.0 * i, 8.0)) for i in range(3)])
        groups = detect_rows(instances)
        assert len(groups) == 2
        # wall of infinite risk at y in [3.5, 4.5]
        shape = (120, 160)
        risk = np.zeros(shape)
        origin = np.array([-4.0, -2.0])
        cell = 0.1
        wall_rows = slice(int((3.5 - origin[1]) / cell), int((4.5 - origin[1]) / cell))
        risk[wall_rows, :] = np.inf
        grid = TraversabilityGrid(origin=origin, cell_size=cell,
                                  collision=np.zeros(shape), slope=np.zeros(shape),
                                  step=np.zeros(shape), ground=np.zeros(shape),
                                  risk=risk, config=CostFieldConfig())
        g = build_graph(instances, groups, terrain=grid)
        assert not g.is_connected
        assert len(g.components) == 2

    def test_free_terrain_interconnects_access_nodes(self):
        from phenofield.terrain import CostFieldConfig, TraversabilityGrid

        instances = ([make_instance(i, center=(3.0 * i, 0.0)) for i in range(3)]
                     + [make_instance(3 + i, center=(3.0 * i, 8.0)) for i in range(3)])
        groups = detect_rows(instances)
        shape = (120, 160)
        grid = TraversabilityGrid(origin=np.array([-4.0, -2.0]), cell_size=0.1,
                                  collision=np.zeros(shape), slope=np.zeros(shape),
                                  step=np.zeros(shape), ground=np.zeros(shape),
                                  risk=np.zeros(shape), config=CostFieldConfig())
        g = build_graph(instances, groups, terrain=grid)
        access_ids = {grp.left_access.id for grp in g.groups.values()}
        access_ids |= {grp.right_access.id for grp in g.groups.values()}
        cross = [(a, b) for a, b, _ in g.edges
                 if a in access_ids and b in access_ids]
        assert len(cross) == 4  # 2x2 access pairs across the two groups
        assert g.is_connected

    def test_groups_must_partition(self):
        instances, groups = self.row_fixture()
        with pytest.raises(ValueError, match="partition"):
            build_graph(instances[:1], groups)
