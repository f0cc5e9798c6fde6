"""Graph map construction for row-structured farms.

Takes per-plant detections (oriented footprint boxes) and builds a planning
graph: eight nodes per instance (four corners, two travel directions), row
groups found by principal-axis clustering, access nodes at both row ends, and
traversability-gated links between groups.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Instance",
    "PlanningNode",
    "RowGroup",
    "GraphMap",
    "RowConfig",
    "GraphConfig",
    "load_detections",
    "generate_nodes",
    "detect_rows",
    "build_graph",
]


class DetectionsError(ValueError):
    """Raised when a detections file cannot be parsed into instances."""


def wrap_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return float((a + math.pi) % (2.0 * math.pi) - math.pi)


@dataclass(frozen=True)
class Instance:
    """One detected plant: oriented footprint box plus height."""

    id: int
    center: np.ndarray          # (2,) metres
    half_extents: np.ndarray    # (2,) metres, > 0
    yaw: float                  # radians, [-pi, pi)
    height: float               # metres, >= 0

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "half_extents", np.asarray(self.half_extents, dtype=float))
        if not np.all(self.half_extents > 0):
            raise ValueError(f"instance {self.id}: half_extents must be positive")
        if self.height < 0:
            raise ValueError(f"instance {self.id}: height must be >= 0")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def corners(self) -> np.ndarray:
        """Footprint corners in world frame, CCW, shape (4, 2)."""
        return oriented_box_corners(self.center, self.half_extents, self.yaw)


def oriented_box_corners(center, half_extents, yaw) -> np.ndarray:
    hx, hy = half_extents
    local = np.array([[hx, hy], [-hx, hy], [-hx, -hy], [hx, -hy]], dtype=float)
    c, s = math.cos(yaw), math.sin(yaw)
    rot = np.array([[c, -s], [s, c]])
    return np.asarray(center, dtype=float) + local @ rot.T


@dataclass(frozen=True)
class PlanningNode:
    """A waypoint of the graph map.

    Instance nodes carry a corner index (0-3, CCW in the box frame) and a
    direction index (0 = along the row axis, 1 = opposite). Access nodes have
    instance_id, corner_index and direction_index set to None.
    """

    id: int
    instance_id: int | None
    position: np.ndarray    # (2,) metres
    heading: float          # radians
    corner_index: int | None = None
    direction_index: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    @property
    def is_access(self) -> bool:
        return self.instance_id is None


@dataclass
class RowGroup:
    """A row of instances sharing two access nodes at its ends."""

    id: int
    instance_ids: list[int]         # ordered along axis_direction
    left_access: PlanningNode
    right_access: PlanningNode
    axis_direction: np.ndarray      # unit (2,)

    def __post_init__(self):
        self.axis_direction = np.asarray(self.axis_direction, dtype=float)
        n = np.linalg.norm(self.axis_direction)
        if n == 0:
            raise ValueError("axis_direction must be nonzero")
        self.axis_direction = self.axis_direction / n


@dataclass
class GraphMap:
    """Planning graph over instances, nodes, row groups and weighted edges."""

    instances: dict[int, Instance]
    nodes: dict[int, PlanningNode]
    groups: dict[int, RowGroup]
    edges: list[tuple[int, int, float]]     # (node_a, node_b, length_m), a < b
    components: list[set[int]] = field(default_factory=list)

    def neighbours(self, node_id: int) -> list[tuple[int, float]]:
        out = []
        for a, b, w in self.edges:
            if a == node_id:
                out.append((b, w))
            elif b == node_id:
                out.append((a, w))
        return out

    def instance_nodes(self, instance_id: int) -> list[PlanningNode]:
        return [n for n in self.nodes.values() if n.instance_id == instance_id]

    def group_of(self, instance_id: int) -> RowGroup:
        for g in self.groups.values():
            if instance_id in g.instance_ids:
                return g
        raise KeyError(f"instance {instance_id} not in any group")

    @property
    def is_connected(self) -> bool:
        return len(self.components) <= 1

    def to_json(self) -> dict:
        def node_json(n: PlanningNode) -> dict:
            return {
                "id": n.id,
                "instance_id": n.instance_id,
                "position": [float(n.position[0]), float(n.position[1])],
                "heading": float(n.heading),
                "corner_index": n.corner_index,
                "direction_index": n.direction_index,
            }

        return {
            "instances": [
                {
                    "id": i.id,
                    "center": i.center.tolist(),
                    "half_extents": i.half_extents.tolist(),
                    "yaw": i.yaw,
                    "height": i.height,
                }
                for i in sorted(self.instances.values(), key=lambda x: x.id)
            ],
            "nodes": [node_json(n) for n in sorted(self.nodes.values(), key=lambda x: x.id)],
            "groups": [
                {
                    "id": g.id,
                    "instance_ids": list(g.instance_ids),
                    "left_access": g.left_access.id,
                    "right_access": g.right_access.id,
                    "axis_direction": g.axis_direction.tolist(),
                }
                for g in sorted(self.groups.values(), key=lambda x: x.id)
            ],
            "edges": [[a, b, w] for a, b, w in self.edges],
            "components": [sorted(c) for c in self.components],
        }

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=1)


@dataclass
class RowConfig:
    """Parameters for row detection and access-node placement."""

    lateral_tolerance: float = 0.75     # max perpendicular spread within a row, m
    row_margin: float = 1.5             # access node distance beyond terminal instance, m
    default_axis: tuple[float, float] = (1.0, 0.0)  # row axis for a single instance


@dataclass
class GraphConfig:
    """Parameters for node generation and graph assembly."""

    clearance: float = 0.6          # diagonal corner offset, m
    risk_gate: float = 0.8          # max mean traversability along inter-group links
    row: RowConfig = field(default_factory=RowConfig)


def load_detections(path) -> list[Instance]:
    """Load instances from a detections JSON file.

    The file is a JSON array of objects
    {id, center:[x,y], half_extents:[hx,hy], yaw, height}.
    """
    with open(path) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise DetectionsError(f"{path}: parse error at line {e.lineno}: {e.msg}") from e
    if not isinstance(raw, list):
        raise DetectionsError(f"{path}: expected a JSON array of detection records")
    instances = []
    seen = set()
    for k, rec in enumerate(raw):
        try:
            inst = Instance(
                id=int(rec["id"]),
                center=np.asarray(rec["center"], dtype=float),
                half_extents=np.asarray(rec["half_extents"], dtype=float),
                yaw=float(rec["yaw"]),
                height=float(rec["height"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DetectionsError(f"{path}: record {k}: {e}") from e
        if inst.id in seen:
            raise DetectionsError(f"{path}: duplicate instance id {inst.id}")
        seen.add(inst.id)
        instances.append(inst)
    return instances


def generate_nodes(
    inst: Instance,
    clearance: float,
    axis: np.ndarray | None = None,
    id_base: int = 0,
) -> list[PlanningNode]:
    """Generate the eight planning nodes of one instance.

    Corner positions are the oriented footprint corners pushed outward along
    the box diagonals by `clearance`, so nodes sit in the inter-row corridor.
    Each corner carries two nodes whose headings are the row axis direction
    and its opposite; `axis` defaults to the box's own yaw direction.
    """
    if clearance < 0:
        raise ValueError("clearance must be >= 0")
    if axis is None:
        axis = np.array([math.cos(inst.yaw), math.sin(inst.yaw)])
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    axis_angle = math.atan2(axis[1], axis[0])

    hx, hy = inst.half_extents
    off = clearance / math.sqrt(2.0)
    local = np.array(
        [[hx + off, hy + off], [-(hx + off), hy + off],
         [-(hx + off), -(hy + off)], [hx + off, -(hy + off)]]
    )
    c, s = math.cos(inst.yaw), math.sin(inst.yaw)
    rot = np.array([[c, -s], [s, c]])
    corners = inst.center + local @ rot.T

    nodes = []
    nid = id_base
    for ci in range(4):
        for di in range(2):
            heading = axis_angle if di == 0 else wrap_angle(axis_angle + math.pi)
            nodes.append(
                PlanningNode(
                    id=nid,
                    instance_id=inst.id,
                    position=corners[ci],
                    heading=heading,
                    corner_index=ci,
                    direction_index=di,
                )
            )
            nid += 1
    return nodes


def detect_rows(instances: list[Instance], cfg: RowConfig | None = None) -> list[RowGroup]:
    """Group instances into rows by principal-axis clustering.

    The dominant direction is fit over all centers; instances are bucketed by
    perpendicular offset from that axis with `lateral_tolerance`, and ordered
    within each bucket by axial projection. Deterministic; singleton groups
    are allowed. Access nodes are placed `row_margin` beyond the terminal
    instances on each row line.
    """
    if not instances:
        raise ValueError("detect_rows requires at least one instance")
    cfg = cfg or RowConfig()

    centers = np.array([i.center for i in instances], dtype=float)

    def canonical(v: np.ndarray) -> np.ndarray:
        v = v / np.linalg.norm(v)
        if v[0] < 0 or (v[0] == 0 and v[1] < 0):
            v = -v      # canonical sign for determinism
        return v

    def cluster(axis: np.ndarray):
        normal = np.array([-axis[1], axis[0]])
        lateral = centers @ normal
        axial = centers @ axis
        order = np.lexsort((axial, lateral))
        # greedy 1-D clustering on lateral offset
        buckets: list[list[int]] = []
        for idx in order:
            placed = False
            if buckets:
                last = buckets[-1]
                ref = np.mean([lateral[j] for j in last])
                if abs(lateral[idx] - ref) <= cfg.lateral_tolerance:
                    last.append(idx)
                    placed = True
            if not placed:
                buckets.append([idx])
        extent = sum(max(axial[b] for b in bucket) - min(axial[b] for b in bucket)
                     for bucket in buckets)
        return buckets, extent, lateral, axial

    if len(instances) == 1:
        axis = canonical(np.asarray(cfg.default_axis, dtype=float))
        buckets, _, lateral, axial = cluster(axis)
    else:
        centered = centers - centers.mean(axis=0)
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        principal = canonical(vt[0])
        # the principal direction of the scatter can be the cross-row one on
        # short rows: try its perpendicular too and keep the clustering with
        # fewer, longer rows
        candidates = [principal, canonical(np.array([-principal[1], principal[0]]))]
        scored = [(len(c[0]), -c[1], k, ax, c)
                  for k, ax in enumerate(candidates)
                  for c in [cluster(ax)]]
        _, _, _, axis, (buckets, _, lateral, axial) = min(scored, key=lambda s: s[:3])

    normal = np.array([-axis[1], axis[0]])
    groups = []
    # access node ids live above the instance-node id range
    access_base = 8 * len(instances)
    for gid, bucket in enumerate(buckets):
        bucket = sorted(bucket, key=lambda j: (axial[j], instances[j].id))
        ids = [instances[j].id for j in bucket]
        row_lat = float(np.mean([lateral[j] for j in bucket]))
        lo = float(min(axial[j] for j in bucket)) - cfg.row_margin
        hi = float(max(axial[j] for j in bucket)) + cfg.row_margin
        axis_angle = math.atan2(axis[1], axis[0])
        left = PlanningNode(
            id=access_base + 2 * gid,
            instance_id=None,
            position=lo * axis + row_lat * normal,
            heading=axis_angle,
        )
        right = PlanningNode(
            id=access_base + 2 * gid + 1,
            instance_id=None,
            position=hi * axis + row_lat * normal,
            heading=wrap_angle(axis_angle + math.pi),
        )
        groups.append(
            RowGroup(id=gid, instance_ids=ids, left_access=left,
                     right_access=right, axis_direction=axis.copy())
        )
    return groups


def _corridor_mean_risk(grid, a: np.ndarray, b: np.ndarray) -> float:
    """Mean traversability along the straight segment a-b, sampled per cell."""
    if grid is None:
        return 0.0
    length = float(np.linalg.norm(b - a))
    n = max(2, int(math.ceil(length / grid.cell_size)) + 1)
    ts = np.linspace(0.0, 1.0, n)
    pts = a[None, :] + ts[:, None] * (b - a)[None, :]
    vals = np.array([grid.risk_at(p) for p in pts])
    return float(np.mean(vals))


def build_graph(
    instances: list[Instance],
    groups: list[RowGroup],
    terrain=None,
    cfg: GraphConfig | None = None,
) -> GraphMap:
    """Assemble the graph map from instances and row groups.

    Edges: within a row, adjacent same-flank same-direction corner nodes are
    chained (through each instance and between consecutive instances); each
    access node connects to the four end-corner nodes at its own row end; and
    access nodes of different groups are linked when the straight corridor
    between them has mean traversability below `cfg.risk_gate`. Disconnected
    maps are reported via `components`, not rejected.
    """
    cfg = cfg or GraphConfig()
    inst_by_id = {i.id: i for i in instances}
    grouped = {iid for g in groups for iid in g.instance_ids}
    if grouped != set(inst_by_id):
        raise ValueError("groups must partition the instance set")

    nodes: dict[int, PlanningNode] = {}
    order_index = {i.id: k for k, i in enumerate(instances)}
    for g in groups:
        for iid in g.instance_ids:
            inst = inst_by_id[iid]
            for n in generate_nodes(inst, cfg.clearance, axis=g.axis_direction,
                                    id_base=8 * order_index[iid]):
                nodes[n.id] = n
        nodes[g.left_access.id] = g.left_access
        nodes[g.right_access.id] = g.right_access

    edges: set[tuple[int, int]] = set()

    def add_edge(a: int, b: int):
        if a != b:
            edges.add((min(a, b), max(a, b)))

    def flank_of(node: PlanningNode, g: RowGroup) -> int:
        normal = np.array([-g.axis_direction[1], g.axis_direction[0]])
        inst = inst_by_id[node.instance_id]
        return 0 if float((node.position - inst.center) @ normal) >= 0 else 1

    def axial_rank(node: PlanningNode, g: RowGroup) -> float:
        return float(node.position @ g.axis_direction)

    for g in groups:
        # chain same-flank, same-direction nodes along the row axis
        row_nodes = [n for n in nodes.values()
                     if n.instance_id in g.instance_ids]
        for flank in (0, 1):
            for di in (0, 1):
                lane = [n for n in row_nodes
                        if n.direction_index == di and flank_of(n, g) == flank]
                lane.sort(key=lambda n: (axial_rank(n, g), n.id))
                for a, b in zip(lane, lane[1:]):
                    add_edge(a.id, b.id)
        # access nodes to the row-end corners (both flanks, both directions)
        first, last = g.instance_ids[0], g.instance_ids[-1]
        for iid, access in ((first, g.left_access), (last, g.right_access)):
            cand = [n for n in row_nodes if n.instance_id == iid]
            cand.sort(key=lambda n: (np.linalg.norm(n.position - access.position), n.id))
            for n in cand[:4]:
                add_edge(access.id, n.id)

    # inter-group access links, gated by corridor traversability
    for gi in groups:
        for gj in groups:
            if gj.id <= gi.id:
                continue
            for na in (gi.left_access, gi.right_access):
                for nb in (gj.left_access, gj.right_access):
                    risk = _corridor_mean_risk(terrain, na.position, nb.position)
                    if risk < cfg.risk_gate:
                        add_edge(na.id, nb.id)

    edge_list = sorted(
        (a, b, float(np.linalg.norm(nodes[a].position - nodes[b].position)))
        for a, b in edges
    )

    # connected components over the node set
    parent = {nid: nid for nid in nodes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b, _ in edge_list:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    comps: dict[int, set[int]] = {}
    for nid in nodes:
        comps.setdefault(find(nid), set()).add(nid)
    components = sorted(comps.values(), key=lambda c: min(c)) if len(comps) > 1 else []

    return GraphMap(instances=inst_by_id, nodes=nodes, groups={g.id: g for g in groups},
                    edges=edge_list, components=components)
