"""Greedy coverage planning over the farm graph map.

Builds a global node path that fully covers a target set of instances:
targets are grouped by parent row, rows are visited nearest-first, and within
a row nodes are appended nearest-feasible-first until every target's corners
have been swept on both flanks. Feasibility combines an orientation gate
(heading change at most pi/3) with a straight-corridor traversability gate.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .farm_map import GraphMap, PlanningNode, RowGroup, wrap_angle

__all__ = [
    "TargetSet",
    "Subgroup",
    "GlobalPath",
    "PlannerConfig",
    "find_parent",
    "find_nearest_subgroup",
    "orientation_feasible",
    "is_fully_covered",
    "plan_connection",
    "generate_global_path",
]

MAX_HEADING_DIFF = math.pi / 3.0


class UnknownInstanceError(KeyError):
    pass


@dataclass
class PlannerConfig:
    cover_min_corners: int = 4      # corner indices that must be visited per target
    risk_gate: float = 0.8          # max mean corridor traversability per hop
    use_graph_distance: bool = False  # nearest-by-graph instead of straight line


@dataclass
class TargetSet:
    instance_ids: set[int]

    def validate(self, graph: GraphMap) -> None:
        missing = self.instance_ids - set(graph.instances)
        if missing:
            raise UnknownInstanceError(f"unknown target instances: {sorted(missing)}")


@dataclass
class Subgroup:
    """The targets of one row group."""

    group_id: int
    target_instance_ids: list[int]

    def __post_init__(self):
        if not self.target_instance_ids:
            raise ValueError("subgroup must contain at least one target")


@dataclass
class GlobalPath:
    """Ordered node sequence with coverage bookkeeping."""

    start: np.ndarray
    node_ids: list[int] = field(default_factory=list)
    covered_instances: set[int] = field(default_factory=set)
    unreachable: list[int] = field(default_factory=list)
    total_length: float = 0.0
    audit: list[dict] = field(default_factory=list)

    def tail_position(self, graph: GraphMap) -> np.ndarray:
        if self.node_ids:
            return graph.nodes[self.node_ids[-1]].position
        return np.asarray(self.start, dtype=float)

    def tail_heading(self, graph: GraphMap) -> float | None:
        if self.node_ids:
            return graph.nodes[self.node_ids[-1]].heading
        return None

    def append(self, node: PlanningNode, graph: GraphMap) -> None:
        self.total_length += float(np.linalg.norm(node.position - self.tail_position(graph)))
        self.node_ids.append(node.id)

    def to_json(self, graph: GraphMap) -> dict:
        return {
            "nodes": [
                {
                    "id": nid,
                    "x": float(graph.nodes[nid].position[0]),
                    "y": float(graph.nodes[nid].position[1]),
                    "heading": float(graph.nodes[nid].heading),
                }
                for nid in self.node_ids
            ],
            "covered": sorted(self.covered_instances),
            "unreachable": sorted(self.unreachable),
            "length_m": self.total_length,
        }

    def save(self, path, graph: GraphMap) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(graph), f, indent=1)

    def save_audit(self, path) -> None:
        with open(path, "w") as f:
            for entry in self.audit:
                f.write(json.dumps(entry) + "\n")


def find_parent(instance_id: int, graph: GraphMap) -> int:
    """Group id of the row containing the instance."""
    for g in sorted(graph.groups.values(), key=lambda g: g.id):
        if instance_id in g.instance_ids:
            return g.id
    raise UnknownInstanceError(f"instance {instance_id} is not in the graph map")


def orientation_feasible(a: PlanningNode, b: PlanningNode) -> bool:
    """Whether the heading change between two nodes is at most pi/3 (inclusive)."""
    diff = abs(wrap_angle(a.heading - b.heading))
    return diff <= MAX_HEADING_DIFF + 1e-12


def is_fully_covered(path: GlobalPath, instance_id: int, graph: GraphMap,
                     cover_min_corners: int = 4) -> bool:
    """Whether the path has visited enough distinct corners of the instance.

    Full coverage means all four corner indices appear among the visited
    nodes of the instance, in any direction set (both flanks swept).
    """
    visited = set(path.node_ids)
    corners = {
        n.corner_index
        for n in graph.nodes.values()
        if n.instance_id == instance_id and n.id in visited and n.corner_index is not None
    }
    return len(corners) >= cover_min_corners


def _subgroup_distance(path: GlobalPath, sub: Subgroup, graph: GraphMap) -> float:
    tail = path.tail_position(graph)
    best = float("inf")
    for iid in sub.target_instance_ids:
        for n in graph.instance_nodes(iid):
            best = min(best, float(np.linalg.norm(n.position - tail)))
    return best


def find_nearest_subgroup(path: GlobalPath, subgroups: list[Subgroup],
                          graph: GraphMap) -> Subgroup:
    """Subgroup with the instance node closest to the path tail.

    Ties break toward the lower group id so planning is deterministic.
    """
    if not subgroups:
        raise ValueError("no subgroups to select from")
    return min(subgroups,
               key=lambda s: (_subgroup_distance(path, s, graph), s.group_id))


def _corridor_ok(a: np.ndarray, b: np.ndarray, terrain, gate: float) -> bool:
    if terrain is None:
        return True
    length = float(np.linalg.norm(b - a))
    n = max(2, int(math.ceil(length / terrain.cell_size)) + 1)
    ts = np.linspace(0.0, 1.0, n)
    vals = [terrain.risk_at(a + t * (b - a)) for t in ts]
    mean = float(np.mean(vals))
    return math.isfinite(mean) and mean < gate


def plan_connection(path: GlobalPath, sub: Subgroup, graph: GraphMap,
                    terrain=None, cfg: PlannerConfig | None = None) -> list[int]:
    """Append nodes to cover every target of one subgroup.

    Repeatedly picks the nearest feasible unvisited node among the remaining
    targets; a node failing only the orientation gate is reached by detouring
    through the row's nearer access node. Targets whose nodes are exhausted
    without coverage are reported unreachable, never silently dropped.
    Returns the list of node ids appended.
    """
    cfg = cfg or PlannerConfig()
    group: RowGroup = graph.groups[sub.group_id]
    remaining = sorted(sub.target_instance_ids)
    appended: list[int] = []

    while remaining:
        tail = path.tail_position(graph)
        tail_heading = path.tail_heading(graph)
        visited = set(path.node_ids)
        candidates = []
        for iid in remaining:
            for n in sorted(graph.instance_nodes(iid), key=lambda n: n.id):
                if n.id in visited:
                    continue
                candidates.append((float(np.linalg.norm(n.position - tail)), n.id, n, iid))
        if not candidates:
            # nodes exhausted without full coverage
            for iid in remaining:
                if not is_fully_covered(path, iid, graph, cfg.cover_min_corners):
                    path.unreachable.append(iid)
                else:
                    path.covered_instances.add(iid)
            break
        candidates.sort(key=lambda c: (c[0], c[1]))

        chosen = None
        detour_via = None
        # first pass: nearest node that is directly reachable and turnable-to
        for dist, nid, node, iid in candidates:
            if not _corridor_ok(tail, node.position, terrain, cfg.risk_gate):
                continue
            if tail_heading is None or orientation_feasible(
                    graph.nodes[path.node_ids[-1]], node):
                chosen = (node, iid)
                break
        # second pass: reach an orientation-infeasible node by detouring
        # through the nearer row access node
        if chosen is None:
            for dist, nid, node, iid in candidates:
                if not _corridor_ok(tail, node.position, terrain, cfg.risk_gate):
                    continue
                for access in sorted(
                        (group.left_access, group.right_access),
                        key=lambda a: float(np.linalg.norm(a.position - node.position))):
                    if (_corridor_ok(tail, access.position, terrain, cfg.risk_gate)
                            and _corridor_ok(access.position, node.position, terrain,
                                             cfg.risk_gate)):
                        chosen = (node, iid)
                        detour_via = access
                        break
                if chosen:
                    break
        if chosen is None:
            for iid in remaining:
                path.unreachable.append(iid)
            path.audit.append({"event": "subgroup_unreachable",
                               "group": sub.group_id, "targets": remaining})
            break

        node, iid = chosen
        if detour_via is not None:
            path.append(detour_via, graph)
            appended.append(detour_via.id)
            path.audit.append({"event": "detour", "via": detour_via.id, "to": node.id})
        path.append(node, graph)
        appended.append(node.id)
        path.audit.append({"event": "append", "node": node.id, "instance": iid})
        if is_fully_covered(path, iid, graph, cfg.cover_min_corners):
            path.covered_instances.add(iid)
            remaining.remove(iid)
            path.audit.append({"event": "covered", "instance": iid})
    return appended


def generate_global_path(targets: TargetSet, graph: GraphMap, start,
                         terrain=None, cfg: PlannerConfig | None = None) -> GlobalPath:
    """Greedy global coverage path over the graph map.

    Targets are grouped by parent row into subgroups; subgroups are consumed
    nearest-first from the path tail, each fully covered by plan_connection.
    Deterministic for fixed inputs; unreachable targets are reported in the
    returned path rather than raised.
    """
    cfg = cfg or PlannerConfig()
    targets.validate(graph)
    path = GlobalPath(start=np.asarray(start, dtype=float))

    by_group: dict[int, list[int]] = {}
    for iid in sorted(targets.instance_ids):
        by_group.setdefault(find_parent(iid, graph), []).append(iid)
    subgroups = [Subgroup(group_id=g, target_instance_ids=ids)
                 for g, ids in sorted(by_group.items())]

    while subgroups:
        distances = {s.group_id: _subgroup_distance(path, s, graph) for s in subgroups}
        sub = find_nearest_subgroup(path, subgroups, graph)
        path.audit.append({"event": "select_subgroup", "group": sub.group_id,
                           "distances": {str(k): v for k, v in sorted(distances.items())}})
        plan_connection(path, sub, graph, terrain=terrain, cfg=cfg)
        subgroups.remove(sub)
    return path
