"""Greedy coverage planning over the farm graph.

Plans a node sequence that sweeps every target plant on all four corners,
respecting the pi/3 orientation gate between consecutive instance nodes
and detouring through row access nodes when a direct turn is too sharp.
"""
import numpy as np

from phenofield.farm_map import build_graph, detect_rows
from phenofield.global_planner import TargetSet, generate_global_path
from phenofield.pipeline import FarmSpec, genfarm

scene = genfarm(FarmSpec(rows=3, plants_per_row=4), seed=3)
graph = build_graph(scene.instances, detect_rows(scene.instances))

targets = TargetSet({i.id for i in scene.instances})
path = generate_global_path(targets, graph, start=(-3.0, -2.0))

print(f"coverage path: {len(path.node_ids)} nodes, {path.total_length:.1f} m")
print(f"covered: {sorted(path.covered_instances)}")
print(f"unreachable: {path.unreachable}")

print("\nfirst hops:")
for nid in path.node_ids[:8]:
    n = graph.nodes[nid]
    kind = f"plant {n.instance_id} corner {n.corner_index}" \
        if n.instance_id is not None else "row access"
    print(f"  node {nid:3d}  ({n.position[0]:+6.2f}, {n.position[1]:+6.2f})  "
          f"heading {np.degrees(n.heading):+4.0f} deg  {kind}")

detours = [e for e in path.audit if e["event"] == "detour"]
print(f"\naccess-node detours taken: {len(detours)}")
