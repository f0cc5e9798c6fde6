"""From plant detections to a navigable graph map.

Walks through the first stage of the toolkit: synthesize a small farm,
group the detected plants into rows, surround each plant with its eight
planning nodes (four corners times two approach directions), and link
everything into one connected graph.
"""
import numpy as np

from phenofield.farm_map import build_graph, detect_rows, generate_nodes
from phenofield.pipeline import FarmSpec, genfarm

scene = genfarm(FarmSpec(rows=2, plants_per_row=4), seed=1)
print(f"farm: {len(scene.instances)} plants on a 2 x 4 layout")

# one plant's planning nodes: corners of the inflated box, both headings
nodes = generate_nodes(scene.instances[0], clearance=0.6)
print("\nplanning nodes of plant 0:")
for n in nodes:
    print(f"  node {n.id}: corner {n.corner_index} dir {n.direction_index} "
          f"at ({n.position[0]:+.2f}, {n.position[1]:+.2f}) "
          f"heading {np.degrees(n.heading):+.0f} deg")

groups = detect_rows(scene.instances)
print(f"\nrow detection: {len(groups)} rows")
for g in groups:
    print(f"  row {g.id}: plants {g.instance_ids}, "
          f"axis ({g.axis_direction[0]:.2f}, {g.axis_direction[1]:.2f}), "
          f"access nodes {g.left_access.id}/{g.right_access.id}")

graph = build_graph(scene.instances, groups)
print(f"\ngraph map: {len(graph.nodes)} nodes, {len(graph.edges)} edges, "
      f"connected: {graph.is_connected}")
