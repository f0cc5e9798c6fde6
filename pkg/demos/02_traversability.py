"""Scoring terrain risk and extracting obstacle polygons.

Builds a traversability grid from a synthetic curb-world point cloud.
Each cell combines three risks: collision (points above body clearance),
slope (plane-fit angle) and step (height gap to neighbours). Cells over
the risk gate become polygonal obstacles with a smooth clearance cost.
"""
import numpy as np

from phenofield.pipeline import FarmSpec, genfarm
from phenofield.terrain import (build_grid, extract_obstacles, min_separation,
                                obstacle_cost)

spec = FarmSpec(rows=1, plants_per_row=3, terrain_kind="curb", terrain_param=0.25)
scene = genfarm(spec, seed=2)
print(f"terrain cloud: {len(scene.cloud.points)} points, curb height 0.25 m")

grid = build_grid(scene.cloud, cell_size=0.1)
finite = np.isfinite(grid.risk)
print(f"grid: {grid.height} x {grid.width} cells, "
      f"{np.count_nonzero(finite)} measured, "
      f"risk range {grid.risk[finite].min():.2f}..{grid.risk[finite].max():.2f}")

# the curb shows up as a band of step risk
curb_cells = np.count_nonzero(finite & (grid.step > 0.2))
print(f"cells with a >0.2 m step: {curb_cells}")

obstacles = extract_obstacles(grid, risk_threshold=0.8)
print(f"\nobstacles: {len(obstacles.polygons)} polygons "
      f"({sum(len(p) for p in obstacles.polygons)} vertices total)")

probe = scene.instances[1].center + [0.0, 1.0]
sep = min_separation(probe, obstacles)
cost, grad = obstacle_cost(probe, obstacles, epsilon=0.8)
print(f"probe at ({probe[0]:.2f}, {probe[1]:.2f}): separation {sep:.2f} m, "
      f"cost {cost:.3f}, gradient ({grad[0]:+.2f}, {grad[1]:+.2f})")
