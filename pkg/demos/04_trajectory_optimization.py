"""Refining a local trajectory by functional-gradient descent.

Starts from a wiggly polyline crossing near an obstacle, descends a
weighted objective of smoothness + obstacle clearance + viewpoint
tracking, then fits a clamped B-spline and timestamps it at constant
speed.
"""
import numpy as np

from phenofield.local_planner import (BSplineConfig, ObjectiveContext,
                                      OptimizerConfig, Trajectory,
                                      ViewpointTrack, bspline_parameterize,
                                      optimize, time_parameterize)
from phenofield.terrain import ObstacleField

obstacles = ObstacleField(polygons=[np.array([[2.0, -0.5], [3.0, -0.5],
                                              [3.0, 0.5], [2.0, 0.5]])])

n = 16
xs = np.linspace(0.0, 5.0, n)
ys = 0.5 * np.sin(np.linspace(0, 3 * np.pi, n))
ys[0] = ys[-1] = 0.0
traj = Trajectory(control_points=np.column_stack([xs, ys]), kind="sampling")

track = ViewpointTrack(indices=[4, 11], positions=[[1.3, 1.0], [3.7, 1.0]])
cfg = OptimizerConfig(learning_rate=5e-3, max_iters=300)
ctx = ObjectiveContext(weights=cfg, obstacles=obstacles, view_track=track)

opt, history = optimize(traj, cfg, ctx)
print(f"objective: {history[0]:.3f} -> {history[-1]:.3f} "
      f"in {len(history) - 1} iterations "
      f"({history[-1] / history[0]:.0%} of initial)")

t, curve = bspline_parameterize(opt, BSplineConfig(degree=3))
times = time_parameterize(curve, kind="sampling")
print(f"B-spline: {len(curve)} samples, path length "
      f"{np.sum(np.linalg.norm(np.diff(curve, axis=0), axis=1)):.2f} m, "
      f"duration {times[-1]:.1f} s at 0.2 m/s")

mid = curve[len(curve) // 2]
print(f"midpoint of the refined curve: ({mid[0]:.2f}, {mid[1]:.2f})")
