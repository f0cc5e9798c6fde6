"""Field-phenotyping toolkit.

Turns plant detections and a terrain point cloud into a feasible coverage
trajectory, then reconstructs per-plant appearance and geometry from views
gathered along that trajectory with a voxel radiance field.
"""
from . import (farm_map, geometry, global_planner, local_planner, pipeline,
               radiance, terrain)

__version__ = "0.1.0"

__all__ = [
    "farm_map",
    "terrain",
    "global_planner",
    "local_planner",
    "radiance",
    "geometry",
    "pipeline",
]
