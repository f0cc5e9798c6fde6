"""Coloured mesh extraction from a trained radiance field.

Densely samples the field's density over a region of interest, runs Marching
Cubes at a density threshold, and colours each vertex by querying the field
at the vertex position.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from skimage import measure

__all__ = [
    "DensityVolume",
    "TriMesh",
    "sample_volume",
    "marching_cubes",
    "colour_vertices",
    "default_threshold",
    "euler_characteristic",
]


@dataclass
class DensityVolume:
    """Regular lattice of density samples over an axis-aligned region."""

    values: np.ndarray      # (nx, ny, nz), sigma >= 0
    origin: np.ndarray      # (3,) world position of lattice point (0,0,0)
    spacing: np.ndarray     # (3,) metres between lattice points

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.origin = np.asarray(self.origin, dtype=float)
        self.spacing = np.asarray(self.spacing, dtype=float)
        if self.values.ndim != 3:
            raise ValueError("volume must be 3-D")


@dataclass
class TriMesh:
    vertices: np.ndarray    # (V, 3)
    triangles: np.ndarray   # (F, 3) int
    colors: np.ndarray | None = None    # (V, 3) in [0, 1]

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=int).reshape(-1, 3)
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            raise ValueError("triangle index out of range")

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def save_obj(self, path) -> None:
        """Wavefront OBJ; vertex colours appended to `v` lines when present."""
        with open(path, "w") as f:
            for i, v in enumerate(self.vertices):
                if self.colors is not None:
                    c = np.clip(self.colors[i], 0.0, 1.0)
                    f.write(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f} "
                            f"{c[0]:.4f} {c[1]:.4f} {c[2]:.4f}\n")
                else:
                    f.write(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}\n")
            for t in self.triangles:
                f.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")

    def save_json(self, path) -> None:
        payload = {
            "vertices": self.vertices.tolist(),
            "triangles": self.triangles.tolist(),
            "colors": None if self.colors is None else self.colors.tolist(),
        }
        with open(path, "w") as f:
            json.dump(payload, f)


def sample_volume(field, roi_lo, roi_hi, resolution) -> DensityVolume:
    """Sample the field's density on a regular lattice over the ROI box."""
    roi_lo = np.asarray(roi_lo, dtype=float)
    roi_hi = np.asarray(roi_hi, dtype=float)
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (3,)).copy()
    if np.any(res < 2):
        raise ValueError("resolution must be >= 2 per axis")
    axes = [np.linspace(roi_lo[d], roi_hi[d], res[d]) for d in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    sigma, _ = field.query(pts)
    spacing = (roi_hi - roi_lo) / (res - 1)
    return DensityVolume(values=sigma.reshape(tuple(res)), origin=roi_lo,
                         spacing=spacing)


def default_threshold(vol: DensityVolume, fraction: float = 0.5) -> float:
    """Half the 99th-percentile density, the default iso threshold."""
    return fraction * float(np.percentile(vol.values, 99))


def marching_cubes(vol: DensityVolume, threshold: float) -> TriMesh:
    """Iso-surface of the density volume at the threshold.

    Vertex positions are interpolated to the iso-value along lattice edges.
    Nearly coincident vertices are welded at 1e-9 m and zero-area triangles
    dropped. Returns an empty mesh when the threshold is not crossed.
    """
    vals = vol.values
    if not (vals.min() < threshold < vals.max()):
        return TriMesh(vertices=np.zeros((0, 3)), triangles=np.zeros((0, 3), dtype=int))
    verts, faces, _, _ = measure.marching_cubes(vals, level=threshold,
                                                spacing=tuple(vol.spacing))
    verts = verts + vol.origin
    return _weld(TriMesh(vertices=verts, triangles=faces))


def _weld(mesh: TriMesh, tol: float = 1e-9) -> TriMesh:
    """Merge vertices closer than tol and drop degenerate triangles."""
    if mesh.is_empty:
        return mesh
    keys = np.round(mesh.vertices / tol).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    verts = mesh.vertices[first]
    tris = inverse[mesh.triangles]
    a, b, c = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    area2 = np.linalg.norm(np.cross(b - a, c - a), axis=1)
    distinct = ((tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2])
                & (tris[:, 0] != tris[:, 2]))
    keep = distinct & (area2 > 1e-12)
    return TriMesh(vertices=verts, triangles=tris[keep],
                   colors=None if mesh.colors is None else mesh.colors[first])


def colour_vertices(mesh: TriMesh, field) -> TriMesh:
    """Assign each vertex the field's colour at its position.

    The field's colour is direction-free, so the nominal viewing ray along
    the outward vertex normal does not change the lookup.
    """
    if mesh.is_empty:
        return TriMesh(vertices=mesh.vertices, triangles=mesh.triangles,
                       colors=np.zeros((len(mesh.vertices), 3)))
    _, colors = field.query(mesh.vertices)
    return TriMesh(vertices=mesh.vertices, triangles=mesh.triangles, colors=colors)


def euler_characteristic(mesh: TriMesh) -> int:
    """V - E + F over the whole mesh (2 for a single closed genus-0 surface)."""
    v = len(mesh.vertices)
    f = len(mesh.triangles)
    edges = set()
    for t in mesh.triangles:
        for i, j in ((0, 1), (1, 2), (2, 0)):
            edges.add((min(t[i], t[j]), max(t[i], t[j])))
    return v - len(edges) + f
