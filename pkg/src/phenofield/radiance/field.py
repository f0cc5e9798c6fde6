"""Dense voxel radiance field with trilinear interpolation.

Each voxel stores a raw density parameter (softplus-activated, so density is
always non-negative) and three raw colour parameters (sigmoid-activated into
[0, 1]). Queries interpolate the activated per-voxel values between voxel
centers; density is zero outside the field bounds.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import expit as sigmoid

__all__ = ["VoxelRadianceField", "softplus", "sigmoid"]


def softplus(x):
    return np.logaddexp(0.0, x)


@dataclass
class VoxelRadianceField:
    bounds_lo: np.ndarray       # (3,) metres
    bounds_hi: np.ndarray       # (3,)
    resolution: tuple[int, int, int]
    density_raw: np.ndarray     # (nx, ny, nz)
    color_raw: np.ndarray       # (nx, ny, nz, 3)

    @classmethod
    def create(cls, bounds_lo, bounds_hi, resolution=(128, 128, 128),
               density_init: float = -4.0, color_init: float = 0.0):
        """New field; the default raw density gives near-transparent space."""
        nx, ny, nz = resolution
        return cls(
            bounds_lo=np.asarray(bounds_lo, dtype=float),
            bounds_hi=np.asarray(bounds_hi, dtype=float),
            resolution=(nx, ny, nz),
            density_raw=np.full((nx, ny, nz), density_init, dtype=np.float64),
            color_raw=np.full((nx, ny, nz, 3), color_init, dtype=np.float64),
        )

    @property
    def voxel_size(self) -> np.ndarray:
        return (self.bounds_hi - self.bounds_lo) / np.asarray(self.resolution)

    def interp_weights(self, pts: np.ndarray):
        """Trilinear corner indices and weights for a batch of points.

        Returns (corners, weights, inside): corners (N, 8) flat voxel indices,
        weights (N, 8) trilinear weights, inside (N,) bool mask of points
        within bounds. Interpolation coordinates are clamped to the voxel
        center lattice, so bound-adjacent points use edge padding.
        """
        pts = np.asarray(pts, dtype=float).reshape(-1, 3)
        res = np.asarray(self.resolution)
        inside = np.all((pts >= self.bounds_lo) & (pts <= self.bounds_hi), axis=1)
        u = (pts - self.bounds_lo) / self.voxel_size - 0.5
        u = np.clip(u, 0.0, (res - 1).astype(float))
        i0 = np.floor(u).astype(int)
        i0 = np.minimum(i0, res - 2)
        i0 = np.maximum(i0, 0)
        f = np.clip(u - i0, 0.0, 1.0)
        nx, ny, nz = self.resolution
        corners = np.empty((len(pts), 8), dtype=np.int64)
        weights = np.empty((len(pts), 8))
        k = 0
        for dx in (0, 1):
            wx = f[:, 0] if dx else 1.0 - f[:, 0]
            for dy in (0, 1):
                wy = f[:, 1] if dy else 1.0 - f[:, 1]
                for dz in (0, 1):
                    wz = f[:, 2] if dz else 1.0 - f[:, 2]
                    corners[:, k] = ((i0[:, 0] + dx) * ny + (i0[:, 1] + dy)) * nz + (i0[:, 2] + dz)
                    weights[:, k] = wx * wy * wz
                    k += 1
        return corners, weights, inside

    def query(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Density and colour at points; (0, black) outside bounds.

        Accepts a single (3,) point or an (N, 3) batch; returns matching
        shapes.
        """
        pts = np.asarray(pts, dtype=float)
        single = pts.ndim == 1
        corners, weights, inside = self.interp_weights(pts)
        sig_flat = softplus(self.density_raw).ravel()
        col_flat = sigmoid(self.color_raw).reshape(-1, 3)
        sigma = np.einsum("nk,nk->n", weights, sig_flat[corners])
        color = np.einsum("nk,nkc->nc", weights, col_flat[corners])
        sigma = np.where(inside, sigma, 0.0)
        color = np.where(inside[:, None], color, 0.0)
        if single:
            return float(sigma[0]), color[0]
        return sigma, color

    def voxel_centers(self) -> np.ndarray:
        nx, ny, nz = self.resolution
        xs = self.bounds_lo[0] + (np.arange(nx) + 0.5) * self.voxel_size[0]
        ys = self.bounds_lo[1] + (np.arange(ny) + 0.5) * self.voxel_size[1]
        zs = self.bounds_lo[2] + (np.arange(nz) + 0.5) * self.voxel_size[2]
        gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)

    # --- checkpoint io: JSON header + raw little-endian float32 planes -----

    def save(self, path) -> None:
        header = json.dumps({
            "bounds_lo": self.bounds_lo.tolist(),
            "bounds_hi": self.bounds_hi.tolist(),
            "resolution": list(self.resolution),
        }).encode()
        with open(path, "wb") as f:
            f.write(struct.pack("<I", len(header)))
            f.write(header)
            f.write(self.density_raw.astype("<f4").tobytes())
            f.write(self.color_raw.astype("<f4").tobytes())

    @classmethod
    def load(cls, path) -> "VoxelRadianceField":
        with open(path, "rb") as f:
            (hlen,) = struct.unpack("<I", f.read(4))
            header = json.loads(f.read(hlen).decode())
            nx, ny, nz = header["resolution"]
            dens = np.frombuffer(f.read(4 * nx * ny * nz), dtype="<f4")
            col = np.frombuffer(f.read(4 * nx * ny * nz * 3), dtype="<f4")
        return cls(
            bounds_lo=np.asarray(header["bounds_lo"], dtype=float),
            bounds_hi=np.asarray(header["bounds_hi"], dtype=float),
            resolution=(nx, ny, nz),
            density_raw=dens.astype(np.float64).reshape(nx, ny, nz),
            color_raw=col.astype(np.float64).reshape(nx, ny, nz, 3),
        )
