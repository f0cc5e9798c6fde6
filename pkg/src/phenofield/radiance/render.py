"""Volume rendering along rays, plus an analytic reference renderer.

Compositing follows the standard emission-absorption model: per-ray samples
ordered by depth with transmittance T_i = exp(-sum_{j<i} sigma_j delta_j) and
pixel colour sum_i T_i (1 - exp(-sigma_i delta_i)) c_i.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Intrinsics, PosedImage, camera_rays
from .field import VoxelRadianceField

__all__ = [
    "Ray",
    "RaySamples",
    "render_ray",
    "render_rays",
    "render_image",
    "AnalyticScene",
    "Ellipsoid",
    "Cylinder",
    "render_reference",
]

K_REF = 256     # samples per ray for analytic reference renders


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    near: float
    far: float

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.direction = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(self.direction)
        if abs(n - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        if not self.near < self.far:
            raise ValueError("require near < far")


@dataclass
class RaySamples:
    """Per-sample quantities along one ray, ordered by depth."""

    positions: np.ndarray       # (K, 3)
    deltas: np.ndarray          # (K,)
    sigmas: np.ndarray          # (K,)
    colors: np.ndarray          # (K, 3)
    transmittance: np.ndarray   # (K,), T_1 = 1


def sample_depths(near: float, far: float, K: int, n_rays: int,
                  rng: np.random.Generator | None = None) -> tuple[np.ndarray, float]:
    """Stratified depths (n_rays, K) and the uniform step size."""
    delta = (far - near) / K
    offsets = (rng.random((n_rays, K)) if rng is not None
               else np.full((n_rays, K), 0.5))
    return near + (np.arange(K)[None, :] + offsets) * delta, delta


def composite(sigmas: np.ndarray, colors: np.ndarray,
              delta: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Alpha compositing for (n_rays, K) densities and (n_rays, K, 3) colours.

    Returns (pixel colours (n_rays, 3), transmittance T (n_rays, K),
    weights (n_rays, K)).
    """
    tau = sigmas * delta
    alpha = 1.0 - np.exp(-tau)
    accum = np.cumsum(tau, axis=1)
    T = np.exp(-(accum - tau))     # exp(-sum_{j<i})
    w = T * alpha
    return np.einsum("nk,nkc->nc", w, colors), T, w


def render_rays(field: VoxelRadianceField, origins: np.ndarray, dirs: np.ndarray,
                near: float, far: float, K: int,
                rng: np.random.Generator | None = None):
    """Batch render rays against a voxel field.

    Returns (colours (n, 3), aux dict with sigmas, colors, T, weights, delta,
    depths).
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    origins = np.asarray(origins, dtype=float).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
    depths, delta = sample_depths(near, far, K, len(origins), rng)
    pts = origins[:, None, :] + depths[..., None] * dirs[:, None, :]
    sigmas, colors = field.query(pts.reshape(-1, 3))
    sigmas = sigmas.reshape(len(origins), K)
    colors = colors.reshape(len(origins), K, 3)
    pix, T, w = composite(sigmas, colors, delta)
    aux = {"sigmas": sigmas, "colors": colors, "T": T, "weights": w,
           "delta": delta, "depths": depths, "points": pts}
    return pix, aux


def render_ray(field: VoxelRadianceField, ray: Ray, K: int,
               rng: np.random.Generator | None = None) -> tuple[np.ndarray, RaySamples]:
    """Render a single ray; returns the colour and the per-sample record."""
    pix, aux = render_rays(field, ray.origin[None], ray.direction[None],
                           ray.near, ray.far, K, rng)
    samples = RaySamples(
        positions=aux["points"][0],
        deltas=np.full(K, aux["delta"]),
        sigmas=aux["sigmas"][0],
        colors=aux["colors"][0],
        transmittance=aux["T"][0],
    )
    return pix[0], samples


def render_image(field: VoxelRadianceField, rotation, translation,
                 intr: Intrinsics, near: float, far: float, K: int) -> np.ndarray:
    """Deterministic (midpoint-sampled) field render from a camera pose."""
    origins, dirs = camera_rays(rotation, translation, intr)
    pix, _ = render_rays(field, origins, dirs, near, far, K)
    return pix.reshape(intr.height, intr.width, 3)


# ---------------------------------------------------------------------------
# analytic reference scenes


@dataclass
class Ellipsoid:
    center: np.ndarray
    radii: np.ndarray
    density: float
    color: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.radii = np.asarray(self.radii, dtype=float)
        self.color = np.asarray(self.color, dtype=float)

    def query(self, pts: np.ndarray) -> np.ndarray:
        r = (pts - self.center) / self.radii
        return np.sum(r * r, axis=1) <= 1.0


@dataclass
class Cylinder:
    """Vertical (z-axis) cylinder."""

    center: np.ndarray
    radius: float
    half_height: float
    density: float
    color: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.color = np.asarray(self.color, dtype=float)

    def query(self, pts: np.ndarray) -> np.ndarray:
        d = pts - self.center
        return ((d[:, 0] ** 2 + d[:, 1] ** 2 <= self.radius**2)
                & (np.abs(d[:, 2]) <= self.half_height))


@dataclass
class AnalyticScene:
    """Constant-density primitive composite used as rendering ground truth."""

    primitives: list

    def query(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pts = np.asarray(pts, dtype=float).reshape(-1, 3)
        sigma = np.zeros(len(pts))
        color = np.zeros((len(pts), 3))
        # later primitives take precedence where shapes overlap
        for prim in self.primitives:
            mask = prim.query(pts)
            sigma[mask] = prim.density
            color[mask] = prim.color
        return sigma, color


def render_reference(scene: AnalyticScene, rotation, translation, intr: Intrinsics,
                     near: float, far: float, K: int = K_REF) -> PosedImage:
    """Ray-march the analytic scene into a posed ground-truth image.

    Deterministic midpoint sampling at high K.
    """
    origins, dirs = camera_rays(np.asarray(rotation, dtype=float),
                                np.asarray(translation, dtype=float), intr)
    depths, delta = sample_depths(near, far, K, len(origins))
    pts = origins[:, None, :] + depths[..., None] * dirs[:, None, :]
    sigma, color = scene.query(pts.reshape(-1, 3))
    sigma = sigma.reshape(len(origins), K)
    color = color.reshape(len(origins), K, 3)
    pix, _, _ = composite(sigma, color, delta)
    return PosedImage(pixels=pix.reshape(intr.height, intr.width, 3),
                      rotation=np.asarray(rotation, dtype=float),
                      translation=np.asarray(translation, dtype=float),
                      intrinsics=intr)
