"""Gradient-descent training of the voxel radiance field on posed images.

Backpropagation through the compositing equation is computed analytically;
parameter updates use the sum-over-rays form of the batch gradient so the
step size is independent of the batch size. Training is deterministic for a
fixed seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit as sigmoid

from .camera import PosedImage, camera_rays
from .field import VoxelRadianceField
from .losses import OcclusionConfig, occlusion_loss, rendering_loss
from .render import composite, sample_depths

__all__ = ["TrainConfig", "train", "loss_gradients"]


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 40
    samples_per_ray: int = 48
    near: float = 0.05
    far: float = 3.0
    lr_density: float = 0.5
    lr_color: float = 0.1
    momentum: float = 0.9
    occ_weight: float = 1.0
    occ_prefix_frac: float = 0.15
    batch_rays: int = 8192
    jitter: bool = True
    seed: int = 0


def _ray_dataset(images: list[PosedImage]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    origins, dirs, targets = [], [], []
    for img in images:
        o, d = camera_rays(img.rotation, img.translation, img.intrinsics)
        origins.append(o)
        dirs.append(d)
        targets.append(img.pixels.reshape(-1, 3))
    return np.vstack(origins), np.vstack(dirs), np.vstack(targets)


def loss_gradients(field: VoxelRadianceField, origins: np.ndarray, dirs: np.ndarray,
                   targets: np.ndarray, K: int, near: float, far: float,
                   occ: OcclusionConfig, occ_weight: float,
                   rng: np.random.Generator | None = None):
    """Losses and their gradients w.r.t. the raw voxel parameters.

    Gradients are for the mean-over-rays losses L_color + occ_weight * L_occ
    on this ray batch. Returns (L_color, L_occ, grad_density, grad_color).
    """
    n = len(origins)
    depths, delta = sample_depths(near, far, K, n, rng)
    pts = (origins[:, None, :] + depths[..., None] * dirs[:, None, :]).reshape(-1, 3)
    corners, weights, inside = field.interp_weights(pts)

    sp_flat = np.logaddexp(0.0, field.density_raw).ravel()
    sig_d_flat = sigmoid(field.density_raw).ravel()       # d softplus / d raw
    col_act_flat = sigmoid(field.color_raw).reshape(-1, 3)

    sigmas = np.einsum("nk,nk->n", weights, sp_flat[corners])
    colors = np.einsum("nk,nkc->nc", weights, col_act_flat[corners])
    sigmas = np.where(inside, sigmas, 0.0)
    colors = np.where(inside[:, None], colors, 0.0)
    sigmas = sigmas.reshape(n, K)
    colors = colors.reshape(n, K, 3)

    pred, T, w = composite(sigmas, colors, delta)
    l_color = rendering_loss(pred, targets)
    l_occ = occlusion_loss(sigmas, occ)

    # dL_color/dC_hat, mean-over-rays loss
    dL_dC = 2.0 * (pred - targets) / n                      # (n, 3)
    # colour path: dC_hat/dc_i = w_i
    dL_dc = dL_dC[:, None, :] * w[..., None]                # (n, K, 3)
    # density path through compositing
    alpha = 1.0 - np.exp(-sigmas * delta)
    wc = w[..., None] * colors                              # (n, K, 3)
    suffix = np.cumsum(wc[:, ::-1, :], axis=1)[:, ::-1, :] - wc   # sum_{j>i} w_j c_j
    inner = T[..., None] * (1.0 - alpha)[..., None] * colors - suffix
    dL_dsigma = delta * np.einsum("nc,nkc->nk", dL_dC, inner)
    # occlusion penalty
    dL_dsigma = dL_dsigma + occ_weight * occ.mask[None, :] / (K * n)

    # scatter through trilinear interpolation and activations
    dL_dsigma_s = (dL_dsigma.reshape(-1) * inside)          # outside: no gradient
    dL_dc_s = dL_dc.reshape(-1, 3) * inside[:, None]

    grad_density = np.zeros(field.density_raw.size)
    contrib = dL_dsigma_s[:, None] * weights * sig_d_flat[corners]
    np.add.at(grad_density, corners.ravel(), contrib.ravel())

    grad_color = np.zeros((field.color_raw.size // 3, 3))
    dsig = col_act_flat * (1.0 - col_act_flat)
    contrib_c = dL_dc_s[:, None, :] * weights[..., None] * dsig[corners]
    np.add.at(grad_color, corners.ravel(),
              contrib_c.reshape(-1, 3))

    return (l_color, l_occ,
            grad_density.reshape(field.density_raw.shape),
            grad_color.reshape(field.color_raw.shape))


def train(field: VoxelRadianceField, images: list[PosedImage],
          cfg: TrainConfig | None = None) -> tuple[VoxelRadianceField, list[dict]]:
    """Fit the voxel field to posed images; returns the field and per-epoch metrics.

    Minibatch gradient descent with momentum over all image rays. Metrics per
    epoch: L_color, L_occ, PSNR (from the epoch's colour MSE).
    """
    cfg = cfg or TrainConfig()
    if len(images) < 2:
        raise ValueError("training needs at least 2 posed images")
    origins, dirs, targets = _ray_dataset(images)
    n_rays = len(origins)
    occ = OcclusionConfig.from_prefix_fraction(cfg.samples_per_ray, cfg.occ_prefix_frac)

    vel_d = np.zeros_like(field.density_raw)
    vel_c = np.zeros_like(field.color_raw)
    metrics = []
    rng = np.random.default_rng(cfg.seed)

    for epoch in range(cfg.epochs):
        perm = rng.permutation(n_rays)
        jrng = np.random.default_rng((cfg.seed, epoch)) if cfg.jitter else None
        epoch_color = 0.0
        epoch_occ = 0.0
        for lo in range(0, n_rays, cfg.batch_rays):
            sel = perm[lo:lo + cfg.batch_rays]
            l_color, l_occ, g_d, g_c = loss_gradients(
                field, origins[sel], dirs[sel], targets[sel],
                cfg.samples_per_ray, cfg.near, cfg.far, occ, cfg.occ_weight,
                rng=jrng)
            if not (math.isfinite(l_color) and math.isfinite(l_occ)):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            nb = len(sel)
            epoch_color += l_color * nb
            epoch_occ += l_occ * nb
            # sum-over-rays gradient: batch-size independent step scale
            vel_d = cfg.momentum * vel_d - cfg.lr_density * g_d * nb
            vel_c = cfg.momentum * vel_c - cfg.lr_color * g_c * nb
            field.density_raw += vel_d
            field.color_raw += vel_c
        epoch_color /= n_rays
        epoch_occ /= n_rays
        mse = epoch_color / 3.0
        metrics.append({
            "epoch": epoch,
            "L_color": epoch_color,
            "L_occ": epoch_occ,
            "PSNR": float("inf") if mse == 0 else 10.0 * math.log10(1.0 / mse),
        })
    return field, metrics


def save_metrics_csv(path, metrics: list[dict]) -> None:
    with open(path, "w") as f:
        f.write("epoch,L_color,L_occ,PSNR\n")
        for m in metrics:
            f.write(f"{m['epoch']},{m['L_color']!r},{m['L_occ']!r},{m['PSNR']!r}\n")
