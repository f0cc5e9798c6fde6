"""Voxel radiance field: rendering, losses, training, cameras."""
from .camera import (Intrinsics, PosedImage, camera_rays, load_poses,
                     look_at_pose, read_ppm, save_poses, write_ppm)
from .field import VoxelRadianceField, sigmoid, softplus
from .losses import OcclusionConfig, occlusion_loss, psnr, rendering_loss
from .render import (AnalyticScene, Cylinder, Ellipsoid, Ray, RaySamples,
                     composite, render_image, render_ray, render_rays,
                     render_reference, sample_depths)
from .train import TrainConfig, loss_gradients, save_metrics_csv, train

__all__ = [
    "Intrinsics", "PosedImage", "camera_rays", "load_poses", "look_at_pose",
    "read_ppm", "save_poses", "write_ppm",
    "VoxelRadianceField", "sigmoid", "softplus",
    "OcclusionConfig", "occlusion_loss", "psnr", "rendering_loss",
    "AnalyticScene", "Cylinder", "Ellipsoid", "Ray", "RaySamples",
    "composite", "sample_depths",
    "render_image", "render_ray", "render_rays", "render_reference",
    "TrainConfig", "loss_gradients", "save_metrics_csv", "train",
]
