"""Pinhole cameras, posed images and PPM image io."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Intrinsics",
    "PosedImage",
    "look_at_pose",
    "camera_rays",
    "read_ppm",
    "write_ppm",
    "save_poses",
    "load_poses",
]


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")


@dataclass
class PosedImage:
    """An RGB image with its camera-to-world pose and pinhole intrinsics."""

    pixels: np.ndarray      # (H, W, 3) in [0, 1]
    rotation: np.ndarray    # (3, 3) camera-to-world
    translation: np.ndarray  # (3,) camera center in world
    intrinsics: Intrinsics

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=float)
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.translation = np.asarray(self.translation, dtype=float)
        if not np.allclose(self.rotation @ self.rotation.T, np.eye(3), atol=1e-6):
            raise ValueError("pose rotation must be orthonormal")
        H, W = self.pixels.shape[:2]
        if (H, W) != (self.intrinsics.height, self.intrinsics.width):
            raise ValueError("pixel array does not match intrinsics dimensions")


def look_at_pose(eye, target, up=(0.0, 0.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """Camera-to-world rotation and translation looking from eye at target.

    Camera frame: +z forward, +x right, +y down.
    """
    eye = np.asarray(eye, dtype=float)
    target = np.asarray(target, dtype=float)
    fwd = target - eye
    fwd = fwd / np.linalg.norm(fwd)
    up = np.asarray(up, dtype=float)
    right = np.cross(fwd, up)
    nr = np.linalg.norm(right)
    if nr < 1e-9:
        right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
        nr = np.linalg.norm(right)
    right = right / nr
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd], axis=1)   # columns are camera axes
    return rot, eye


def camera_rays(rotation: np.ndarray, translation: np.ndarray,
                intr: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """World-frame ray origins and unit directions for every pixel.

    Returns origins (H*W, 3) and directions (H*W, 3), row-major pixel order.
    """
    us, vs = np.meshgrid(np.arange(intr.width), np.arange(intr.height))
    x = (us.ravel() + 0.5 - intr.cx) / intr.fx
    y = (vs.ravel() + 0.5 - intr.cy) / intr.fy
    dirs_cam = np.stack([x, y, np.ones_like(x)], axis=1)
    dirs = dirs_cam @ rotation.T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(translation, dirs.shape).copy()
    return origins, dirs


def write_ppm(path, image: np.ndarray) -> None:
    """Write an RGB image in [0, 1] as binary PPM (P6, 8-bit)."""
    img = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    data = np.round(img * 255.0).astype(np.uint8)
    H, W = data.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{W} {H}\n255\n".encode())
        f.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P6":
            raise ValueError(f"{path}: not a binary PPM (P6) file")
        fields = []
        while len(fields) < 3:
            line = f.readline()
            if line.startswith(b"#"):
                continue
            fields.extend(line.split())
        W, H, maxval = (int(x) for x in fields)
        data = np.frombuffer(f.read(W * H * 3), dtype=np.uint8)
    return data.reshape(H, W, 3).astype(float) / maxval


def save_poses(path, images: list[PosedImage], filenames: list[str]) -> None:
    entries = []
    for img, name in zip(images, filenames):
        intr = img.intrinsics
        entries.append({
            "file": name,
            "R": img.rotation.reshape(-1).tolist(),
            "t": img.translation.tolist(),
            "fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
            "width": intr.width, "height": intr.height,
        })
    with open(path, "w") as f:
        json.dump(entries, f, indent=1)


def load_poses(path, image_dir=None) -> list[PosedImage]:
    import os

    with open(path) as f:
        entries = json.load(f)
    images = []
    for e in entries:
        intr = Intrinsics(fx=e["fx"], fy=e["fy"], cx=e["cx"], cy=e["cy"],
                          width=e["width"], height=e["height"])
        file_path = e["file"] if image_dir is None else os.path.join(image_dir, e["file"])
        pixels = read_ppm(file_path)
        images.append(PosedImage(pixels=pixels,
                                 rotation=np.asarray(e["R"], dtype=float).reshape(3, 3),
                                 translation=np.asarray(e["t"], dtype=float),
                                 intrinsics=intr))
    return images
