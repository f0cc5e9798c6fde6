"""Training losses and image quality metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["OcclusionConfig", "rendering_loss", "occlusion_loss", "psnr"]


@dataclass
class OcclusionConfig:
    """Binary prefix mask selecting the near-camera ray samples to penalise."""

    mask: np.ndarray    # (K,) of {0, 1}, ones then zeros

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=float)
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise ValueError("mask entries must be 0 or 1")
        ones = int(self.mask.sum())
        if not np.all(self.mask[:ones] == 1):
            raise ValueError("mask must be a prefix mask (ones then zeros)")

    @classmethod
    def from_prefix_fraction(cls, K: int, fraction: float) -> "OcclusionConfig":
        """Mask the first ceil(K * fraction) samples of each ray."""
        n = min(K, int(math.ceil(K * fraction)))
        mask = np.zeros(K)
        mask[:n] = 1.0
        return cls(mask=mask)

    @property
    def prefix_length(self) -> int:
        return int(self.mask.sum())


def rendering_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean over rays of the squared colour error (summed over channels)."""
    pred = np.asarray(pred, dtype=float).reshape(-1, 3)
    target = np.asarray(target, dtype=float).reshape(-1, 3)
    if pred.shape != target.shape:
        raise ValueError(f"batch shapes differ: {pred.shape} vs {target.shape}")
    return float(np.mean(np.sum((pred - target) ** 2, axis=1)))


def occlusion_loss(sigmas: np.ndarray, cfg: OcclusionConfig) -> float:
    """Mean over rays of (1/K) sum_k sigma_k m_k."""
    sigmas = np.asarray(sigmas, dtype=float)
    if sigmas.ndim == 1:
        sigmas = sigmas[None, :]
    K = sigmas.shape[1]
    if len(cfg.mask) != K:
        raise ValueError(f"mask length {len(cfg.mask)} does not match K={K}")
    return float(np.mean(sigmas @ cfg.mask) / K)


def psnr(pred: np.ndarray, target: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images.

    Identical images return the +inf sentinel.
    """
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"image shapes differ: {pred.shape} vs {target.shape}")
    mse = float(np.mean((pred - target) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * math.log10(1.0 / mse)
