"""Random rotation / isotropic scaling / integer shift about the image centre."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass
class AugmentConfig:
    max_rotation_deg: float = 10.0
    scale_min: float = 0.9
    scale_max: float = 1.1
    max_shift_px: int = 2
    fill: float = -1.0  # black in the [-1, 1] pixel range

    def __post_init__(self):
        if self.scale_min > self.scale_max:
            raise ValueError("scale_min must not exceed scale_max")


@dataclass
class AffineParams:
    angle_deg: float = 0.0
    scale: float = 1.0
    shift: tuple = (0, 0)  # (rows, cols)


def sample_params(rng: np.random.Generator, cfg: AugmentConfig) -> AffineParams:
    angle = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg)
    scale = rng.uniform(cfg.scale_min, cfg.scale_max)
    shift = tuple(int(s) for s in rng.integers(-cfg.max_shift_px, cfg.max_shift_px + 1, size=2))
    return AffineParams(angle, scale, shift)


def apply_affine(image: np.ndarray, params: AffineParams, fill: float = -1.0) -> np.ndarray:
    """Warp an H x W image with bilinear sampling; uncovered pixels get ``fill``."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"expected a single-channel H x W image, got {image.shape}")
    if params.angle_deg == 0 and params.scale == 1 and tuple(params.shift) == (0, 0):
        return image.copy()
    theta = np.deg2rad(params.angle_deg)
    c, s = np.cos(theta), np.sin(theta)
    # output -> input coordinate map: inverse rotation and scaling about the centre
    inv = np.array([[c, s], [-s, c]]) / params.scale
    center = (np.array(image.shape) - 1) / 2.0
    offset = center - inv @ (center + np.asarray(params.shift, dtype=float))
    out = ndimage.affine_transform(image.astype(np.float64), inv, offset=offset, order=1, mode="constant", cval=fill)
    lo, hi = min(image.min(), fill), max(image.max(), fill)
    return np.clip(out, lo, hi).astype(image.dtype)


def augment(image: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig | None = None,
            params: AffineParams | None = None) -> np.ndarray:
    """Augment one H x W image; pass ``params`` to force a specific transform."""
    cfg = cfg or AugmentConfig()
    if params is None:
        params = sample_params(rng, cfg)
    return apply_affine(image, params, cfg.fill)


def augment_batch(images: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig | None = None) -> np.ndarray:
    """Augment an N x H x W x 1 batch image by image."""
    cfg = cfg or AugmentConfig()
    out = np.empty_like(images)
    for i in range(len(images)):
        out[i, ..., 0] = augment(images[i, ..., 0], rng, cfg)
    return out
