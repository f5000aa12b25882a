"""Train-time augmentation: geometric jitter, histogram equalization, blend."""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import NamedTuple

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import ValidationError


@dataclass
class AugmentConfig:
    crop_size: int = 96
    rotation_range_degrees: tuple[float, float] = (-15.0, 15.0)
    mirror_probability: float = 0.5
    blend_weight: float = 0.5
    enabled: bool = True

    def __post_init__(self):
        self.rotation_range_degrees = tuple(float(a) for a in self.rotation_range_degrees)
        if self.crop_size < 1:
            raise ValidationError("crop_size must be positive")
        lo, hi = self.rotation_range_degrees
        if lo > hi:
            raise ValidationError("rotation range must be (min, max)")
        for name in ("mirror_probability", "blend_weight"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1]")

    def to_dict(self):
        d = asdict(self)
        d["rotation_range_degrees"] = list(self.rotation_range_degrees)
        return d


class Geometry(NamedTuple):
    top: int
    left: int
    angle: float
    mirror: bool


def _check_crop(image: np.ndarray, crop_size: int) -> None:
    h, w = image.shape[:2]
    if crop_size > min(h, w):
        raise ValidationError(f"crop_size {crop_size} exceeds input side {min(h, w)}")


def draw_geometry(rng: np.random.Generator, cfg: AugmentConfig, side: int) -> Geometry:
    slack = side - cfg.crop_size
    top = int(rng.integers(0, slack + 1))
    left = int(rng.integers(0, slack + 1))
    angle = float(rng.uniform(*cfg.rotation_range_degrees))
    mirror = bool(rng.random() < cfg.mirror_probability)
    return Geometry(top, left, angle, mirror)


def rotate(image: np.ndarray, angle: float) -> np.ndarray:
    """Rotate about the centre with bilinear sampling and edge replication."""
    if angle == 0.0:
        return image.copy()
    out = ndimage.rotate(image, angle, axes=(1, 0), reshape=False, order=1, mode="nearest")
    return out.astype(image.dtype, copy=False)


def apply_geometry(image: np.ndarray, geom: Geometry, crop_size: int) -> np.ndarray:
    _check_crop(image, crop_size)
    out = image[geom.top:geom.top + crop_size, geom.left:geom.left + crop_size]
    out = rotate(out, geom.angle)
    if geom.mirror:
        out = out[:, ::-1]
    return np.clip(out, 0.0, 1.0)


def strategy_one(image: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig) -> np.ndarray:
    """Random crop, then rotation, then horizontal mirror."""
    _check_crop(image, cfg.crop_size)
    geom = draw_geometry(rng, cfg, min(image.shape[:2]))
    return apply_geometry(image, geom, cfg.crop_size)


def equalize_channel(channel: np.ndarray) -> np.ndarray:
    levels = np.clip(np.rint(channel * 255.0), 0, 255).astype(np.int64)
    hist = np.bincount(levels.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    n = levels.size
    cdf_min = cdf[hist > 0][0]
    if n == cdf_min:
        # one occupied level: the mapping degenerates, keep the input
        return channel.copy()
    lut = np.rint((cdf - cdf_min) / (n - cdf_min) * 255.0) / 255.0
    return lut[levels].astype(channel.dtype)


def strategy_two(image: np.ndarray) -> np.ndarray:
    """Per-channel histogram equalization over 256 levels."""
    image = np.asarray(image)
    if image.ndim == 2:
        return equalize_channel(image)
    return np.stack([equalize_channel(image[..., c]) for c in range(image.shape[-1])], axis=-1)


def center_crop(image: np.ndarray, crop_size: int) -> np.ndarray:
    _check_crop(image, crop_size)
    h, w = image.shape[:2]
    top, left = (h - crop_size) // 2, (w - crop_size) // 2
    return image[top:top + crop_size, left:left + crop_size]


def center_crop_batch(images: np.ndarray, crop_size: int) -> np.ndarray:
    h, w = images.shape[1:3]
    if crop_size > min(h, w):
        raise ValidationError(f"crop_size {crop_size} exceeds input side {min(h, w)}")
    top, left = (h - crop_size) // 2, (w - crop_size) // 2
    return images[:, top:top + crop_size, left:left + crop_size]


def augment(image: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig) -> np.ndarray:
    if not cfg.enabled:
        return center_crop(image, cfg.crop_size).copy()
    geometric = strategy_one(image, rng, cfg)
    w = cfg.blend_weight
    if w == 1.0:
        return geometric
    out = w * geometric + (1.0 - w) * strategy_two(geometric)
    return np.clip(out, 0.0, 1.0).astype(image.dtype, copy=False)


class Augmenter(BaseEstimator, TransformerMixin):
    """Stateless transformer applying :func:`augment` to an image batch.

    Each image gets its own stream seeded by ``(random_state, index)``.
    """

    def __init__(self, crop_size=96, rotation_range_degrees=(-15.0, 15.0),
                 mirror_probability=0.5, blend_weight=0.5, enabled=True, random_state=0):
        self.crop_size = crop_size
        self.rotation_range_degrees = rotation_range_degrees
        self.mirror_probability = mirror_probability
        self.blend_weight = blend_weight
        self.enabled = enabled
        self.random_state = random_state

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        cfg = AugmentConfig(self.crop_size, self.rotation_range_degrees,
                            self.mirror_probability, self.blend_weight, self.enabled)
        X = np.asarray(X)
        return np.stack([
            augment(img, np.random.default_rng([self.random_state, i]), cfg)
            for i, img in enumerate(X)
        ])
