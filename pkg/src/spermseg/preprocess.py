"""Colour normalisation and stain classification of raw micrographs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.color import hsv2rgb, rgb2hsv


@dataclass
class PreprocessConfig:
    brightness_gain: float = 1.0
    contrast_gain: float = 1.0
    saturation_gain: float = 1.0
    sharpen: bool = False
    whiten_background: bool = False
    purple_hue_range: tuple[float, float] = (250.0, 330.0)
    green_hue_range: tuple[float, float] = (70.0, 170.0)
    min_saturation: float = 0.15
    min_value: float = 0.15

    def __post_init__(self):
        self.purple_hue_range = tuple(float(v) for v in self.purple_hue_range)
        self.green_hue_range = tuple(float(v) for v in self.green_hue_range)
        for name in ("brightness_gain", "contrast_gain", "saturation_gain"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for rng in (self.purple_hue_range, self.green_hue_range):
            if len(rng) != 2 or not all(0 <= v < 360 for v in rng):
                raise ValueError(f"hue range must be two degrees in [0, 360), got {rng}")


def _clip8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def normalize(img: np.ndarray, cfg: PreprocessConfig) -> np.ndarray:
    """Apply brightness, contrast, saturation, sharpening and background whitening.

    Each adjustment is skipped at its neutral setting, so the default config
    returns an identical copy of ``img``.
    """
    out = np.asarray(img, dtype=np.uint8).copy()
    if cfg.brightness_gain != 1.0:
        out = _clip8(out.astype(float) * cfg.brightness_gain)
    if cfg.contrast_gain != 1.0:
        out = _clip8((out.astype(float) - 128.0) * cfg.contrast_gain + 128.0)
    if cfg.saturation_gain != 1.0:
        hsv = rgb2hsv(out)
        hsv[..., 1] = np.clip(hsv[..., 1] * cfg.saturation_gain, 0.0, 1.0)
        out = _clip8(hsv2rgb(hsv) * 255.0)
    if cfg.sharpen:
        f = out.astype(float)
        blur = ndimage.uniform_filter(f, size=(3, 3, 1), mode="nearest")
        out = _clip8(2.0 * f - blur)
    if cfg.whiten_background:
        hsv = rgb2hsv(out)
        out[(hsv[..., 1] < cfg.min_saturation) & (hsv[..., 2] >= 0.5)] = 255
    return out


def _hue_mask(img, hue_range, cfg) -> np.ndarray:
    hsv = rgb2hsv(np.asarray(img, dtype=np.uint8))
    h = hsv[..., 0] * 360.0
    lo, hi = hue_range
    in_range = (h >= lo) & (h <= hi) if lo <= hi else (h >= lo) | (h <= hi)
    return in_range & (hsv[..., 1] >= cfg.min_saturation) & (hsv[..., 2] >= cfg.min_value)


def classify_purple(img: np.ndarray, cfg: PreprocessConfig) -> np.ndarray:
    return _hue_mask(img, cfg.purple_hue_range, cfg)


def classify_green(img: np.ndarray, cfg: PreprocessConfig) -> np.ndarray:
    return _hue_mask(img, cfg.green_hue_range, cfg)


def foreground_mask(img: np.ndarray, cfg: PreprocessConfig) -> np.ndarray:
    """Stained pixels: the union of the purple and green classes."""
    return classify_purple(img, cfg) | classify_green(img, cfg)
