"""Sort candidate masks into sperm heads, dye blocks and tails by shape and colour."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import maskio
from .errors import DimensionMismatch, EmptyMask, IoError, ProviderError
from .preprocess import PreprocessConfig, classify_green, classify_purple
from .raster import area, as_mask, connected_components, min_enclosing_circle


class MaskClass(enum.Enum):
    HEAD = "head"
    DYE_BLOCK = "dye"
    TAIL = "tail"


@dataclass(frozen=True)
class FilterThresholds:
    alpha: float = 0.25
    beta: float = 0.4

    def __post_init__(self):
        if not 0 < self.alpha < 1 or not 0 < self.beta < 1:
            raise ValueError("alpha and beta must lie strictly between 0 and 1")


@dataclass(frozen=True)
class HeadMaskProvider:
    """Where head candidates come from: a directory of mask PNGs, or the colour heuristic."""

    heads_dir: Path | None = None
    min_area: int = 10

    @property
    def builtin(self) -> bool:
        return self.heads_dir is None


@dataclass
class HeadSplit:
    heads: list[np.ndarray]
    dye: list[np.ndarray]
    tail_image: np.ndarray
    candidates: list[tuple[MaskClass, float, float]] = field(default_factory=list)


def shape_index(m: np.ndarray) -> float:
    """Mask area over the area of its minimum enclosing circle, clamped to 1.

    A single pixel has a zero-radius circle; its circle area is taken as one
    pixel so the index is 1.
    """
    m = as_mask(m)
    s = area(m)
    if s == 0:
        raise EmptyMask("shape index of an empty mask")
    _, radius = min_enclosing_circle(m)
    s_scc = max(math.pi * radius * radius, 1.0)
    return min(s / s_scc, 1.0)


def color_index(m: np.ndarray, purple: np.ndarray) -> float:
    m = as_mask(m)
    purple = as_mask(purple)
    if m.shape != purple.shape:
        raise DimensionMismatch(f"mask {m.shape} vs purple map {purple.shape}")
    s = area(m)
    if s == 0:
        raise EmptyMask("color index of an empty mask")
    return area(m & purple) / s


def classify_indices(si: float, ci: float, th: FilterThresholds) -> MaskClass:
    if si <= th.alpha:
        return MaskClass.TAIL
    # CI == beta falls to HEAD: wrongly discarding a sperm is worse than keeping a stain
    return MaskClass.HEAD if ci >= th.beta else MaskClass.DYE_BLOCK


def classify_mask(m: np.ndarray, purple: np.ndarray, th: FilterThresholds = FilterThresholds()) -> MaskClass:
    return classify_indices(shape_index(m), color_index(m, purple), th)


def _load_external(directory: Path, shape) -> list[np.ndarray]:
    try:
        files = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".png")
    except OSError as exc:
        raise ProviderError(f"cannot list head masks in {directory}: {exc}") from exc
    masks = []
    for path in files:
        try:
            m = maskio.read_mask(path)
        except IoError as exc:
            raise ProviderError(str(exc)) from exc
        if m.shape != tuple(shape):
            raise DimensionMismatch(f"{path.name} is {m.shape}, image is {tuple(shape)}")
        masks.append(m)
    return masks


def head_candidates(img: np.ndarray, provider: HeadMaskProvider, pre: PreprocessConfig) -> list[np.ndarray]:
    """Candidate masks for classification.

    Heads come either from the external directory or from 1-px dilated purple
    components. Green components are offered in both modes so dye blocks get
    classified (and removed) even when only head masks are supplied.
    """
    shape = img.shape[:2]
    if provider.builtin:
        cands = [
            ndimage.binary_dilation(c)
            for c in connected_components(classify_purple(img, pre))
            if area(c) >= provider.min_area
        ]
    else:
        cands = _load_external(provider.heads_dir, shape)
    cands += [c for c in connected_components(classify_green(img, pre)) if area(c) >= provider.min_area]
    return [c for c in cands if c.any()]


def provide_heads(
    img: np.ndarray,
    provider: HeadMaskProvider = HeadMaskProvider(),
    th: FilterThresholds = FilterThresholds(),
    pre: PreprocessConfig = PreprocessConfig(),
) -> HeadSplit:
    """Classify candidates and strip heads and dye from the stained foreground."""
    purple = classify_purple(img, pre)
    fg = purple | classify_green(img, pre)
    heads, dye, log = [], [], []
    taken = np.zeros(fg.shape, dtype=bool)
    for cand in head_candidates(img, provider, pre):
        si, ci = shape_index(cand), color_index(cand, purple)
        cls = classify_indices(si, ci, th)
        log.append((cls, si, ci))
        if cls is MaskClass.TAIL:
            continue
        # keep outputs disjoint: earlier candidates own shared pixels
        cand = cand & ~taken
        if not cand.any():
            continue
        taken |= cand
        (heads if cls is MaskClass.HEAD else dye).append(cand)
    return HeadSplit(heads=heads, dye=dye, tail_image=fg & ~taken, candidates=log)
