"""Seeded synthetic micrographs with exact per-instance ground truth.

Tails are cubic Bezier arcs whose width grows linearly from tip to head,
heads are filled ellipses aligned with the tail at its head end, and dye
blocks are irregular star-shaped blobs. Everything is drawn crisp (no
anti-aliasing), so the ground-truth masks are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import PlacementError

MAX_ATTEMPTS = 100


@dataclass
class SynthSpec:
    seed: int = 0
    image_size: tuple[int, int] = (720, 540)
    num_sperm: int = 3
    tail_width_px: tuple[float, float] = (3.0, 5.0)
    tail_length_px: tuple[float, float] = (160.0, 260.0)
    curvature: tuple[float, float] = (0.0, 0.2)
    head_axes_px: tuple[tuple[float, float], tuple[float, float]] = ((9.0, 12.0), (5.0, 7.0))
    num_dye_blobs: int = 0
    dye_radius_px: tuple[float, float] = (9.0, 15.0)
    breakpoint_prob: float = 0.0
    breakpoint_gap_px: tuple[float, float] = (3.0, 5.0)
    noise_prob: float = 0.0
    force_crossings: int = 0
    crossing_angle_deg: tuple[float, float] = (60.0, 90.0)
    with_heads: bool = True
    clearance_px: float = 12.0
    margin_px: int = 12
    head_rgb: tuple[int, int, int] = (128, 52, 160)
    tail_rgb: tuple[int, int, int] = (70, 160, 80)
    dye_rgb: tuple[int, int, int] = (45, 120, 60)
    background_rgb: tuple[int, int, int] = (255, 255, 255)
    color_jitter: int = 8

    def __post_init__(self):
        self.image_size = tuple(int(v) for v in self.image_size)
        self.head_axes_px = tuple(tuple(float(v) for v in r) for r in self.head_axes_px)
        for name in ("tail_width_px", "tail_length_px", "curvature", "dye_radius_px",
                     "breakpoint_gap_px", "crossing_angle_deg"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range is empty: {lo} > {hi}")
            setattr(self, name, (float(lo), float(hi)))
        if not 0 <= self.breakpoint_prob <= 1 or not 0 <= self.noise_prob <= 1:
            raise ValueError("probabilities must lie in [0, 1]")
        if self.force_crossings >= max(self.num_sperm, 1):
            raise ValueError("force_crossings must be below num_sperm")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GroundTruth:
    instances: list[np.ndarray]
    tails: list[np.ndarray]
    heads: list[np.ndarray]
    dye: list[np.ndarray]
    crossings: list[tuple[float, float]] = field(default_factory=list)
    centerlines: list[np.ndarray] = field(default_factory=list)


@dataclass
class _Tail:
    centerline: np.ndarray  # (m, 2) dense samples from head end to tip, (x, y)
    mask: np.ndarray
    head_dir: np.ndarray  # unit vector pointing from the tail into the head


def _bezier(ctrl: np.ndarray, n: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)[:, None]
    p0, p1, p2, p3 = ctrl
    return (1 - t) ** 3 * p0 + 3 * (1 - t) ** 2 * t * p1 + 3 * (1 - t) * t ** 2 * p2 + t ** 3 * p3


def _resample(curve: np.ndarray, step: float = 0.5) -> np.ndarray:
    seg = np.linalg.norm(np.diff(curve, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    grid = np.arange(0.0, s[-1], step)
    return np.column_stack([np.interp(grid, s, curve[:, 0]), np.interp(grid, s, curve[:, 1])])


def _local_curve(rng, spec: SynthSpec) -> np.ndarray:
    """A Bezier arc of random length starting at the origin along +x."""
    length = rng.uniform(*spec.tail_length_px)
    bend = rng.uniform(*spec.curvature) * length
    sign = rng.choice([-1.0, 1.0])
    ctrl = np.array([
        [0.0, 0.0],
        [length / 3, sign * bend * rng.uniform(0.5, 1.0)],
        [2 * length / 3, sign * bend * rng.uniform(-0.3, 1.0)],
        [length, 0.0],
    ])
    curve = _resample(_bezier(ctrl, 400))
    # rescale so arclength equals the drawn length
    arc = np.linalg.norm(np.diff(curve, axis=0), axis=1).sum()
    return curve * (length / max(arc, 1e-9))


def _rotate(pts: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return pts @ np.array([[c, s], [-s, c]])


def _tangent(curve: np.ndarray, i: int, span: int = 6) -> np.ndarray:
    a = curve[max(i - span, 0)]
    b = curve[min(i + span, len(curve) - 1)]
    d = b - a
    return d / max(np.linalg.norm(d), 1e-12)


def _render_tube(curve: np.ndarray, widths: np.ndarray, shape) -> np.ndarray:
    h, w = shape
    pad = float(widths.max())
    x0, y0 = np.floor(curve.min(axis=0) - pad).astype(int)
    x1, y1 = np.ceil(curve.max(axis=0) + pad).astype(int)
    x0, y0, x1, y1 = max(x0, 0), max(y0, 0), min(x1, w - 1), min(y1, h - 1)
    mask = np.zeros(shape, dtype=bool)
    if x1 < x0 or y1 < y0:
        return mask
    yy, xx = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    pix = np.column_stack([xx.ravel(), yy.ravel()]).astype(float)
    d, j = cKDTree(curve).query(pix, k=1)
    inside = d <= widths[j] / 2.0
    mask[yy.ravel()[inside], xx.ravel()[inside]] = True
    return mask


def _render_ellipse(center, a, b, angle, shape) -> np.ndarray:
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    dx, dy = xx - center[0], yy - center[1]
    c, s = math.cos(angle), math.sin(angle)
    u = dx * c + dy * s
    v = -dx * s + dy * c
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _render_blob(center, radius, rng, shape) -> np.ndarray:
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    dx, dy = xx - center[0], yy - center[1]
    theta = np.arctan2(dy, dx)
    r = np.full_like(theta, radius, dtype=float)
    for k in (2, 3, 4):
        r += radius * rng.uniform(0.0, 0.18) * np.cos(k * theta + rng.uniform(0, 2 * np.pi))
    return np.hypot(dx, dy) <= r


def _inside_frame(pts: np.ndarray, shape, margin: float) -> bool:
    h, w = shape
    return bool(
        pts[:, 0].min() >= margin and pts[:, 1].min() >= margin
        and pts[:, 0].max() <= w - 1 - margin and pts[:, 1].max() <= h - 1 - margin
    )


class _Scene:
    def __init__(self, spec: SynthSpec):
        self.spec = spec
        self.shape = (spec.image_size[1], spec.image_size[0])
        self.rng = np.random.default_rng(spec.seed)
        self.tails: list[_Tail] = []
        self.heads: list[np.ndarray] = []
        self.dye: list[np.ndarray] = []
        self.crossings: list[tuple[float, float]] = []
        self.occupied = np.zeros(self.shape, dtype=bool)

    def _grow(self, mask):
        r = int(math.ceil(self.spec.clearance_px))
        return ndimage.binary_dilation(mask, iterations=r) if r > 0 else mask

    def _make_tail(self, cross_with: _Tail | None, central: bool):
        spec, rng = self.spec, self.rng
        local = _local_curve(rng, spec)
        if cross_with is None:
            angle = rng.uniform(0, 2 * np.pi)
            lo, hi = (0.25, 0.75) if central else (0.0, 1.0)
            mid = np.array([rng.uniform(lo, hi) * self.shape[1], rng.uniform(lo, hi) * self.shape[0]])
            curve = _rotate(local - local[len(local) // 2], angle) + mid
            cross_pt = None
        else:
            other = cross_with.centerline
            j = int(rng.uniform(0.3, 0.7) * (len(other) - 1))
            x_pt = other[j]
            other_dir = _tangent(other, j)
            phi = math.radians(rng.uniform(*spec.crossing_angle_deg)) * rng.choice([-1.0, 1.0])
            want = math.atan2(other_dir[1], other_dir[0]) + phi
            i = int(rng.uniform(0.3, 0.7) * (len(local) - 1))
            have_dir = _tangent(local, i)
            have = math.atan2(have_dir[1], have_dir[0])
            curve = _rotate(local - local[i], want - have) + x_pt
            cross_pt = (float(x_pt[0]), float(x_pt[1]))
        if not _inside_frame(curve, self.shape, spec.margin_px + spec.tail_width_px[1]):
            return None
        # widths grow linearly from tip (end of curve) to head end (start)
        w_tip, w_head = sorted(rng.uniform(*spec.tail_width_px, size=2))
        widths = np.linspace(w_head, w_tip, len(curve))
        mask = _render_tube(curve, widths, self.shape)
        head_dir = -_tangent(curve, 0)
        return _Tail(centerline=curve, mask=mask, head_dir=head_dir), cross_pt

    def _make_head(self, tail: _Tail):
        spec, rng = self.spec, self.rng
        a = rng.uniform(*spec.head_axes_px[0])
        b = min(rng.uniform(*spec.head_axes_px[1]), a * 0.9)
        center = tail.centerline[0] + tail.head_dir * (a - 1.0)
        angle = math.atan2(tail.head_dir[1], tail.head_dir[0])
        pts = np.array([center + tail.head_dir * a, center - tail.head_dir * a])
        if not _inside_frame(pts, self.shape, spec.margin_px):
            return None
        return _render_ellipse(center, a, b, angle, self.shape)

    def place_sperm(self, cross_with: _Tail | None, central: bool = False):
        for _ in range(MAX_ATTEMPTS):
            made = self._make_tail(cross_with, central)
            if made is None:
                continue
            tail, cross_pt = made
            head = self._make_head(tail) if self.spec.with_heads else np.zeros(self.shape, dtype=bool)
            if head is None:
                continue
            body = tail.mask | head
            if cross_with is None:
                if (body & self.occupied).any():
                    continue
            else:
                others = self.occupied & ~self._grow(cross_with.mask)
                if (body & others).any():
                    continue
                if (head & self._grow(cross_with.mask)).any():
                    continue
                touch = tail.mask & self._grow(cross_with.mask)
                if ndimage.label(touch, structure=np.ones((3, 3)))[1] != 1:
                    continue
                if not (tail.mask & cross_with.mask).any():
                    continue
            self.tails.append(tail)
            self.heads.append(head)
            self.occupied |= self._grow(body)
            if cross_pt is not None:
                self.crossings.append(cross_pt)
            return
        raise PlacementError(f"could not place sperm {len(self.tails)} after {MAX_ATTEMPTS} attempts")

    def place_dye(self):
        spec, rng = self.spec, self.rng
        for _ in range(MAX_ATTEMPTS):
            r = rng.uniform(*spec.dye_radius_px)
            c = (rng.uniform(0, self.shape[1]), rng.uniform(0, self.shape[0]))
            if not _inside_frame(np.array([[c[0] - 1.4 * r, c[1] - 1.4 * r], [c[0] + 1.4 * r, c[1] + 1.4 * r]]),
                                 self.shape, spec.margin_px):
                continue
            blob = _render_blob(c, r, rng, self.shape)
            if (blob & self.occupied).any():
                continue
            self.dye.append(blob)
            self.occupied |= self._grow(blob)
            return
        raise PlacementError(f"could not place dye blob {len(self.dye)} after {MAX_ATTEMPTS} attempts")

    def carve_breakpoint(self, tail: _Tail):
        spec, rng = self.spec, self.rng
        curve = tail.centerline
        step = np.linalg.norm(np.diff(curve, axis=0), axis=1).mean()
        for _ in range(MAX_ATTEMPTS):
            centre = int(rng.uniform(0.3, 0.8) * (len(curve) - 1))
            if any(math.dist(curve[centre], c) < 25.0 for c in self.crossings):
                continue
            half = int(round(rng.uniform(*spec.breakpoint_gap_px) / (2 * step)))
            lo, hi = max(centre - half, 0), min(centre + half, len(curve) - 1)
            ys, xs = np.nonzero(tail.mask)
            _, j = cKDTree(curve).query(np.column_stack([xs, ys]).astype(float), k=1)
            cut = (j >= lo) & (j <= hi)
            tail.mask[ys[cut], xs[cut]] = False
            return


def _paint(img, mask, rgb, rng, jitter):
    n = int(mask.sum())
    if n == 0:
        return
    base = np.array(rgb, dtype=int)[None, :]
    noise = rng.integers(-jitter, jitter + 1, size=(n, 3)) if jitter else 0
    img[mask] = np.clip(base + noise, 0, 255).astype(np.uint8)


def generate(spec: SynthSpec) -> tuple[np.ndarray, GroundTruth]:
    """Render one scene; the same spec always yields bit-identical output."""
    scene = _Scene(spec)
    for i in range(spec.num_sperm):
        cross_with = scene.tails[i - 1] if 0 < i <= spec.force_crossings else None
        if cross_with is not None and spec.force_crossings > 1:
            cross_with = scene.tails[int(scene.rng.integers(len(scene.tails)))]
        # tails that others will cross are kept away from the border
        scene.place_sperm(cross_with, central=cross_with is None and i < spec.force_crossings)
    for _ in range(spec.num_dye_blobs):
        scene.place_dye()
    for tail in scene.tails:
        if scene.rng.random() < spec.breakpoint_prob:
            scene.carve_breakpoint(tail)

    shape = scene.shape
    img = np.empty(shape + (3,), dtype=np.uint8)
    img[:] = np.array(spec.background_rgb, dtype=np.uint8)
    heads_union = np.zeros(shape, dtype=bool)
    for h in scene.heads:
        heads_union |= h
    tails = [t.mask & ~heads_union for t in scene.tails]
    paint_rng = np.random.default_rng([spec.seed, 1])
    for t in tails:
        _paint(img, t, spec.tail_rgb, paint_rng, spec.color_jitter)
    for d in scene.dye:
        _paint(img, d, spec.dye_rgb, paint_rng, spec.color_jitter)
    for h in scene.heads:
        _paint(img, h, spec.head_rgb, paint_rng, spec.color_jitter)
    if spec.noise_prob > 0:
        speckle = (paint_rng.random(shape) < spec.noise_prob) & ~scene.occupied
        _paint(img, speckle, spec.tail_rgb, paint_rng, spec.color_jitter)

    gt = GroundTruth(
        instances=[t | h for t, h in zip(tails, scene.heads)],
        tails=tails,
        heads=[h for h in scene.heads] if spec.with_heads else [],
        dye=scene.dye,
        crossings=scene.crossings,
        centerlines=[t.centerline for t in scene.tails],
    )
    return img, gt


def cross_suite_specs(n: int = 20, base_seed: int = 1000) -> list[SynthSpec]:
    """Two tail-only curves crossing at 60-90 degrees, one spec per seed."""
    return [
        SynthSpec(
            seed=base_seed + i,
            image_size=(320, 320),
            num_sperm=2,
            tail_length_px=(150.0, 210.0),
            curvature=(0.0, 0.15),
            force_crossings=1,
            with_heads=False,
            color_jitter=0,
        )
        for i in range(n)
    ]


def scene_suite_specs(n: int = 10, base_seed: int = 2000) -> list[SynthSpec]:
    """Full scenes: 3-5 sperm, at least one crossing, 1-2 dye blobs, breakpoints at p=0.3."""
    rng = np.random.default_rng(base_seed)
    specs = []
    for i in range(n):
        specs.append(
            SynthSpec(
                seed=base_seed + i,
                num_sperm=int(rng.integers(3, 6)),
                num_dye_blobs=int(rng.integers(1, 3)),
                breakpoint_prob=0.3,
                force_crossings=1,
            )
        )
    return specs
