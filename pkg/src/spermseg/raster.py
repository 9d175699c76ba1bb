"""Binary raster geometry: components, thinning, enclosing circles, ellipses.

Images are ``(H, W, 3)`` uint8 arrays and masks are ``(H, W)`` bool arrays.
Pixel coordinates are cell centres expressed as ``(x, y) = (column, row)``.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError

from .errors import DegenerateMask, EmptyMask

RgbImage = np.ndarray
BinaryMask = np.ndarray

_STRUCT = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}

# 8-neighbour offsets (dy, dx) in Zhang-Suen order P2..P9: N, NE, E, SE, S, SW, W, NW
_RING = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]


@dataclass(frozen=True)
class Ellipse:
    center: tuple[float, float]
    major_semiaxis: float
    minor_semiaxis: float
    orientation: float  # radians in [0, pi), measured from +x towards +y (image rows)

    def major_axis_endpoints(self) -> tuple[tuple[float, float], tuple[float, float]]:
        dx = self.major_semiaxis * math.cos(self.orientation)
        dy = self.major_semiaxis * math.sin(self.orientation)
        cx, cy = self.center
        return (cx - dx, cy - dy), (cx + dx, cy + dy)


def as_mask(mask) -> BinaryMask:
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError(f"expected a 2-D mask, got shape {mask.shape}")
    return mask


def mask_points(mask: BinaryMask) -> np.ndarray:
    """Return the ``(n, 2)`` float array of ``(x, y)`` coordinates of true pixels."""
    ys, xs = np.nonzero(mask)
    return np.column_stack([xs, ys]).astype(float)


def area(mask: BinaryMask) -> int:
    return int(np.count_nonzero(mask))


def connected_components(mask: BinaryMask, connectivity: int = 8) -> list[BinaryMask]:
    """Split ``mask`` into maximal connected components.

    Components are returned in raster order of their first pixel.
    """
    mask = as_mask(mask)
    if connectivity not in _STRUCT:
        raise ValueError("connectivity must be 4 or 8")
    labels, n = ndimage.label(mask, structure=_STRUCT[connectivity])
    return [labels == i for i in range(1, n + 1)]


def count_components(mask: BinaryMask, connectivity: int = 8) -> int:
    return int(ndimage.label(as_mask(mask), structure=_STRUCT[connectivity])[1])


def neighbor_count(mask: BinaryMask) -> np.ndarray:
    """Number of 8-neighbours set for every pixel (zero outside ``mask``)."""
    m = as_mask(mask).astype(np.uint8)
    kernel = np.ones((3, 3), dtype=np.uint8)
    kernel[1, 1] = 0
    counts = ndimage.convolve(m, kernel, mode="constant", cval=0)
    return np.where(m.astype(bool), counts, 0)


# --------------------------------------------------------------------------
# thinning


def _zhang_suen(img: np.ndarray) -> np.ndarray:
    img = np.pad(img.astype(np.uint8), 1)
    while True:
        changed = False
        for step in (0, 1):
            p = [np.roll(np.roll(img, -dy, axis=0), -dx, axis=1) for dy, dx in _RING]
            p2, p3, p4, p5, p6, p7, p8, p9 = p
            b = sum(p)
            seq = p + [p2]
            a = sum(((seq[i] == 0) & (seq[i + 1] == 1)).astype(np.uint8) for i in range(8))
            if step == 0:
                c1 = (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
            else:
                c1 = (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
            delete = (img == 1) & (b >= 2) & (b <= 6) & (a == 1) & c1
            if delete.any():
                img[delete] = 0
                changed = True
        if not changed:
            return img[1:-1, 1:-1].astype(bool)


@lru_cache(maxsize=None)
def _simple_lut() -> np.ndarray:
    """Lookup table over the 256 ring configurations: True where the centre is 8-simple."""
    coords = [(dy, dx) for dy, dx in _RING]
    lut = np.zeros(256, dtype=bool)
    for code in range(256):
        fg = {coords[i] for i in range(8) if code >> i & 1}
        bg = {coords[i] for i in range(8) if not code >> i & 1}
        # 8-components of the foreground ring
        fg_comps = _count_groups(fg, diag=True)
        # 4-components of the background ring that touch a 4-neighbour of the centre
        bg_comps = _count_groups(bg, diag=False, anchors={(-1, 0), (0, 1), (1, 0), (0, -1)})
        lut[code] = fg_comps == 1 and bg_comps == 1
    return lut


def _count_groups(cells, diag, anchors=None):
    cells = set(cells)
    seen = set()
    groups = 0
    for start in sorted(cells):
        if start in seen:
            continue
        stack = [start]
        seen.add(start)
        members = []
        while stack:
            cy, cx = stack.pop()
            members.append((cy, cx))
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    if (dy, dx) == (0, 0) or (not diag and dy and dx):
                        continue
                    nb = (cy + dy, cx + dx)
                    if nb in cells and nb not in seen:
                        seen.add(nb)
                        stack.append(nb)
        if anchors is None or anchors.intersection(members):
            groups += 1
    return groups


def _ring_code(img: np.ndarray, y: int, x: int) -> int:
    code = 0
    for i, (dy, dx) in enumerate(_RING):
        if img[y + dy, x + dx]:
            code |= 1 << i
    return code


def _remove_redundant(skel: np.ndarray) -> np.ndarray:
    """Sequentially delete simple pixels that are not line ends (staircase corners)."""
    lut = _simple_lut()
    img = np.pad(skel, 1)
    changed = True
    while changed:
        changed = False
        ys, xs = np.nonzero(img)
        for y, x in zip(ys, xs):
            code = _ring_code(img, y, x)
            if bin(code).count("1") >= 2 and lut[code]:
                img[y, x] = False
                changed = True
    return img[1:-1, 1:-1]


def thin_to_skeleton(mask: BinaryMask) -> BinaryMask:
    """Thin ``mask`` to a one-pixel-wide, 8-connected skeleton.

    Zhang-Suen parallel thinning followed by a sequential pass that strips
    redundant staircase pixels. Components that Zhang-Suen erases entirely
    (2x2 blocks and similar) keep the pixel nearest their centroid, so the
    8-connected component count of the input is preserved.
    """
    mask = as_mask(mask)
    if not mask.any():
        return np.zeros_like(mask)
    skel = _remove_redundant(_zhang_suen(mask))
    labels, n = ndimage.label(mask, structure=_STRUCT[8])
    hit = np.unique(labels[skel])
    for lab in set(range(1, n + 1)) - set(hit.tolist()):
        ys, xs = np.nonzero(labels == lab)
        d = (ys - ys.mean()) ** 2 + (xs - xs.mean()) ** 2
        j = int(np.argmin(d))
        skel[ys[j], xs[j]] = True
    return skel


def prune_spurs(skel: BinaryMask, max_len: int) -> BinaryMask:
    """Remove branches of at most ``max_len`` pixels that run from an end point into a junction.

    Thinning a blunt end often leaves a small fork; pruning it leaves the
    trunk's own end point. Branches are found on the input skeleton in one
    pass, so a fork of two short arms collapses onto its junction pixel.
    Free-standing short segments (no junction) are kept.
    """
    skel = as_mask(skel)
    out = skel.copy()
    if max_len < 1 or not skel.any():
        return out
    deg = neighbor_count(skel)
    h, w = skel.shape
    for r0, c0 in np.argwhere(deg == 1):
        path = [(int(r0), int(c0))]
        seen = set(path)
        cur = path[0]
        while len(path) <= max_len:
            nxt = [
                (cur[0] + dr, cur[1] + dc)
                for dr, dc in _RING
                if 0 <= cur[0] + dr < h and 0 <= cur[1] + dc < w
                and skel[cur[0] + dr, cur[1] + dc] and (cur[0] + dr, cur[1] + dc) not in seen
            ]
            if not nxt:
                break  # isolated segment ended without a junction
            if len(nxt) > 1 or any(deg[p] >= 3 for p in nxt):
                for r, c in path:
                    out[r, c] = False
                break
            cur = nxt[0]
            seen.add(cur)
            path.append(cur)
    return out


# --------------------------------------------------------------------------
# minimum enclosing circle


def _circle_two(a, b):
    cx, cy = (a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0
    return cx, cy, math.hypot(a[0] - cx, a[1] - cy)


def _circle_three(a, b, c):
    ax, ay = a
    bx, by = b
    cx, cy = c
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    if abs(d) < 1e-12:
        # collinear: the widest pair spans the other point
        pairs = [(a, b), (a, c), (b, c)]
        return max((_circle_two(p, q) for p, q in pairs), key=lambda t: t[2])
    a2, b2, c2 = ax * ax + ay * ay, bx * bx + by * by, cx * cx + cy * cy
    ux = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d
    uy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d
    r = max(math.hypot(ax - ux, ay - uy), math.hypot(bx - ux, by - uy), math.hypot(cx - ux, cy - uy))
    return ux, uy, r


def _inside(c, p, eps=1e-9):
    return math.hypot(p[0] - c[0], p[1] - c[1]) <= c[2] * (1 + eps) + eps


def enclosing_circle_points(points) -> tuple[tuple[float, float], float]:
    """Smallest circle enclosing ``points`` (Welzl, iterative move-forward form)."""
    pts = [tuple(map(float, p)) for p in np.asarray(points, dtype=float).reshape(-1, 2)]
    if not pts:
        raise EmptyMask("no points to enclose")
    pts = list(dict.fromkeys(pts))
    if len(pts) > 64:
        try:
            hull = ConvexHull(np.asarray(pts))
            pts = [pts[i] for i in hull.vertices]
        except QhullError:
            pass
    random.Random(0x5EED).shuffle(pts)
    c = None
    for i, p in enumerate(pts):
        if c is not None and _inside(c, p):
            continue
        c = (p[0], p[1], 0.0)
        for j in range(i):
            q = pts[j]
            if _inside(c, q):
                continue
            c = _circle_two(p, q)
            for k in range(j):
                r = pts[k]
                if not _inside(c, r):
                    c = _circle_three(p, q, r)
    return (c[0], c[1]), c[2]


def min_enclosing_circle(mask: BinaryMask) -> tuple[tuple[float, float], float]:
    mask = as_mask(mask)
    if not mask.any():
        raise EmptyMask("min_enclosing_circle of an empty mask")
    return enclosing_circle_points(mask_points(mask))


# --------------------------------------------------------------------------
# ellipse from moments


def fit_ellipse_moments(mask: BinaryMask) -> Ellipse:
    """Ellipse with the same centroid and second central moments as ``mask``.

    For a filled ellipse the variance along an axis equals ``semiaxis**2 / 4``,
    which fixes the scale of the returned semi-axes.
    """
    mask = as_mask(mask)
    n = area(mask)
    if n == 0:
        raise EmptyMask("cannot fit an ellipse to an empty mask")
    if n < 5:
        raise DegenerateMask(f"need at least 5 pixels to fit an ellipse, got {n}")
    pts = mask_points(mask)
    center = pts.mean(axis=0)
    d = pts - center
    mu20 = float(np.mean(d[:, 0] ** 2))
    mu02 = float(np.mean(d[:, 1] ** 2))
    mu11 = float(np.mean(d[:, 0] * d[:, 1]))
    common = math.sqrt(((mu20 - mu02) / 2.0) ** 2 + mu11 ** 2)
    lam1 = (mu20 + mu02) / 2.0 + common
    lam2 = (mu20 + mu02) / 2.0 - common
    if lam2 <= 1e-12:
        raise DegenerateMask("mask has zero variance across its principal axis")
    theta = 0.5 * math.atan2(2.0 * mu11, mu20 - mu02) % math.pi
    return Ellipse(
        center=(float(center[0]), float(center[1])),
        major_semiaxis=2.0 * math.sqrt(lam1),
        minor_semiaxis=2.0 * math.sqrt(lam2),
        orientation=theta,
    )
