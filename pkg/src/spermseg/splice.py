"""Head–tail splicing.

Tail skeleton endpoints and head major-axis endpoints are matched when they
are close (distance below ``lambda1`` px) and similarly oriented (acute angle
difference below ``lambda2`` degrees). Matched owners are merged into one
instance and each match is bridged with a 1-px line.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from skimage.draw import line as draw_line

from .errors import SameOwner
from .raster import Ellipse, neighbor_count, prune_spurs

log = logging.getLogger(__name__)

HEAD = "head"
TAIL = "tail"


@dataclass(frozen=True)
class Endpoint:
    position: tuple[float, float]  # (x, y)
    terminal_angle: float  # degrees in [0, 180)
    kind: str  # HEAD or TAIL
    owner_id: int
    end: int = 0

    @property
    def owner(self) -> tuple[str, int]:
        return (self.kind, self.owner_id)

    def sort_key(self):
        # heads before tails, then id, then position: independent of list order
        return (self.kind != HEAD, self.owner_id, self.position, self.end)


@dataclass(frozen=True)
class SpliceThresholds:
    lambda1: float = 30.0
    lambda2: float = 35.0
    n_slope: int = 7
    spur_len: int = 4
    one_tail_per_head: bool = True
    # bridges longer than this must also run along both terminal directions (acute angle < lambda2)
    bridge_check_px: float | None = 3.0

    def __post_init__(self):
        if not (self.lambda1 > 0 and self.lambda2 > 0):
            raise ValueError("lambda1 and lambda2 must be positive")
        if self.n_slope < 2:
            raise ValueError("n_slope must be at least 2")


@dataclass(frozen=True)
class Match:
    a: Endpoint
    b: Endpoint
    angle: float
    distance: float


@dataclass
class SpermInstance:
    head_idx: int | None
    head: np.ndarray | None
    tail_clusters: list[int]
    full_mask: np.ndarray
    skeleton_polyline: list[tuple[int, int]] = field(default_factory=list)
    bridges: list[list[tuple[int, int]]] = field(default_factory=list)

    def to_json(self, mask_png: str | None = None) -> dict:
        return {
            "head_idx": self.head_idx,
            "tail_clusters": list(self.tail_clusters),
            "area": int(self.full_mask.sum()),
            "bridges": len(self.bridges),
            "mask_png": mask_png,
        }


# --------------------------------------------------------------------------
# endpoints


def _norm_angle(deg: float) -> float:
    a = float(deg) % 180.0
    return 0.0 if a >= 180.0 - 1e-12 else a


def _walk(skel: np.ndarray, start: tuple[int, int], n: int) -> list[tuple[int, int]]:
    """First ``n`` pixels reached from ``start`` by BFS over the 8-neighbourhood (row, col)."""
    h, w = skel.shape
    seen = {start}
    order = [start]
    q = deque([start])
    while q and len(order) < n:
        r, c = q.popleft()
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                rr, cc = r + dr, c + dc
                if (dr or dc) and 0 <= rr < h and 0 <= cc < w and skel[rr, cc] and (rr, cc) not in seen:
                    seen.add((rr, cc))
                    order.append((rr, cc))
                    q.append((rr, cc))
    return order[:n]


def _tls_angle(pix: list[tuple[int, int]]) -> float:
    """Orientation of the total-least-squares line through (row, col) pixels, degrees in [0, 180)."""
    p = np.array([(c, r) for r, c in pix], dtype=float)
    p -= p.mean(axis=0)
    _, _, vt = np.linalg.svd(p, full_matrices=False)
    dx, dy = vt[0]
    return _norm_angle(np.degrees(np.arctan2(dy, dx)))


def head_endpoints(ellipse: Ellipse, head_id: int) -> list[Endpoint]:
    ang = _norm_angle(np.degrees(ellipse.orientation))
    (p0, p1) = ellipse.major_axis_endpoints()
    return [
        Endpoint((float(p0[0]), float(p0[1])), ang, HEAD, head_id, 0),
        Endpoint((float(p1[0]), float(p1[1])), ang, HEAD, head_id, 1),
    ]


def skeleton_endpoints(skel: np.ndarray, cluster_id: int, n_slope: int = 7, spur_len: int = 0) -> list[Endpoint]:
    """Degree-1 pixels of ``skel`` with the TLS direction of their first ``n_slope`` pixels.

    With ``spur_len > 0`` short forks are pruned first so a blunt end yields
    one endpoint on the trunk instead of two splayed ones.
    """
    skel = np.asarray(skel, dtype=bool)
    if spur_len > 0:
        skel = prune_spurs(skel, spur_len)
    deg = neighbor_count(skel)
    ends = np.argwhere(skel & (deg == 1))
    if skel.any() and len(ends) == 0:
        log.info("tail cluster %d forms a closed loop; no endpoints", cluster_id)
    out = []
    for i, (r, c) in enumerate(ends):
        pix = _walk(skel, (int(r), int(c)), n_slope)
        out.append(Endpoint((float(c), float(r)), _tls_angle(pix), TAIL, cluster_id, i))
    return out


def extract_endpoints(
    heads: list[Ellipse], skeletons: list[np.ndarray], n_slope: int = 7, spur_len: int = 0
) -> list[Endpoint]:
    """Head major-axis endpoints followed by the degree-1 pixels of every tail skeleton."""
    eps: list[Endpoint] = []
    for i, e in enumerate(heads):
        if e is not None:
            eps.extend(head_endpoints(e, i))
    for j, sk in enumerate(skeletons):
        eps.extend(skeleton_endpoints(sk, j, n_slope, spur_len))
    return eps


# --------------------------------------------------------------------------
# matching


def angular_similarity(e_i: Endpoint, e_j: Endpoint) -> float:
    """Acute difference of the two terminal angles, in degrees."""
    if e_i.owner == e_j.owner:
        raise SameOwner(f"both endpoints belong to {e_i.owner}")
    d = abs(e_i.terminal_angle - e_j.terminal_angle) % 180.0
    return float(min(d, 180.0 - d))


def _distance(a: Endpoint, b: Endpoint) -> float:
    return float(np.hypot(a.position[0] - b.position[0], a.position[1] - b.position[1]))


def bridge_deviation(a: Endpoint, b: Endpoint) -> float:
    """Largest acute angle (degrees) between the segment a-b and either terminal direction."""
    seg = np.degrees(np.arctan2(b.position[1] - a.position[1], b.position[0] - a.position[0])) % 180.0
    devs = []
    for e in (a, b):
        d = abs(seg - e.terminal_angle) % 180.0
        devs.append(min(d, 180.0 - d))
    return float(max(devs))


class _Groups:
    def __init__(self):
        self.parent: dict = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def match_endpoints(eps: list[Endpoint], th: SpliceThresholds = SpliceThresholds()) -> list[Match]:
    """Greedy endpoint matching, most similar angle first.

    Candidates must be closer than ``lambda1`` and differ in angle by less than
    ``lambda2``; they are accepted in order of (angle, distance, owner ids).
    Each endpoint joins at most one pair, head endpoints never pair with other
    head endpoints, a pair never closes a cycle between owners, and with
    ``one_tail_per_head`` a head takes a single match. With
    ``bridge_check_px`` set, a bridge longer than that must itself lie within
    ``lambda2`` of both terminal directions, which rejects side-by-side
    parallel ends.
    """
    eps = sorted(set(eps), key=Endpoint.sort_key)
    cands = []
    for i in range(len(eps)):
        for j in range(i + 1, len(eps)):
            a, b = eps[i], eps[j]
            if a.owner == b.owner or (a.kind == HEAD and b.kind == HEAD):
                continue
            dist = _distance(a, b)
            if dist >= th.lambda1:
                continue
            ang = angular_similarity(a, b)
            if ang >= th.lambda2:
                continue
            if th.bridge_check_px is not None and dist > th.bridge_check_px and bridge_deviation(a, b) >= th.lambda2:
                continue
            cands.append((ang, dist, a.sort_key(), b.sort_key(), a, b))
    cands.sort(key=lambda c: c[:4])

    used: set[Endpoint] = set()
    matched_heads: set[int] = set()
    groups = _Groups()
    out = []
    for ang, dist, _, _, a, b in cands:
        if a in used or b in used:
            continue
        if groups.find(a.owner) == groups.find(b.owner):
            continue
        if th.one_tail_per_head and any(e.kind == HEAD and e.owner_id in matched_heads for e in (a, b)):
            continue
        used.update((a, b))
        for e in (a, b):
            if e.kind == HEAD:
                matched_heads.add(e.owner_id)
        groups.union(a.owner, b.owner)
        out.append(Match(a, b, ang, dist))
    return out


# --------------------------------------------------------------------------
# assembly


def _path_edges(matches: list[Match], src, dst) -> list[int]:
    """Indices of the matches on the (unique) forest path between two owners."""
    adj: dict = {}
    for i, m in enumerate(matches):
        adj.setdefault(m.a.owner, []).append((m.b.owner, i))
        adj.setdefault(m.b.owner, []).append((m.a.owner, i))
    prev = {src: None}
    q = deque([src])
    while q:
        u = q.popleft()
        if u == dst:
            break
        for v, i in adj.get(u, []):
            if v not in prev:
                prev[v] = (u, i)
                q.append(v)
    path = []
    node = dst
    while prev.get(node) is not None:
        node, i = prev[node]
        path.append(i)
    return path


def _split_multi_head(matches: list[Match]) -> list[Match]:
    matches = list(matches)
    while True:
        groups = _Groups()
        for m in matches:
            groups.union(m.a.owner, m.b.owner)
        heads_by_root: dict = {}
        for m in matches:
            for e in (m.a, m.b):
                if e.kind == HEAD:
                    heads_by_root.setdefault(groups.find(e.owner), set()).add(e.owner)
        clash = sorted(sorted(h) for h in heads_by_root.values() if len(h) > 1)
        if not clash:
            return matches
        h0, h1 = clash[0][0], clash[0][1]
        path = _path_edges(matches, h0, h1)
        weakest = max(path, key=lambda i: (matches[i].angle, matches[i].distance))
        log.info("splitting two-head group at match with angle %.1f", matches[weakest].angle)
        del matches[weakest]


def _bridge(a: Endpoint, b: Endpoint, shape) -> list[tuple[int, int]]:
    r0, c0 = int(round(a.position[1])), int(round(a.position[0]))
    r1, c1 = int(round(b.position[1])), int(round(b.position[0]))
    rr, cc = draw_line(r0, c0, r1, c1)
    keep = (rr >= 0) & (rr < shape[0]) & (cc >= 0) & (cc < shape[1])
    return [(int(c), int(r)) for r, c in zip(rr[keep], cc[keep])]


def _polyline(skel: np.ndarray) -> list[tuple[int, int]]:
    """Skeleton pixels as (x, y), walked from endpoints so consecutive points are adjacent where possible."""
    if not skel.any():
        return []
    deg = neighbor_count(skel)
    remaining = skel.copy()
    out = []
    while remaining.any():
        ends = np.argwhere(remaining & (deg == 1))
        start = tuple(int(v) for v in (ends[0] if len(ends) else np.argwhere(remaining)[0]))
        walk = _walk(remaining, start, int(remaining.sum()))
        for r, c in walk:
            remaining[r, c] = False
            out.append((c, r))
    return out


def assemble(
    heads: list[np.ndarray],
    tail_masks: list[np.ndarray],
    skeletons: list[np.ndarray],
    matches: list[Match],
    shape: tuple[int, int] | None = None,
) -> list[SpermInstance]:
    """Merge matched owners into instances; unmatched heads and tails stand alone.

    A group that would hold two heads is cut at the weakest match (largest
    angle difference) on the path joining them, repeatedly, until every
    instance has at most one head. Instances are ordered by head index, then
    by smallest tail cluster id.
    """
    if shape is None:
        ref = heads[0] if heads else tail_masks[0] if tail_masks else None
        if ref is None:
            return []
        shape = ref.shape
    matches = _split_multi_head(matches)

    groups = _Groups()
    owners = [(HEAD, i) for i in range(len(heads))] + [(TAIL, j) for j in range(len(tail_masks))]
    for o in owners:
        groups.find(o)
    for m in matches:
        groups.union(m.a.owner, m.b.owner)
    members: dict = {}
    for o in owners:
        members.setdefault(groups.find(o), []).append(o)

    instances = []
    for root, group in members.items():
        head_ids = sorted(i for k, i in group if k == HEAD)
        tail_ids = sorted(j for k, j in group if k == TAIL)
        full = np.zeros(shape, dtype=bool)
        head_mask = None
        if head_ids:
            head_mask = np.asarray(heads[head_ids[0]], dtype=bool)
            full |= head_mask
        poly = []
        for j in tail_ids:
            full |= np.asarray(tail_masks[j], dtype=bool)
            poly.extend(_polyline(np.asarray(skeletons[j], dtype=bool)))
        bridges = []
        for m in matches:
            if groups.find(m.a.owner) == root:
                br = _bridge(m.a, m.b, shape)
                for x, y in br:
                    full[y, x] = True
                bridges.append(br)
        instances.append(
            SpermInstance(
                head_idx=head_ids[0] if head_ids else None,
                head=head_mask,
                tail_clusters=tail_ids,
                full_mask=full,
                skeleton_polyline=poly,
                bridges=bridges,
            )
        )
    instances.sort(
        key=lambda s: (s.head_idx is None, s.head_idx if s.head_idx is not None else 0, s.tail_clusters[:1])
    )
    return instances


def instances_json(instances: list[SpermInstance], mask_names: list[str] | None = None) -> dict:
    names = mask_names or [None] * len(instances)
    return {"instances": [s.to_json(n) for s, n in zip(instances, names)]}


__all__ = [
    "Endpoint",
    "Match",
    "SpermInstance",
    "SpliceThresholds",
    "angular_similarity",
    "assemble",
    "bridge_deviation",
    "extract_endpoints",
    "head_endpoints",
    "instances_json",
    "match_endpoints",
    "skeleton_endpoints",
]
