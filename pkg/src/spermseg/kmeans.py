"""Seeded Lloyd's k-means with k-means++ initialisation.

Kept in-house because the inertia trace and the empty-cluster rule are part
of the clustering contract and are checked by the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidK


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    trace: list[float] = field(default_factory=list)
    reseeds: int = 0


def _sqdist(x, c):
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers, dtype=float)


def _lloyd(x, centers, max_iter, tol):
    trace, reseeds = [], 0
    k = len(centers)
    labels = np.zeros(len(x), dtype=int)
    for _ in range(max_iter):
        d = _sqdist(x, centers)
        labels = d.argmin(axis=1)
        trace.append(float(d[np.arange(len(x)), labels].sum()))
        new = centers.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = x[members].mean(axis=0)
            else:
                # re-seed from the point farthest from its own centre
                far = int(np.argmax(d[np.arange(len(x)), labels]))
                new[j] = x[far]
                labels[far] = j
                reseeds += 1
        shift = float(((new - centers) ** 2).sum())
        centers = new
        if shift <= tol:
            break
    d = _sqdist(x, centers)
    labels = d.argmin(axis=1)
    inertia = float(d[np.arange(len(x)), labels].sum())
    trace.append(inertia)
    return labels, centers, inertia, trace, reseeds


def kmeans(x, k: int, seed: int = 0, n_init: int = 10, max_iter: int = 300, tol: float = 1e-10) -> KMeansResult:
    """Best of ``n_init`` seeded k-means++ / Lloyd runs (lowest inertia)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if k < 1 or k > len(x):
        raise InvalidK(f"k={k} with {len(x)} points")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        centers = kmeans_pp_init(x, k, rng)
        labels, centers, inertia, trace, reseeds = _lloyd(x, centers, max_iter, tol)
        if best is None or inertia < best.inertia - 1e-12:
            best = KMeansResult(labels, centers, inertia, trace, reseeds)
    return best


def canonical_labels(labels: np.ndarray) -> np.ndarray:
    """Renumber labels by order of first appearance."""
    labels = np.asarray(labels)
    _, first = np.unique(labels, return_index=True)
    order = labels[np.sort(first)]
    remap = {int(old): new for new, old in enumerate(order)}
    return np.array([remap[int(v)] for v in labels], dtype=int)
