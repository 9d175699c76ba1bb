"""Reference clusterers for the ablation: k-means, agglomerative, distance-only spectral."""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial import cKDTree

from .con2dis import Con2DisConfig, TailPointSet, cluster_points, cluster_rows, knn_adjacency, spectral_embed
from .errors import InvalidK
from .kmeans import canonical_labels, kmeans
from .preprocess import PreprocessConfig, foreground_mask
from .synthgen import SynthSpec, generate

# ablation rows, strongest expected first
METHODS = ("con2dis", "spectral_distance_only", "ahc_single", "kmeans_pixels")


def _check(pts, k):
    x = np.asarray(pts, dtype=float).reshape(-1, 2)
    if k < 1 or k > len(x):
        raise InvalidK(f"k={k} with {len(x)} points")
    return x


def kmeans_pixels(pts, k: int, seed: int = 0) -> np.ndarray:
    """Lloyd's k-means on raw pixel coordinates."""
    x = _check(pts, k)
    return canonical_labels(kmeans(x, k, seed=seed).labels)


def ahc(pts, k: int, linkage_method: str = "single") -> np.ndarray:
    """Bottom-up agglomerative clustering cut at ``k`` clusters."""
    x = _check(pts, k)
    if linkage_method not in ("single", "average"):
        raise ValueError("linkage must be 'single' or 'average'")
    if k == len(x):
        return np.arange(len(x))
    if len(x) == 1:
        return np.zeros(1, dtype=int)
    z = linkage(x, method=linkage_method)
    return canonical_labels(fcluster(z, t=k, criterion="maxclust") - 1)


def spectral_distance_only(pts, k: int, sigma: float | None = None, knn_k: int = 16, seed: int = 0) -> np.ndarray:
    """Normalised spectral clustering on a Gaussian kNN affinity (no conformity or connectivity).

    ``sigma`` defaults to the median distance over the kNN edges.
    """
    x = _check(pts, k)
    if len(x) == 1:
        return np.zeros(1, dtype=int)
    knn = sparse.triu(knn_adjacency(x, knn_k), k=1).tocoo()
    d = np.linalg.norm(x[knn.row] - x[knn.col], axis=1)
    if sigma is None:
        sigma = float(np.median(d)) if len(d) else 1.0
    if not np.isfinite(sigma):
        w = np.ones_like(d)
    else:
        w = np.exp(-(d ** 2) / (2.0 * sigma ** 2))
    n = len(x)
    wm = sparse.coo_matrix((w, (knn.row, knn.col)), shape=(n, n))
    wm = (wm + wm.T).tocsr()
    degree = np.asarray(wm.sum(axis=1)).ravel()
    # tiny floor keeps points that underflowed at small sigma inside the solve
    degree = np.maximum(degree, 1e-300)
    _, u = spectral_embed(wm, degree, k)
    return canonical_labels(cluster_rows(u, k, seed=seed).labels)


def label_accuracy(pred, truth) -> float:
    """Fraction of points labelled correctly under the best one-to-one label matching."""
    from scipy.optimize import linear_sum_assignment

    pred, truth = np.asarray(pred), np.asarray(truth)
    p_ids, t_ids = np.unique(pred), np.unique(truth)
    conf = np.array([[np.sum((pred == p) & (truth == t)) for t in t_ids] for p in p_ids])
    r, c = linear_sum_assignment(-conf)
    return float(conf[r, c].sum() / len(pred))


def truth_labels(points, centerlines) -> np.ndarray:
    """Ground-truth label of each point: index of the nearest generating centreline."""
    d = np.column_stack([cKDTree(c).query(points, k=1)[0] for c in centerlines])
    return np.argmin(d, axis=1)


def ablation_fixture(spec: SynthSpec, cfg: Con2DisConfig = Con2DisConfig(), junction_px: float = 3.0) -> dict:
    """Label accuracy of every method on one crossing fixture.

    All methods cluster the same skeleton points of the rendered tails into
    as many clusters as there are curves. Points within ``junction_px`` of a
    crossing are left out of the score because their true label is ambiguous.
    """
    img, gt = generate(spec)
    pts = TailPointSet.from_mask(foreground_mask(img, PreprocessConfig()))
    x = pts.points
    k = len(gt.centerlines)
    truth = truth_labels(x, gt.centerlines)
    keep = np.ones(len(x), dtype=bool)
    for c in gt.crossings:
        keep &= np.hypot(x[:, 0] - c[0], x[:, 1] - c[1]) > junction_px
    labels, _, _ = cluster_points(pts, cfg, k)
    preds = {
        "con2dis": labels,
        "spectral_distance_only": spectral_distance_only(x, k, knn_k=cfg.knn_k, seed=cfg.seed),
        "ahc_single": ahc(x, k, "single"),
        "kmeans_pixels": kmeans_pixels(x, k, seed=cfg.seed),
    }
    return {m: label_accuracy(preds[m][keep], truth[keep]) for m in METHODS}


def ablation_suite(specs, cfg: Con2DisConfig = Con2DisConfig()) -> dict:
    """Per-fixture and mean label accuracies over a list of fixture specs."""
    rows = [ablation_fixture(s, cfg) for s in specs]
    return {
        "fixtures": [{"seed": s.seed, **r} for s, r in zip(specs, rows)],
        "mean": {m: float(np.mean([r[m] for r in rows])) for m in METHODS},
    }
