"""Con2Dis: tail clustering from distance, conformity and connectivity.

Tail pixels are thinned to a skeleton. Every pair of skeleton points gets the
affinity ``w_ij = p_ij * q_ij * r_ij``:

* ``p_ij`` is 1 when either point is among the other's K nearest neighbours,
* ``r_ij`` is 1 when both points fall in the same DBSCAN component,
* ``q_ij = (prod_l cos theta_l) ** o`` over the principal angles between the
  local tangent spaces, which come from a mixture of PPCA analysers.

The clustering is read off the generalised eigenproblem ``(E - W) u = lam E u``
with k-means on the rows of the first ``k`` eigenvectors, and the skeleton
labels are spread back to the full-width mask by a distance threshold.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import eigsh
from scipy.spatial import cKDTree
from sklearn.cluster import DBSCAN

from .errors import BasisError, DegenerateAffinity, InvalidK, TooFewPoints
from .kmeans import canonical_labels, kmeans
from .mppca import MppcaModel, fit_mppca
from .raster import as_mask, mask_points, thin_to_skeleton

log = logging.getLogger(__name__)

_DENSE_LIMIT = 4000
_ISOLATED_DEGREE = 1e-9


@dataclass
class Con2DisConfig:
    knn_k: int = 16
    dbscan_eps: float = 6.0
    dbscan_min_pts: int = 4
    mppca_num_analyzers: int | None = None  # None: max(8, n // 60)
    tangent_dim: int = 1
    conformity_exponent: int = 8
    num_clusters: int | None = None  # None: decided by the caller or the eigengap
    em_max_iters: int = 100
    em_tol: float = 1e-5
    em_var_floor: float = 1e-6
    restore_gamma: float = 5.0
    kmeans_restarts: int = 10
    max_auto_clusters: int = 12
    # automatic k: count generalised eigenvalues below this cut value; None uses the eigengap
    cut_threshold: float | None = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.knn_k < 1 or self.dbscan_min_pts < 1:
            raise ValueError("knn_k and dbscan_min_pts must be positive")
        if self.tangent_dim < 1 or self.conformity_exponent < 1:
            raise ValueError("tangent_dim and conformity_exponent must be >= 1")
        if self.restore_gamma <= 0 or self.dbscan_eps <= 0:
            raise ValueError("restore_gamma and dbscan_eps must be positive")
        if self.num_clusters is not None and self.num_clusters < 1:
            raise ValueError("num_clusters must be positive")

    def analyzers_for(self, n: int) -> int:
        m = self.mppca_num_analyzers or max(8, n // 60)
        return max(1, min(m, n // (self.tangent_dim + 1)))


@dataclass
class TailPointSet:
    points: np.ndarray  # (n, 2) float, (x, y)
    source_mask: np.ndarray
    skeleton: np.ndarray

    @classmethod
    def from_mask(cls, mask) -> "TailPointSet":
        mask = as_mask(mask)
        skel = thin_to_skeleton(mask)
        return cls(points=mask_points(skel), source_mask=mask, skeleton=skel)

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class AffinityMatrix:
    weights: sparse.csr_matrix
    degree: np.ndarray
    knn: sparse.csr_matrix
    components: np.ndarray
    tangents: np.ndarray  # (n, D, d)
    model: MppcaModel

    @property
    def n(self) -> int:
        return self.weights.shape[0]


@dataclass
class ClusterAssignment:
    skeleton_labels: np.ndarray  # (n,)
    restored: np.ndarray  # (k, H, W) bool; a pixel may be set in several layers

    def labels_at(self, x: int, y: int) -> set[int]:
        return {int(c) for c in np.flatnonzero(self.restored[:, y, x])}


@dataclass
class Con2DisResult:
    masks: list[np.ndarray]
    assignment: ClusterAssignment
    points: TailPointSet
    eigenvalues: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.masks)

    def cluster_skeletons(self) -> list[np.ndarray]:
        out = []
        for c in range(self.k):
            sk = np.zeros_like(self.points.skeleton)
            pts = self.points.points[self.assignment.skeleton_labels == c].astype(int)
            sk[pts[:, 1], pts[:, 0]] = True
            out.append(sk)
        return out


# --------------------------------------------------------------------------
# affinity terms


def _as_points(pts) -> np.ndarray:
    if isinstance(pts, TailPointSet):
        return pts.points
    return np.asarray(pts, dtype=float).reshape(-1, 2)


def knn_adjacency(pts, k: int) -> sparse.csr_matrix:
    """Symmetric K-nearest-neighbour indicator matrix with an empty diagonal.

    Ties in distance go to the lower point index.
    """
    x = _as_points(pts)
    n = len(x)
    if n < 2:
        raise TooFewPoints(f"need at least 2 points, got {n}")
    k = min(int(k), n - 1)
    q = min(n, k + 17)
    dist, idx = cKDTree(x).query(x, k=q)
    dist = np.round(dist.reshape(n, q), 9)
    idx = idx.reshape(n, q)
    rows, cols = [], []
    for i in range(n):
        keep = idx[i] != i
        d, j = dist[i][keep], idx[i][keep]
        order = np.lexsort((j, d))[:k]
        rows.append(np.full(len(order), i))
        cols.append(j[order])
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    a = sparse.coo_matrix((np.ones(len(rows), dtype=bool), (rows, cols)), shape=(n, n)).tocsr()
    return (a + a.T).astype(bool).tocsr()


def filtered_components(pts, eps: float, min_pts: int) -> np.ndarray:
    """DBSCAN component id per point; noise joins the component of its nearest core point."""
    x = _as_points(pts)
    n = len(x)
    if n == 0:
        return np.zeros(0, dtype=int)
    db = DBSCAN(eps=eps, min_samples=min_pts).fit(x)
    labels = db.labels_.copy()
    core = labels >= 0
    if not core.any():
        # no dense region at all: fall back to eps-reachability components
        graph = cKDTree(x).sparse_distance_matrix(cKDTree(x), eps, output_type="coo_matrix")
        graph = sparse.coo_matrix((np.ones(graph.nnz), (graph.row, graph.col)), shape=(n, n))
        _, labels = csgraph.connected_components(graph + sparse.eye(n), directed=False)
        return canonical_labels(labels)
    if not core.all():
        _, nearest = cKDTree(x[core]).query(x[~core], k=1)
        labels[~core] = labels[core][nearest]
    return canonical_labels(labels)


def tangent_at(model: MppcaModel, i: int | None = None) -> np.ndarray:
    """Tangent basis of the analyser most responsible for point ``i`` (all points if None)."""
    owner = model.owner()
    if i is None:
        return model.bases[owner]
    return model.bases[owner[i]]


def _check_orthonormal(basis: np.ndarray, atol=1e-6) -> np.ndarray:
    b = np.asarray(basis, dtype=float)
    if b.ndim == 1:
        b = b[:, None]
    gram = b.T @ b
    if not np.allclose(gram, np.eye(gram.shape[0]), atol=atol):
        raise BasisError("basis columns are not orthonormal")
    return b


def principal_angles(theta_i, theta_j) -> np.ndarray:
    """Principal angles (ascending, radians) between two subspaces given by orthonormal bases."""
    a, b = _check_orthonormal(theta_i), _check_orthonormal(theta_j)
    if a.shape != b.shape:
        raise BasisError(f"basis shapes differ: {a.shape} vs {b.shape}")
    s = np.linalg.svd(a.T @ b, compute_uv=False)
    return np.arccos(np.clip(s, 0.0, 1.0))


def conformity(theta_i, theta_j, o: int) -> float:
    angles = principal_angles(theta_i, theta_j)
    return float(np.prod(np.cos(angles)) ** o)


def _edge_conformity(tangents: np.ndarray, rows: np.ndarray, cols: np.ndarray, o: int) -> np.ndarray:
    ti, tj = tangents[rows], tangents[cols]
    if tangents.shape[2] == 1:
        cos = np.abs(np.einsum("ed,ed->e", ti[:, :, 0], tj[:, :, 0]))
        return np.clip(cos, 0.0, 1.0) ** o
    s = np.linalg.svd(ti.transpose(0, 2, 1) @ tj, compute_uv=False)
    return np.prod(np.clip(s, 0.0, 1.0), axis=1) ** o


def build_affinity(pts, cfg: Con2DisConfig = Con2DisConfig(), model: MppcaModel | None = None) -> AffinityMatrix:
    x = _as_points(pts)
    n = len(x)
    knn = knn_adjacency(x, cfg.knn_k)
    comp = filtered_components(x, cfg.dbscan_eps, cfg.dbscan_min_pts)
    if model is None:
        model = fit_mppca(
            x,
            cfg.analyzers_for(n),
            dim=cfg.tangent_dim,
            max_iters=cfg.em_max_iters,
            tol=cfg.em_tol,
            seed=cfg.seed,
            var_floor=cfg.em_var_floor,
        )
    tangents = tangent_at(model)
    coo = sparse.triu(knn, k=1).tocoo()
    rows, cols = coo.row, coo.col
    same = comp[rows] == comp[cols]
    rows, cols = rows[same], cols[same]
    q = _edge_conformity(tangents, rows, cols, cfg.conformity_exponent)
    w = sparse.coo_matrix((q, (rows, cols)), shape=(n, n))
    w = (w + w.T).tocsr()
    w.eliminate_zeros()
    degree = np.asarray(w.sum(axis=1)).ravel()
    return AffinityMatrix(weights=w, degree=degree, knn=knn, components=comp, tangents=tangents, model=model)


# --------------------------------------------------------------------------
# spectral readout


def _smallest_sym(w, degree, k):
    """k smallest eigenpairs of I - D^-1/2 W D^-1/2, mapped back to the pencil (E - W, E)."""
    n = len(degree)
    dinv = 1.0 / np.sqrt(degree)
    if n <= _DENSE_LIMIT:
        wd = w.toarray() if sparse.issparse(w) else np.asarray(w, dtype=float)
        lsym = np.eye(n) - dinv[:, None] * wd * dinv[None, :]
        lsym = (lsym + lsym.T) / 2.0
        vals, vecs = linalg.eigh(lsym, subset_by_index=[0, k - 1])
    else:
        wn = sparse.diags(dinv) @ sparse.csr_matrix(w) @ sparse.diags(dinv)
        lsym = sparse.eye(n) - wn
        vals, vecs = eigsh(lsym, k=k, sigma=-1e-3, which="LM")
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
    u = dinv[:, None] * vecs
    return np.maximum(vals, 0.0), u


def spectral_embed(w, degree, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Generalised eigenvectors of ``(E - W) u = lam E u`` for the ``k`` smallest ``lam``.

    Returns ``(eigenvalues, U)`` with ``U`` of shape ``(n, k)``.
    """
    degree = np.asarray(degree, dtype=float)
    n = len(degree)
    if k < 1 or k > n:
        raise InvalidK(f"k={k} with {n} points")
    if n == 0 or not np.any(degree > 0):
        raise DegenerateAffinity("affinity matrix is identically zero")
    if np.any(degree <= 0):
        raise DegenerateAffinity(f"{int(np.sum(degree <= 0))} isolated points in the affinity graph")
    return _smallest_sym(w, degree, k)


def eigen_residuals(w, degree, vals, u) -> np.ndarray:
    """``||(E - W) u - lam E u|| / ||E u||`` for each returned pair."""
    wu = w @ u
    eu = degree[:, None] * u
    r = eu - wu - vals[None, :] * eu
    return np.linalg.norm(r, axis=0) / np.linalg.norm(eu, axis=0)


def eigengap_k(vals: np.ndarray, k_max: int) -> int:
    """Cluster count at the largest gap in log-spectrum among the first ``k_max`` values."""
    vals = np.asarray(vals, dtype=float)
    if len(vals) < 2:
        return 1
    logv = np.log(np.maximum(vals, 0.0) + 1e-9)
    gaps = np.diff(logv)[:k_max]
    return int(np.argmax(gaps)) + 1


def threshold_k(vals: np.ndarray, threshold: float, k_max: int) -> int:
    """Number of eigenvalues below ``threshold`` (each is a near-disconnected cluster), at least 1."""
    vals = np.asarray(vals, dtype=float)
    return int(min(max(1, np.count_nonzero(vals < threshold)), k_max))


def auto_k(vals: np.ndarray, cfg: "Con2DisConfig") -> int:
    if cfg.cut_threshold is None:
        return eigengap_k(vals, cfg.max_auto_clusters)
    return threshold_k(vals, cfg.cut_threshold, cfg.max_auto_clusters)


def cluster_rows(u: np.ndarray, k: int, seed: int = 0, n_init: int = 10):
    """k-means on the rows of the spectral embedding; returns the KMeansResult."""
    return kmeans(u, k, seed=seed, n_init=n_init)


# --------------------------------------------------------------------------
# restoration


def restore(labels, pts, source_mask, gamma: float, k: int | None = None) -> ClusterAssignment:
    """Give every source pixel the label of each cluster with a skeleton point closer than ``gamma``."""
    x = _as_points(pts)
    labels = np.asarray(labels, dtype=int)
    source_mask = as_mask(source_mask)
    k = int(labels.max()) + 1 if k is None else k
    src = mask_points(source_mask)
    ys, xs = src[:, 1].astype(int), src[:, 0].astype(int)
    restored = np.zeros((k,) + source_mask.shape, dtype=bool)
    for c in range(k):
        members = x[labels == c]
        if len(members) == 0 or len(src) == 0:
            continue
        d, _ = cKDTree(members).query(src, k=1, distance_upper_bound=gamma)
        hit = d < gamma
        restored[c, ys[hit], xs[hit]] = True
    return ClusterAssignment(skeleton_labels=labels, restored=restored)


# --------------------------------------------------------------------------
# end to end


def cluster_points(pts: TailPointSet, cfg: Con2DisConfig = Con2DisConfig(), k: int | None = None, k_min: int = 1):
    """Label skeleton points; returns ``(labels, eigenvalues, diagnostics)``.

    ``k`` falls back to ``cfg.num_clusters`` and then to the automatic rule
    (never below ``k_min``).
    """
    x_in = _as_points(pts)
    n = len(x_in)
    if n < 2:
        raise TooFewPoints(f"need at least 2 skeleton points, got {n}")
    # work in raster order (row, then column) so the seeded EM and k-means
    # see the same sequence whatever order the caller used
    order = np.lexsort((x_in[:, 0], x_in[:, 1]))
    x = x_in[order]
    aff = build_affinity(x, cfg)
    retained = np.flatnonzero(aff.degree > _ISOLATED_DEGREE)
    if len(retained) == 0:
        raise DegenerateAffinity("every skeleton point is isolated")
    w = aff.weights[retained][:, retained]
    deg = np.asarray(w.sum(axis=1)).ravel()

    k = k or cfg.num_clusters
    n_ret = len(retained)
    if k is None:
        probe = min(n_ret, max(cfg.max_auto_clusters, k_min) + 1)
        vals, _ = spectral_embed(w, deg, probe)
        k = max(auto_k(vals, cfg), k_min)
    k = min(k, n_ret)
    vals, u = spectral_embed(w, deg, k)
    km = cluster_rows(u, k, seed=cfg.seed, n_init=cfg.kmeans_restarts)

    labels = np.full(n, -1, dtype=int)
    labels[retained] = km.labels
    isolated = np.flatnonzero(labels < 0)
    if len(isolated):
        _, near = cKDTree(x[retained]).query(x[isolated], k=1)
        labels[isolated] = labels[retained][near]
    labels = canonical_labels(labels)
    out = np.empty(n, dtype=int)
    out[order] = labels
    labels = out

    residuals = eigen_residuals(w, deg, vals, u)
    diagnostics = {
        "n_points": int(n),
        "n_isolated": int(len(isolated)),
        "n_components": int(aff.components.max() + 1),
        "knn_edges": int(aff.knn.nnz // 2),
        "affinity_nonzeros": int(aff.weights.nnz // 2),
        "affinity_density": float(aff.weights.nnz / max(n * n, 1)),
        "k": int(k),
        "eigenvalues": [float(v) for v in vals],
        "eigen_residuals": [float(r) for r in residuals],
        "em_loglik": [float(v) for v in aff.model.loglik_trace],
        "em_analyzers": int(aff.model.n_analyzers),
        "em_reseeded": int(aff.model.reseeded),
        "em_frozen_updates": int(aff.model.frozen_updates),
        "kmeans_inertia": [float(v) for v in km.trace],
    }
    return labels, vals, diagnostics


def con2dis(tail_image, cfg: Con2DisConfig = Con2DisConfig(), k: int | None = None, k_min: int = 1) -> Con2DisResult:
    """Segment a tail-only mask into (possibly overlapping) per-tail masks."""
    pts = TailPointSet.from_mask(tail_image)
    labels, vals, diag = cluster_points(pts, cfg, k, k_min)
    k = int(labels.max()) + 1
    assign = restore(labels, pts, pts.source_mask, cfg.restore_gamma, k)
    masks = [assign.restored[c] for c in range(k)]
    multi = assign.restored.sum(axis=0) > 1
    diag["multi_assigned_pixels"] = int(multi.sum())
    log.debug("con2dis: %d points, k=%d, %d multi-assigned pixels", len(pts), k, int(multi.sum()))
    return Con2DisResult(masks=masks, assignment=assign, points=pts, eigenvalues=vals, diagnostics=diag)


__all__ = [
    "AffinityMatrix",
    "ClusterAssignment",
    "Con2DisConfig",
    "Con2DisResult",
    "TailPointSet",
    "build_affinity",
    "cluster_points",
    "cluster_rows",
    "con2dis",
    "conformity",
    "eigen_residuals",
    "eigengap_k",
    "filtered_components",
    "knn_adjacency",
    "principal_angles",
    "restore",
    "spectral_embed",
    "tangent_at",
    "threshold_k",
]
