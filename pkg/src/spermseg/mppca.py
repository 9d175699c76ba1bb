"""Mixtures of probabilistic principal component analysers fitted by EM.

Each analyser ``m`` models ``x ~ N(mean_m, W_m W_m^T + noise_var_m I)``. The
M-step solves each analyser's weighted PPCA problem in closed form from the
eigendecomposition of its responsibility-weighted covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import TooFewPoints
from .kmeans import kmeans


@dataclass
class MppcaModel:
    means: np.ndarray  # (M, D)
    bases: np.ndarray  # (M, D, d), orthonormal columns
    scales: np.ndarray  # (M, d), sqrt(eigval - noise_var) so that W = bases * scales
    noise_var: np.ndarray  # (M,)
    weights: np.ndarray  # (M,)
    responsibilities: np.ndarray  # (n, M)
    loglik_trace: list[float] = field(default_factory=list)
    reseeded: int = 0
    frozen_updates: int = 0

    @property
    def n_analyzers(self) -> int:
        return len(self.weights)

    def covariances(self) -> np.ndarray:
        w = self.bases * self.scales[:, None, :]
        dim = self.means.shape[1]
        return w @ w.transpose(0, 2, 1) + self.noise_var[:, None, None] * np.eye(dim)

    def owner(self) -> np.ndarray:
        """Index of the analyser with maximal responsibility per point (lowest index on ties)."""
        return np.argmax(self.responsibilities, axis=1)


def _log_gauss(x, means, covs):
    n, dim = x.shape
    out = np.empty((n, len(means)))
    for m, (mu, c) in enumerate(zip(means, covs)):
        chol = np.linalg.cholesky(c)
        z = np.linalg.solve(chol, (x - mu).T)
        logdet = 2.0 * np.log(np.diag(chol)).sum()
        out[:, m] = -0.5 * ((z * z).sum(axis=0) + logdet + dim * np.log(2 * np.pi))
    return out


def _ppca_from_cov(cov, d, var_floor):
    vals, vecs = np.linalg.eigh(cov)
    vals, vecs = vals[::-1], vecs[:, ::-1]
    dim = len(vals)
    noise = max(float(vals[d:].mean()) if d < dim else 0.0, var_floor)
    scales = np.sqrt(np.maximum(vals[:d] - noise, 0.0))
    return vecs[:, :d], scales, noise


def _e_step(x, means, bases, scales, noise, weights):
    w = bases * scales[:, None, :]
    covs = w @ w.transpose(0, 2, 1) + noise[:, None, None] * np.eye(x.shape[1])
    with np.errstate(divide="ignore"):
        logp = _log_gauss(x, means, covs) + np.log(weights)[None, :]
    norm = logsumexp(logp, axis=1)
    return np.exp(logp - norm[:, None]), float(norm.sum())


def fit_mppca(
    points,
    n_analyzers: int,
    dim: int = 1,
    max_iters: int = 100,
    tol: float = 1e-5,
    seed: int = 0,
    var_floor: float = 1e-6,
) -> MppcaModel:
    """Fit a mixture of ``n_analyzers`` PPCA models with ``dim`` latent dimensions.

    Initialisation is k-means++/Lloyd on the coordinates with local PCA in each
    cell; starting cells with fewer than ``dim + 1`` points are re-seeded.
    Iteration stops after ``max_iters`` E-steps or once the relative
    log-likelihood gain drops below ``tol``. An analyser whose effective
    support falls below ``dim + 1`` points keeps its previous parameters for
    that M-step (only its weight is updated), which keeps the log-likelihood
    non-decreasing.
    """
    x = np.asarray(points, dtype=float)
    n, D = x.shape
    M = int(n_analyzers)
    if dim >= D:
        raise ValueError(f"latent dimension {dim} must be below data dimension {D}")
    if n < M * (dim + 1):
        raise TooFewPoints(f"{n} points cannot support {M} analysers of dimension {dim}")

    init = kmeans(x, M, seed=seed, n_init=1)
    labels = init.labels.copy()
    reseeded = 0
    for m in range(M):
        if np.count_nonzero(labels == m) >= dim + 1:
            continue
        # steal the dim+1 points nearest to a random donor point
        donor = x[np.random.default_rng(seed + m).integers(n)]
        nearest = np.argsort(((x - donor) ** 2).sum(axis=1), kind="stable")[: dim + 1]
        labels[nearest] = m
        reseeded += 1

    means = np.zeros((M, D))
    bases = np.zeros((M, D, dim))
    scales = np.zeros((M, dim))
    noise = np.zeros(M)
    weights = np.zeros(M)
    for m in range(M):
        xm = x[labels == m]
        if len(xm) == 0:
            xm = x[[int(np.argmin(((x - init.centers[m]) ** 2).sum(axis=1)))]]
        means[m] = xm.mean(axis=0)
        cov = np.cov(xm.T, bias=True).reshape(D, D) if len(xm) > 1 else np.zeros((D, D))
        bases[m], scales[m], noise[m] = _ppca_from_cov(cov, dim, var_floor)
        weights[m] = max(len(xm), 1)
    weights /= weights.sum()

    trace: list[float] = []
    frozen = 0
    resp, ll = _e_step(x, means, bases, scales, noise, weights)
    trace.append(ll)
    for _ in range(max_iters - 1):
        nk = resp.sum(axis=0)
        weights = nk / n
        for m in range(M):
            if nk[m] < dim + 1:
                frozen += 1
                continue
            mu = resp[:, m] @ x / nk[m]
            diff = x - mu
            cov = (resp[:, m, None] * diff).T @ diff / nk[m]
            means[m] = mu
            bases[m], scales[m], noise[m] = _ppca_from_cov(cov, dim, var_floor)
        resp, ll = _e_step(x, means, bases, scales, noise, weights)
        prev = trace[-1]
        trace.append(ll)
        if ll - prev < tol * abs(prev):
            break

    return MppcaModel(
        means=means,
        bases=bases,
        scales=scales,
        noise_var=noise,
        weights=weights,
        responsibilities=resp,
        loglik_trace=trace,
        reseeded=reseeded,
        frozen_updates=frozen,
    )
