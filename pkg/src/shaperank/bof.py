"""Codebooks, vector quantization, sparse-coding pursuit, pooling and
manifold ranking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .mesh import MassWeights


@dataclass(frozen=True)
class Codebook:
    centroids: np.ndarray
    seed: int
    method: str = "kmeans"
    objective: tuple = field(default=(), repr=False)

    @property
    def K(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass(frozen=True)
class PooledHistogram:
    values: np.ndarray
    pooling: str


@dataclass(frozen=True)
class PursuitResult:
    code: np.ndarray
    objective: float
    iterations: int
    converged: bool


def _sqdist(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] + (c * c).sum(1)[None, :] - 2.0 * x @ c.T
    return np.maximum(d, 0.0)


def kmeans(features, K: int, seed: int = 0, iters: int = 100, tol: float = 0.0) -> Codebook:
    """Lloyd iterations from a seeded k-means++ start.

    A cluster that empties is re-seeded at the point farthest from its
    current centroid (lowest index on ties).
    """
    x = np.asarray(features, dtype=float)
    n = len(x)
    if not 1 <= K <= n:
        raise ValueError(f"K must lie in [1, {n}]")
    rng = np.random.default_rng(seed)
    centers = np.empty((K, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = _sqdist(x, centers[:1])[:, 0]
    for k in range(1, K):
        tot = d2.sum()
        if tot <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * tot, side="right"))
            idx = min(idx, n - 1)
        centers[k] = x[idx]
        d2 = np.minimum(d2, _sqdist(x, centers[k:k + 1])[:, 0])
    history = []
    for _ in range(iters):
        dist = _sqdist(x, centers)
        lab = dist.argmin(1)
        obj = float(dist[np.arange(n), lab].sum())
        history.append(obj)
        mind = dist[np.arange(n), lab]
        counts = np.bincount(lab, minlength=K)
        new = np.zeros_like(centers)
        np.add.at(new, lab, x)
        taken = np.zeros(n, bool)
        for k in range(K):
            if counts[k]:
                new[k] /= counts[k]
            else:
                far = np.where(taken, -1.0, mind)
                j = int(far.argmax())
                taken[j] = True
                new[k] = x[j]
        shift = np.abs(new - centers).max()
        centers = new
        if shift <= tol:
            break
    dist = _sqdist(x, centers)
    history.append(float(dist.min(1).sum()))
    return Codebook(centers, seed, "kmeans", tuple(history))


def assign(features, codebook: Codebook) -> np.ndarray:
    """Hard assignment: index of the nearest centroid."""
    return _sqdist(np.atleast_2d(features), codebook.centroids).argmin(1)


def hard_histogram(features, codebook: Codebook, weights=None) -> np.ndarray:
    lab = assign(features, codebook)
    w = np.ones(len(lab)) if weights is None else np.asarray(getattr(weights, "weights", weights))
    return np.bincount(lab, weights=w, minlength=codebook.K)


def centroid_spacing(codebook: Codebook) -> float:
    """Median distance from each centroid to its nearest other centroid."""
    if codebook.K < 2:
        return 1.0
    d = _sqdist(codebook.centroids, codebook.centroids)
    np.fill_diagonal(d, np.inf)
    return float(np.median(np.sqrt(d.min(1))))


def soft_assign(features, codebook: Codebook, sigma: float) -> np.ndarray:
    """Gaussian soft assignment, rows normalized to sum 1."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x = np.atleast_2d(np.asarray(features, dtype=float))
    e = -_sqdist(x, codebook.centroids) / (2.0 * sigma * sigma)
    e -= e.max(axis=1, keepdims=True)
    w = np.exp(e)
    w /= w.sum(axis=1, keepdims=True)
    return w[0] if np.ndim(features) == 1 else w


# ----------------------------------------------------------------- pursuit


def lasso_objective(x, D, z, lam) -> float:
    r = x - D @ z
    return 0.5 * float(r @ r) + lam * float(np.abs(z).sum())


def soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def sparse_pursuit(x, D, lam: float, max_iter: int = 5000, tol: float = 1e-9) -> PursuitResult:
    """min_z ½‖x − Dz‖² + λ‖z‖₁ by monotone FISTA.

    Stops when the objective changes by less than ``tol`` between
    iterations. The returned code is the best iterate seen.
    """
    x = np.asarray(x, dtype=float)
    D = np.asarray(D, dtype=float)
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    step = 1.0 / max(np.linalg.norm(D, 2) ** 2, 1e-300)
    z = np.zeros(D.shape[1])
    y = z.copy()
    t = 1.0
    f = lasso_objective(x, D, z, lam)
    for it in range(1, max_iter + 1):
        g = D.T @ (D @ y - x)
        cand = soft_threshold(y - step * g, step * lam)
        fc = lasso_objective(x, D, cand, lam)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        # monotone variant keeps the better of candidate and current point
        z_new = cand if fc <= f else z
        f_new = min(fc, f)
        y = z_new + (t / t_new) * (cand - z_new) + ((t - 1.0) / t_new) * (z_new - z)
        change = f - f_new
        z, f, t = z_new, f_new, t_new
        if fc <= f and 0 <= change < tol and it > 1:
            # confirm with a plain proximal step from the current point
            g = D.T @ (D @ z - x)
            z2 = soft_threshold(z - step * g, step * lam)
            f2 = lasso_objective(x, D, z2, lam)
            if f - f2 < tol:
                if f2 < f:
                    z, f = z2, f2
                return PursuitResult(z, f, it, True)
    return PursuitResult(z, f, max_iter, False)


def sparse_codes(features, D, lam: float, max_iter: int = 5000, tol: float = 1e-9) -> np.ndarray:
    """Row-wise sparse codes by monotone FISTA run on all rows at once.

    Each row follows the same iteration as :func:`sparse_pursuit` and stops
    independently once its objective changes by less than ``tol``.
    """
    X = np.atleast_2d(np.asarray(features, dtype=float))
    D = np.asarray(D, dtype=float)
    step = 1.0 / max(np.linalg.norm(D, 2) ** 2, 1e-300)
    n, k = len(X), D.shape[1]
    Z = np.zeros((n, k))
    Y = Z.copy()
    t = np.ones(n)
    F = obj_rows(X, D, Z, lam)
    active = np.ones(n, bool)
    for _ in range(max_iter):
        a = np.flatnonzero(active)
        if a.size == 0:
            break
        Ya = Y[a]
        G = (Ya @ D.T - X[a]) @ D
        C = soft_threshold(Ya - step * G, step * lam)
        Fc = obj_rows(X[a], D, C, lam)
        ta = t[a]
        tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * ta * ta))
        accept = Fc <= F[a]
        Znew = np.where(accept[:, None], C, Z[a])
        Fnew = np.minimum(Fc, F[a])
        Y[a] = Znew + (ta / tn)[:, None] * (C - Znew) + ((ta - 1.0) / tn)[:, None] * (Znew - Z[a])
        change = F[a] - Fnew
        Z[a], F[a], t[a] = Znew, Fnew, tn
        done = accept & (change < tol)
        if done.any():
            # confirm with a plain proximal step from the current point
            d = a[done]
            G2 = (Z[d] @ D.T - X[d]) @ D
            Z2 = soft_threshold(Z[d] - step * G2, step * lam)
            F2 = obj_rows(X[d], D, Z2, lam)
            fin = F[d] - F2 < tol
            imp = fin & (F2 < F[d])
            Z[d[imp]], F[d[imp]] = Z2[imp], F2[imp]
            active[d[fin]] = False
    return Z


def obj_rows(X, D, Z, lam) -> np.ndarray:
    r = X - Z @ D.T
    return 0.5 * (r * r).sum(1) + lam * np.abs(Z).sum(1)


def dictionary_from_codebook(codebook: Codebook) -> np.ndarray:
    """Unit-normalized centroids as dictionary columns."""
    D = codebook.centroids.T.copy()
    n = np.linalg.norm(D, axis=0)
    return D / np.where(n > 0, n, 1.0)


def mean_pool(codes, weights, normalize: bool = False) -> PooledHistogram:
    """h = Σ_i z_i w_i; ``normalize`` rescales to sum 1 (for VQ codes)."""
    z = np.atleast_2d(np.asarray(codes, dtype=float))
    w = np.asarray(weights.weights if isinstance(weights, MassWeights) else weights, dtype=float)
    if len(w) != len(z):
        raise ValueError("row count and weight count differ")
    h = w @ z
    if normalize:
        s = h.sum()
        if s > 0:
            h = h / s
        return PooledHistogram(h, "mean-normalized")
    return PooledHistogram(h, "mean")


def js_divergence(p, q) -> float:
    """Jensen-Shannon divergence (natural log) of two nonnegative histograms."""
    p = np.asarray(getattr(p, "values", p), dtype=float)
    q = np.asarray(getattr(q, "values", q), dtype=float)
    if p.shape != q.shape:
        raise ValueError("histograms must have equal length")
    sp_, sq = p.sum(), q.sum()
    p = p / sp_ if sp_ > 0 else p
    q = q / sq if sq > 0 else q
    m = 0.5 * (p + q)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(p > 0, p * np.log(p / m), 0.0).sum()
        b = np.where(q > 0, q * np.log(q / m), 0.0).sum()
    return float(max(0.5 * (a + b), 0.0))


# --------------------------------------------------------- manifold ranking


def similarity_graph(histograms, k_nn: int = 10, sigma: float | None = None,
                     distances=None) -> sp.csr_matrix:
    """Gaussian weights on mutual k-nearest-neighbour pairs.

    Distances default to Euclidean between rows. ``sigma`` defaults to the
    median of the retained edge distances.
    """
    if distances is None:
        h = np.asarray(histograms, dtype=float)
        d = np.sqrt(_sqdist(h, h))
    else:
        d = np.asarray(distances, dtype=float)
    n = len(d)
    if n < 2:
        raise ValueError("need at least two models")
    k = min(k_nn, n - 1)
    dd = d.copy()
    np.fill_diagonal(dd, np.inf)
    order = np.argsort(dd, axis=1, kind="stable")[:, :k]
    knn = np.zeros((n, n), bool)
    knn[np.repeat(np.arange(n), k), order.ravel()] = True
    mutual = knn & knn.T
    if sigma is None:
        vals = d[mutual]
        sigma = float(np.median(vals)) if vals.size else 1.0
        sigma = sigma if sigma > 0 else 1.0
    w = np.where(mutual, np.exp(-d * d / (2.0 * sigma * sigma)), 0.0)
    return sp.csr_matrix(w)


def manifold_rank(W, query: int, alpha: float = 1.0) -> np.ndarray:
    """Solve (I + αL) f = y with L = D − W the unnormalized graph Laplacian."""
    W = sp.csr_matrix(W)
    n = W.shape[0]
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    L = sp.diags(np.asarray(W.sum(axis=1)).ravel()) - W
    A = (sp.identity(n, format="csc") + alpha * L).tocsc()
    y = np.zeros(n)
    y[query] = 1.0
    f = spsolve(A, y)
    r = A @ f - y
    if np.linalg.norm(r) >= 1e-10:
        # one step of iterative refinement
        f = f - spsolve(A, r)
    return f


def manifold_rank_all(W, alpha: float = 1.0) -> np.ndarray:
    """Score matrix S with S[q, j] the relevance of j for query q."""
    W = sp.csr_matrix(W)
    n = W.shape[0]
    L = sp.diags(np.asarray(W.sum(axis=1)).ravel()) - W
    A = (sp.identity(n) + alpha * L).toarray()
    # A is symmetric, so rows of A^-1 are the per-query score vectors
    return np.linalg.solve(A, np.eye(n))
