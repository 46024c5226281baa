"""Edge-graph geodesics, geodesic global features, SMACOF canonical forms and
the ray-based extent feature."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import connected_components, dijkstra

from .mesh import MassWeights, MeshError, TriangleMesh


@dataclass(frozen=True)
class GeodesicMatrix:
    values: np.ndarray
    mesh_name: str = ""

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class CanonicalEmbedding:
    points: np.ndarray
    stress: float
    iterations: int
    stress_history: tuple = field(default=(), repr=False)


def geodesic_matrix(mesh: TriangleMesh) -> GeodesicMatrix:
    """All-pairs shortest paths on the edge graph (Euclidean edge lengths).

    This is the graph approximation of surface geodesics.
    """
    adj = mesh.adjacency
    ncomp, labels = connected_components(adj, directed=False)
    if ncomp > 1:
        sizes = sorted(np.bincount(labels).tolist(), reverse=True)
        raise MeshError(f"mesh is disconnected: component sizes {sizes}")
    d = dijkstra(adj, directed=False)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return GeodesicMatrix(d, mesh.name)


def cached_geodesic_matrix(mesh: TriangleMesh, cache_dir=None) -> GeodesicMatrix:
    if cache_dir is None:
        return geodesic_matrix(mesh)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    key = hashlib.sha256(mesh.content_hash().encode()).hexdigest()[:32]
    path = cache_dir / f"geodesic_{key}.npy"
    if path.exists():
        return GeodesicMatrix(np.load(path), mesh.name)
    g = geodesic_matrix(mesh)
    np.save(path, g.values)
    return g


def geodesic_svd_feature(G: GeodesicMatrix, k: int = 50) -> np.ndarray:
    """The k largest singular values of the geodesic matrix, descending.

    G is symmetric, so its singular values are the absolute eigenvalues.
    """
    g = G.values if isinstance(G, GeodesicMatrix) else np.asarray(G)
    if k > g.shape[0]:
        raise ValueError(f"k = {k} exceeds matrix size {g.shape[0]}")
    if np.allclose(g, g.T, rtol=0, atol=1e-12 * max(np.abs(g).max(), 1.0)):
        s = np.abs(np.linalg.eigvalsh(0.5 * (g + g.T)))
    else:
        s = np.linalg.svd(g, compute_uv=False)
    return np.sort(s)[::-1][:k]


def agd(G: GeodesicMatrix, mass: MassWeights) -> np.ndarray:
    """Mass-weighted average geodesic distance from every vertex."""
    w = mass.weights
    if len(w) != G.n:
        raise ValueError("mass and geodesic matrix sizes differ")
    return G.values @ w / w.sum()


# ----------------------------------------------------------------- SMACOF


def classical_mds(d: np.ndarray, dim: int = 3) -> tuple[np.ndarray, int]:
    """Torgerson embedding; also returns the number of positive eigenvalues used."""
    n = d.shape[0]
    j = np.eye(n) - 1.0 / n
    b = -0.5 * j @ (d**2) @ j
    vals, vecs = np.linalg.eigh(b)
    idx = np.argsort(vals)[::-1][:dim]
    vals, vecs = vals[idx], vecs[:, idx]
    pos = vals > 0
    x = vecs * np.sqrt(np.where(pos, vals, 0.0))
    return x, int(pos.sum())


def stress(x: np.ndarray, d: np.ndarray) -> float:
    """Raw stress sum_{i<j} (||x_i - x_j|| - d_ij)^2."""
    diff = x[:, None, :] - x[None, :, :]
    dx = np.sqrt((diff**2).sum(-1))
    iu = np.triu_indices(len(x), 1)
    return float(((dx[iu] - d[iu]) ** 2).sum())


def _pairwise(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * x @ x.T
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def smacof_embed(G, dim: int = 3, iters: int = 300, tol: float = 1e-6,
                 seed: int = 0) -> CanonicalEmbedding:
    """Stress majorization (Guttman transform) from a classical-MDS start.

    Stops when the relative stress decrease falls below ``tol`` or after
    ``iters`` iterations. The seed only fills coordinates the classical start
    cannot provide (fewer than ``dim`` positive eigenvalues).
    """
    d = G.values if isinstance(G, GeodesicMatrix) else np.asarray(G, dtype=float)
    if not np.all(np.isfinite(d)):
        raise ValueError("distance matrix must be finite")
    n = d.shape[0]
    x, npos = classical_mds(d, dim)
    if npos < dim:
        rng = np.random.default_rng(seed)
        scale = d.max() * 1e-3 if d.max() > 0 else 1.0
        x[:, npos:] = rng.normal(scale=scale, size=(n, dim - npos))
    x = x - x.mean(axis=0)
    iu = np.triu_indices(n, 1)
    dx = _pairwise(x)
    s = float(((dx[iu] - d[iu]) ** 2).sum())
    history = [s]
    it = 0
    for it in range(1, iters + 1):
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(dx > 0, d / dx, 0.0)
        b = -ratio
        np.fill_diagonal(b, 0.0)
        np.fill_diagonal(b, -b.sum(axis=1))
        x_new = b @ x / n
        dx_new = _pairwise(x_new)
        s_new = float(((dx_new[iu] - d[iu]) ** 2).sum())
        if s_new > s:
            # majorization guarantees descent; only rounding can trip this
            break
        x, dx = x_new, dx_new
        rel = (s - s_new) / s if s > 0 else 0.0
        s = s_new
        history.append(s)
        if rel < tol:
            break
    return CanonicalEmbedding(x, s, it, tuple(history))


# ------------------------------------------------------------------- rays


def sphere_directions(count: int) -> np.ndarray:
    """Near-uniform unit directions on a Fibonacci spiral."""
    i = np.arange(count) + 0.5
    z = 1.0 - 2.0 * i / count
    r = np.sqrt(1.0 - z * z)
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def ray_feature(geometry, directions: int = 64) -> np.ndarray:
    """Farthest extent along each of ``directions`` cones from the centroid.

    A cone has half-angle equal to the mean direction spacing sqrt(4 pi / D).
    The result is divided by its mean, so it is scale free. Empty cones give 0.
    """
    if isinstance(geometry, CanonicalEmbedding):
        pts = geometry.points
    elif isinstance(geometry, TriangleMesh):
        pts = geometry.vertices
    else:
        pts = np.asarray(geometry, dtype=float)
    if len(pts) == 0:
        raise ValueError("empty geometry")
    rel = pts - pts.mean(axis=0)
    r = np.linalg.norm(rel, axis=1)
    unit = np.divide(rel, r[:, None], out=np.zeros_like(rel), where=r[:, None] > 0)
    dirs = sphere_directions(directions)
    cos_half = np.cos(np.sqrt(4.0 * np.pi / directions))
    inside = unit @ dirs.T >= cos_half
    feat = np.where(inside, r[:, None], 0.0).max(axis=0)
    mean = feat.mean()
    return feat / mean if mean > 0 else feat


def ray_histogram(feature: np.ndarray, bins: int = 32, upper: float = 3.0) -> np.ndarray:
    """Rotation-insensitive pooling of a mean-normalized ray feature."""
    clipped = np.minimum(np.asarray(feature, float), upper * (1 - 1e-12))
    h, _ = np.histogram(clipped, bins=bins, range=(0.0, upper))
    return h / max(h.sum(), 1)
