"""Principal curvatures, curvature-index features, oriented surface sampling
and augmented point feature histograms (APFH)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import TriangleMesh
from .spectral import cotangent_weights

CI_FLOOR = -4.0


@dataclass(frozen=True)
class CurvatureField:
    k1: np.ndarray
    k2: np.ndarray
    flagged: np.ndarray  # vertices whose curvature was zeroed (boundary / non-manifold)


@dataclass(frozen=True)
class OrientedPointSet:
    positions: np.ndarray
    normals: np.ndarray
    face_ids: np.ndarray
    seed: int | None

    def __len__(self):
        return len(self.positions)


def _irregular_vertices(mesh: TriangleMesh) -> np.ndarray:
    e, counts = mesh.edge_face_counts
    bad = np.zeros(mesh.n_vertices, dtype=bool)
    bad[e[counts != 2].ravel()] = True
    used = np.zeros(mesh.n_vertices, dtype=bool)
    used[mesh.faces.ravel()] = True
    return bad | ~used


def mixed_voronoi_areas(mesh: TriangleMesh) -> np.ndarray:
    """Per-vertex mixed Voronoi area (Voronoi region, halved/quartered on obtuse faces)."""
    v, f = mesh.vertices, mesh.faces
    out = np.zeros(mesh.n_vertices)
    p = [v[f[:, k]] for k in range(3)]
    area = mesh.face_areas
    cots, obtuse = [], []
    for k in range(3):
        e1, e2 = p[(k + 1) % 3] - p[k], p[(k + 2) % 3] - p[k]
        dot = np.einsum("ij,ij->i", e1, e2)
        cots.append(dot / np.maximum(2.0 * area, 1e-300))
        obtuse.append(dot < 0)
    any_obtuse = obtuse[0] | obtuse[1] | obtuse[2]
    for k in range(3):
        i, j = (k + 1) % 3, (k + 2) % 3
        # edges k-i (opposite j) and k-j (opposite i)
        lki = ((p[i] - p[k]) ** 2).sum(1)
        lkj = ((p[j] - p[k]) ** 2).sum(1)
        vor = (lki * cots[j] + lkj * cots[i]) / 8.0
        a = np.where(any_obtuse, np.where(obtuse[k], area / 2.0, area / 4.0), vor)
        np.add.at(out, f[:, k], a)
    return out


def principal_curvatures(mesh: TriangleMesh) -> CurvatureField:
    """K1 >= K2 from the mean-curvature normal and the angle defect.

    H = |L x| / (2 A_v) signed by the vertex normal, K = (2 pi - sum angles) / A_v,
    K1,2 = H +- sqrt(max(H^2 - K, 0)), with A_v the mixed Voronoi vertex area.
    Boundary and non-manifold vertices get K1 = K2 = 0 and are flagged.
    """
    v, f = mesh.vertices, mesh.faces
    n = mesh.n_vertices
    w = cotangent_weights(mesh)
    area = mixed_voronoi_areas(mesh)
    safe = np.where(area > 0, area, 1.0)
    lx = np.asarray(w.sum(axis=1)).ravel()[:, None] * v - w @ v
    hn = lx / (2.0 * safe[:, None])
    h = np.linalg.norm(hn, axis=1) * np.sign(np.einsum("ij,ij->i", hn, mesh.vertex_normals))

    angle_sum = np.zeros(n)
    for k in range(3):
        o, i, j = f[:, k], f[:, (k + 1) % 3], f[:, (k + 2) % 3]
        e1, e2 = v[i] - v[o], v[j] - v[o]
        cosang = np.einsum("ij,ij->i", e1, e2) / np.maximum(
            np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1), 1e-300)
        np.add.at(angle_sum, o, np.arccos(np.clip(cosang, -1.0, 1.0)))
    kg = (2.0 * np.pi - angle_sum) / safe

    disc = np.sqrt(np.maximum(h * h - kg, 0.0))
    k1, k2 = h + disc, h - disc
    bad = _irregular_vertices(mesh) | (area <= 0)
    k1[bad] = 0.0
    k2[bad] = 0.0
    return CurvatureField(k1, k2, bad)


def curvature_index(k1: np.ndarray, k2: np.ndarray) -> np.ndarray:
    """CI = (2/pi) log sqrt((K1^2 + K2^2) / 2), floored at -4."""
    rms = np.sqrt(0.5 * (np.asarray(k1) ** 2 + np.asarray(k2) ** 2))
    with np.errstate(divide="ignore"):
        ci = (2.0 / np.pi) * np.log(rms)
    return np.where(np.isfinite(ci), np.maximum(ci, CI_FLOOR), CI_FLOOR)


def shape_index(k1: np.ndarray, k2: np.ndarray) -> np.ndarray:
    """SI = (2/pi) arctan((K1 + K2) / |K1 - K2|); sign(K1) at umbilics, 0 if flat."""
    k1, k2 = np.asarray(k1, float), np.asarray(k2, float)
    diff = np.abs(k1 - k2)
    with np.errstate(divide="ignore", invalid="ignore"):
        si = (2.0 / np.pi) * np.arctan((k1 + k2) / diff)
    umb = diff == 0
    return np.where(umb, np.sign(k1), si)


def curvature_index_features(mesh: TriangleMesh, curvature: CurvatureField) -> np.ndarray:
    """Per-vertex (CI, deltaCI, SI); deltaCI is the 1-ring population std of CI."""
    ci = curvature_index(curvature.k1, curvature.k2)
    si = shape_index(curvature.k1, curvature.k2)
    adj = mesh.adjacency.copy()
    adj.data[:] = 1.0
    deg = np.asarray(adj.sum(axis=1)).ravel()
    safe = np.where(deg > 0, deg, 1.0)
    mean = adj @ ci / safe
    mean_sq = adj @ (ci * ci) / safe
    dci = np.sqrt(np.maximum(mean_sq - mean * mean, 0.0))
    dci[deg == 0] = 0.0
    return np.column_stack([ci, dci, si])


# ------------------------------------------------------------ point sampling


def sample_oriented_points(mesh: TriangleMesh, n: int, seed: int | None = 0) -> OrientedPointSet:
    """Area-weighted random surface points carrying their face normals."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas
    fid = rng.choice(mesh.n_faces, size=n, p=areas / areas.sum())
    r1, r2 = rng.random(n), rng.random(n)
    s1 = np.sqrt(r1)
    bary = np.column_stack([1 - s1, s1 * (1 - r2), s1 * r2])
    tri = mesh.vertices[mesh.faces[fid]]
    pos = np.einsum("ij,ijk->ik", bary, tri)
    fn = mesh.face_normals[fid]
    nrm = fn / np.linalg.norm(fn, axis=1, keepdims=True)
    return OrientedPointSet(pos, nrm, fid, seed)


# ---------------------------------------------------------------------- PFH


def pair_features(pa, na, pb, nb) -> np.ndarray:
    """Surflet-pair features (f1, f2, f3, f4), vectorized over leading axes.

    u = n_a, v = (p_b - p_a) x u / |.|, w = u x v,
    f1 = atan2(w.n_b, u.n_a), f2 = v.n_b, f3 = u.(p_b - p_a)/d, f4 = d.
    When p_b - p_a is parallel to u, v is any unit vector orthogonal to u.
    """
    arrs = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (pa, na, pb, nb)))
    lead = arrs[0].shape[:-1]
    pa, na, pb, nb = (a.reshape(-1, 3) for a in arrs)
    diff = pb - pa
    d = np.linalg.norm(diff, axis=-1)
    u = na
    v = np.cross(diff, u)
    vn = np.linalg.norm(v, axis=-1)
    degenerate = vn <= 1e-12 * np.maximum(d, 1e-300)
    if np.any(degenerate):
        uu = u[degenerate]
        axis = np.eye(3)[np.argmin(np.abs(uu), axis=-1)]
        alt = np.cross(axis, uu)
        v = v.copy()
        vn = vn.copy()
        v[degenerate] = alt
        vn[degenerate] = np.linalg.norm(alt, axis=-1)
    v = v / vn[..., None]
    w = np.cross(u, v)
    f1 = np.arctan2(np.einsum("...i,...i", w, nb), np.einsum("...i,...i", u, na))
    f2 = np.einsum("...i,...i", v, nb)
    f3 = np.einsum("...i,...i", u, diff) / np.where(d > 0, d, 1.0)
    return np.stack([f1, f2, f3, d], axis=-1).reshape(lead + (4,))


def bin_index(features: np.ndarray, thresholds) -> np.ndarray:
    """h = sum_i 2^(i-1) s(t_i, f_i) with s = 1 iff f_i >= t_i."""
    s = (np.asarray(features) >= np.asarray(thresholds)).astype(np.int64)
    return s @ np.array([1, 2, 4, 8])


def knn_indices(points: np.ndarray, k: int, chunk: int = 512) -> np.ndarray:
    """Indices of each point and its k - 1 nearest others, nearest first.

    Exact linear scan below 10^4 points, scipy cKDTree (also exact) above.
    """
    n = len(points)
    if n >= 10_000:
        from scipy.spatial import cKDTree

        _, idx = cKDTree(points).query(points, k=k)
        return idx
    out = np.empty((n, k), dtype=np.int64)
    sq = (points * points).sum(1)
    for s in range(0, n, chunk):
        p = points[s:s + chunk]
        d2 = sq[s:s + chunk, None] + sq[None, :] - 2.0 * p @ points.T
        d2[np.arange(len(p)), np.arange(s, s + len(p))] = -np.inf
        part = np.argpartition(d2, k - 1, axis=1)[:, :k]
        rows = np.arange(len(p))[:, None]
        order = np.lexsort((part, d2[rows, part]), axis=1)
        out[s:s + chunk] = part[rows, order]
    return out


def _upper(c: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(4)
    return c[..., iu[0], iu[1]]


def apfh_neighbourhood(pos: np.ndarray, nrm: np.ndarray) -> np.ndarray:
    """Unnormalized APFH of one neighbourhood (first point is the centre)."""
    k = len(pos)
    a, b = np.triu_indices(k, 1)
    f = pair_features(pos[a], nrm[a], pos[b], nrm[b])
    return _apfh_from_pairs(f[None])[0]


def _apfh_from_pairs(f: np.ndarray) -> np.ndarray:
    """f: (N, P, 4) pair features -> (N, 30) raw [hist16, mean4, cov10]."""
    n, p, _ = f.shape
    thr = np.zeros((n, 1, 4))
    thr[:, 0, 3] = f[:, :, 3].mean(axis=1)
    h = bin_index(f, thr)
    hist = np.zeros((n, 16))
    np.add.at(hist, (np.repeat(np.arange(n), p), h.ravel()), 1.0)
    hist /= p
    mean = f.mean(axis=1)
    c = f - mean[:, None, :]
    cov = np.einsum("npi,npj->nij", c, c) / p
    return np.concatenate([hist, mean, _upper(cov)], axis=1)


def normalize_apfh(raw: np.ndarray) -> np.ndarray:
    """Signed square root followed by L2 normalization, row-wise."""
    x = np.sign(raw) * np.sqrt(np.abs(raw))
    nrm = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.where(nrm > 0, nrm, 1.0)


def apfh(points: OrientedPointSet, k: int = 30, chunk: int = 256) -> np.ndarray:
    """Per-point APFH (N, 30) over each point's k-point neighbourhood.

    Pairs are all i < j in the neighbourhood ordered by distance to the centre.
    """
    pos, nrm = points.positions, points.normals
    if k >= len(pos):
        raise ValueError("k must be smaller than the point count")
    idx = knn_indices(pos, k)
    a, b = np.triu_indices(k, 1)
    out = np.empty((len(pos), 30))
    for s in range(0, len(pos), chunk):
        nb = idx[s:s + chunk]
        f = pair_features(pos[nb[:, a]], nrm[nb[:, a]], pos[nb[:, b]], nrm[nb[:, b]])
        out[s:s + chunk] = _apfh_from_pairs(f)
    return normalize_apfh(out)
