import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from shaperank import geodesic
from shaperank.mesh import MeshError, TriangleMesh, decimate, vertex_mass_weights
from shaperank.primitives import capsule, icosphere, unit_cube


def floyd_warshall(mesh):
    """Independent all-pairs oracle from the raw face list."""
    n = mesh.n_vertices
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0.0)
    for f in mesh.faces:
        for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
            w = float(np.linalg.norm(mesh.vertices[a] - mesh.vertices[b]))
            d[a, b] = d[b, a] = min(d[a, b], w)
    for k in range(n):
        d = np.minimum(d, d[:, k:k + 1] + d[k:k + 1, :])
    return d


@pytest.mark.parametrize("mesh", [unit_cube(), icosphere(1),
                                  decimate(icosphere(2), 90, seed=3)],
                         ids=["cube", "ico1", "decimated"])
def test_dijkstra_matches_floyd_warshall(mesh):
    assert mesh.n_vertices <= 100
    g = geodesic.geodesic_matrix(mesh).values
    assert np.allclose(g, floyd_warshall(mesh), rtol=0, atol=1e-12)


def test_geodesic_matrix_properties():
    g = geodesic.geodesic_matrix(icosphere(2)).values
    assert np.array_equal(g, g.T) and np.all(np.diag(g) == 0)
    # graph paths overestimate the great-circle distance, but not by much
    assert np.pi <= g.max() < 1.2 * np.pi


def test_disconnected_mesh_rejected():
    c = unit_cube()
    two = TriangleMesh(np.vstack([c.vertices, c.vertices + 5]), np.vstack([c.faces, c.faces + 8]))
    with pytest.raises(MeshError, match="disconnected"):
        geodesic.geodesic_matrix(two)


def test_geodesic_cache(tmp_path):
    m = icosphere(1)
    a = geodesic.cached_geodesic_matrix(m, tmp_path)
    assert len(list(tmp_path.glob("geodesic_*.npy"))) == 1
    b = geodesic.cached_geodesic_matrix(m, tmp_path)
    assert np.array_equal(a.values, b.values)


def test_svd_feature_matches_dense_svd():
    g = geodesic.geodesic_matrix(decimate(capsule(1.0, 3.0), 200, seed=1))
    s = geodesic.geodesic_svd_feature(g, 50)
    dense = np.linalg.svd(g.values, compute_uv=False)[:50]
    assert np.allclose(s, dense, rtol=1e-8, atol=0)
    assert np.all(np.diff(s) <= 0)
    with pytest.raises(ValueError):
        geodesic.geodesic_svd_feature(g, g.n + 1)


def test_svd_feature_scales_linearly():
    m = decimate(icosphere(3), 150, seed=0)
    a = geodesic.geodesic_svd_feature(geodesic.geodesic_matrix(m), 10)
    b = geodesic.geodesic_svd_feature(geodesic.geodesic_matrix(m.transformed(scale=3.0)), 10)
    assert np.allclose(b, 3.0 * a, rtol=1e-10)


def test_agd_uniform_on_symmetric_solid():
    m = icosphere(2)
    a = geodesic.agd(geodesic.geodesic_matrix(m), vertex_mass_weights(m))
    assert np.ptp(a) < 0.05 * a.mean()


def test_classical_mds_recovers_euclidean_points():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(40, 3))
    d = np.linalg.norm(x[:, None] - x[None], axis=-1)
    y, npos = geodesic.classical_mds(d, 3)
    assert npos == 3
    assert np.allclose(np.linalg.norm(y[:, None] - y[None], axis=-1), d, atol=1e-8)


def test_smacof_stress_monotone_and_below_classical():
    g = geodesic.geodesic_matrix(decimate(capsule(1.0, 3.0), 150, seed=2)).values
    emb = geodesic.smacof_embed(g, iters=200, tol=0.0)
    h = np.array(emb.stress_history)
    assert np.all(np.diff(h) <= 1e-9 * h[0])
    x0, _ = geodesic.classical_mds(g, 3)
    assert emb.stress <= geodesic.stress(x0 - x0.mean(0), g)
    assert emb.stress == pytest.approx(geodesic.stress(emb.points, g), rel=1e-9)


def test_smacof_exact_on_euclidean_distances():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(30, 3))
    d = np.linalg.norm(x[:, None] - x[None], axis=-1)
    emb = geodesic.smacof_embed(d)
    assert emb.stress < 1e-12 * (d**2).sum()


def test_smacof_rejects_nonfinite():
    d = np.ones((3, 3))
    d[0, 1] = np.inf
    with pytest.raises(ValueError):
        geodesic.smacof_embed(d)


def test_sphere_directions_unit_and_balanced():
    dirs = geodesic.sphere_directions(256)
    assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0)
    assert np.linalg.norm(dirs.mean(axis=0)) < 0.01


def test_ray_feature_sphere_and_scale():
    s = icosphere(3)
    f = geodesic.ray_feature(s, 64)
    assert f.mean() == pytest.approx(1.0)
    assert np.allclose(f, 1.0, atol=0.01)
    c = capsule(1.0, 3.0)
    assert np.allclose(geodesic.ray_feature(c.transformed(scale=7.0), 64),
                       geodesic.ray_feature(c, 64), atol=1e-12)


def test_ray_histogram_nearly_rotation_invariant():
    c = capsule(1.0, 3.0)
    r = Rotation.from_euler("xyz", [0.4, 1.1, -0.7]).as_matrix()
    h0 = geodesic.ray_histogram(geodesic.ray_feature(c, 256))
    h1 = geodesic.ray_histogram(geodesic.ray_feature(c.transformed(r), 256))
    assert h0.sum() == pytest.approx(1.0) and h1.sum() == pytest.approx(1.0)
    assert 0.5 * np.abs(h0 - h1).sum() < 0.15
