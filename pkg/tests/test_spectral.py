import numpy as np
import pytest
from scipy.linalg import eigh
from scipy.spatial.transform import Rotation

from shaperank import spectral
from shaperank.mesh import TriangleMesh, vertex_mass_weights
from shaperank.primitives import capsule, icosphere


def bumpy_sphere(sub=2, seed=0, amp=0.08):
    """Sphere with seeded radial noise: no symmetry, so eigenvalues are simple."""
    s = icosphere(sub)
    rng = np.random.default_rng(seed)
    r = 1.0 + amp * rng.standard_normal(s.n_vertices)
    return TriangleMesh(s.vertices * r[:, None], s.faces)


def dense_cotangent(mesh):
    """Independent O(F) dense assembly from interior angles."""
    v, n = mesh.vertices, mesh.n_vertices
    W = np.zeros((n, n))
    for f in mesh.faces:
        for k in range(3):
            o, i, j = f[k], f[(k + 1) % 3], f[(k + 2) % 3]
            a, b = v[i] - v[o], v[j] - v[o]
            ang = np.arccos(np.clip(a @ b / np.linalg.norm(a) / np.linalg.norm(b), -1, 1))
            W[i, j] += 0.5 / np.tan(ang)
            W[j, i] += 0.5 / np.tan(ang)
    return np.diag(W.sum(1)) - W


@pytest.fixture(scope="module")
def bumpy():
    m = bumpy_sphere()
    return m, spectral.mesh_basis(m, 20)


def test_equilateral_weights_equal():
    m = TriangleMesh([[0, 0, 0], [1, 0, 0], [0.5, np.sqrt(3) / 2, 0]], [[0, 1, 2]])
    w = spectral.cotangent_weights(m).toarray()
    off = w[~np.eye(3, dtype=bool)]
    assert np.allclose(off, off[0], atol=1e-15)
    assert off[0] == pytest.approx(0.5 / np.sqrt(3))


def test_constant_in_null_space():
    lap, _ = spectral.cotangent_laplacian(bumpy_sphere())
    assert np.abs(lap @ np.ones(lap.shape[0])).max() < 1e-9


def test_stiffness_matches_dense_oracle():
    m = capsule(1.0, 2.0, n_around=6, n_along=4, n_cap=3)
    assert m.n_vertices <= 60
    lap, _ = spectral.cotangent_laplacian(m)
    assert np.allclose(lap.toarray(), dense_cotangent(m), atol=1e-12)


def test_degenerate_triangle_clamped():
    m = TriangleMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0], [1, 1, 0]], [[0, 1, 3], [1, 2, 3], [0, 2, 1]])
    w = spectral.cotangent_weights(m).toarray()
    assert np.all(np.isfinite(w)) and np.abs(w).max() <= spectral.COT_CLAMP


def test_basis_invariants(bumpy):
    m, b = bumpy
    lam, phi, w = b.eigenvalues, b.eigenvectors, b.mass.weights
    assert lam[0] == pytest.approx(0.0, abs=1e-6 * lam[1])
    assert np.all(np.diff(lam) >= 0)
    gram = phi.T @ (phi * w[:, None])
    assert np.allclose(gram, np.eye(len(lam)), atol=1e-6)
    assert np.ptp(phi[:, 0]) < 1e-6 * np.abs(phi[:, 0]).mean()


def test_dense_eigen_oracle(bumpy):
    m, b = bumpy
    assert m.n_vertices <= 300
    lap, mass = spectral.cotangent_laplacian(m)
    vals, vecs = eigh(lap.toarray(), np.diag(mass.weights))
    k = b.size
    assert np.allclose(b.eigenvalues[1:], vals[1:k], rtol=1e-6)
    # simple eigenvalues: mass inner product of matching vectors is +-1
    w = mass.weights
    for i in range(1, k):
        if min(vals[i] - vals[i - 1], vals[i + 1] - vals[i]) < 1e-3 * vals[i]:
            continue
        c = abs(vecs[:, i] @ (w * b.eigenvectors[:, i])) / np.sqrt(vecs[:, i] @ (w * vecs[:, i]))
        assert np.sqrt(max(0.0, 1 - c * c)) < 1e-4


def test_sphere_spectrum():
    b = spectral.mesh_basis(icosphere(3), 15)
    lam = b.eigenvalues
    assert np.allclose(lam[1:4], 2.0, rtol=0.05)
    assert np.allclose(lam[4:9], 6.0, rtol=0.05)
    assert np.allclose(lam[9:16], 12.0, rtol=0.05)


def test_too_many_eigenpairs():
    m = icosphere(0)
    with pytest.raises(ValueError):
        spectral.mesh_basis(m, m.n_vertices)


def test_hks_heat_trace(bumpy):
    _, b = bumpy
    t = spectral.hks_times(b.eigenvalues[1], b.eigenvalues[-1], 16)
    h = spectral.hks(b, t)
    trace = b.mass.weights @ h.values
    assert np.allclose(trace, np.exp(-np.outer(t, b.eigenvalues)).sum(1), rtol=0, atol=1e-9)


def test_hks_large_time_limit(bumpy):
    _, b = bumpy
    h = spectral.hks(b, [1e4 / b.eigenvalues[1]]).values[:, 0]
    assert np.allclose(h, 1.0 / b.mass.total, rtol=1e-6)


def test_hks_default_grid(bumpy):
    _, b = bumpy
    h = spectral.hks(b)
    c = 4 * np.log(10)
    assert len(h.grid) == 64
    assert h.grid[0] == pytest.approx(c / b.eigenvalues[-1])
    assert h.grid[-1] == pytest.approx(c / b.eigenvalues[1])


@pytest.fixture(scope="module")
def sphere_basis():
    # 49 = complete multiplets l <= 6, so the truncated sums are rotationally symmetric
    return spectral.mesh_basis(icosphere(3), 48)


def test_sphere_hks_constant(sphere_basis):
    v = spectral.hks(sphere_basis).values
    assert np.all(np.ptp(v, axis=0) <= 0.02 * np.abs(v).mean(axis=0))


def test_wks_nonnegative_and_normalized(bumpy):
    _, b = bumpy
    w = spectral.wks(b, 40)
    assert np.all(w.values >= 0) and np.all(np.isfinite(w.values))
    loglam = np.log(b.eigenvalues[1:])
    assert w.grid[0] == pytest.approx(loglam[0]) and w.grid[-1] == pytest.approx(loglam[-1])


def test_signatures_rigid_and_permutation_invariant(bumpy):
    m, b = bumpy
    r = Rotation.from_euler("xyz", [0.3, -1.1, 2.0]).as_matrix()
    b2 = spectral.mesh_basis(m.transformed(r, [5, -2, 1]), 20)
    for f in (lambda x: spectral.hks(x, [0.1, 1.0]).values,
              lambda x: spectral.wks(x, 20).values,
              lambda x: spectral.sgws(x, 2).values):
        assert np.allclose(f(b), f(b2), atol=1e-9)
    perm = np.random.default_rng(3).permutation(m.n_vertices)
    inv = np.argsort(perm)
    pm = TriangleMesh(m.vertices[perm], inv[m.faces])
    b3 = spectral.mesh_basis(pm, 20)
    assert np.allclose(spectral.hks(b3, [0.5]).values, spectral.hks(b, [0.5]).values[perm],
                       atol=1e-9)


def test_sihks_scale_invariance():
    # the fixed tau window needs the heat decay to settle inside it at both scales,
    # which holds for shapes of benchmark size (lambda_1 ~ 1e-4)
    m = capsule(1.0, 3.0, n_around=24, n_along=16, n_cap=6).transformed(scale=100.0)
    b1 = spectral.mesh_basis(m, 60)
    b2 = spectral.mesh_basis(m.transformed(scale=2.0), 60)
    s1, s2 = spectral.sihks(b1).values, spectral.sihks(b2).values
    assert np.all(s1 >= 0) and np.all(np.isfinite(s1))
    rel = np.abs(s1 - s2) / np.maximum(np.abs(s1), 1e-12)
    assert rel.max() < 0.05


def test_sihks_translation_of_tau(bumpy):
    _, b = bumpy
    # a shifted start samples a shifted window; magnitudes of a pure shift match
    tau = spectral.SIHKS_TAU
    a = spectral.sihks(b, tau).values
    assert a.shape[1] == 6
    with pytest.raises(ValueError):
        spectral.sihks(b, np.array([1.0, 1.5, 3.0]))


def test_sgws_channels(bumpy):
    _, b = bumpy
    s = spectral.sgws(b, 2)
    assert s.values.shape == (b.mass.weights.size, 3)


def test_spline_kernel_continuity():
    eps = 1e-9
    for knot in (1.0, 2.0):
        lo, hi = spectral._spline_kernel(np.array([knot - eps, knot + eps]))
        assert lo == pytest.approx(hi, abs=1e-7)


def test_biharmonic_metric(bumpy):
    m, b = bumpy
    rng = np.random.default_rng(0)
    assert spectral.biharmonic_distance(b, 3, 3) == 0.0
    assert spectral.biharmonic_distance(b, 3, 7) == pytest.approx(
        spectral.biharmonic_distance(b, 7, 3))
    for x, y, z in rng.integers(0, m.n_vertices, (1000, 3)):
        dxy = spectral.biharmonic_distance(b, x, y)
        dyz = spectral.biharmonic_distance(b, y, z)
        dxz = spectral.biharmonic_distance(b, x, z)
        assert dxz <= dxy + dyz + 1e-12


def test_biharmonic_operator_against_quadrature(bumpy):
    """a_ij from the closed form equals direct quadrature of D^2 applied to psi_j."""
    m, b = bumpy
    k = 8
    a = spectral.biharmonic_operator_matrix(b, k)
    n = m.n_vertices
    D2 = np.array([[spectral.biharmonic_distance(b.truncated(k + 1), x, y) ** 2
                    for y in range(n)] for x in range(n)])
    w = b.mass.weights
    psi = b.eigenvectors[:, :k + 1]
    direct = psi.T @ (w[:, None] * (D2 @ (w[:, None] * psi)))
    assert np.allclose(a, direct, atol=1e-9 * np.abs(direct).max())


def test_rbihdm_structure():
    for m in (bumpy_sphere(2, 1), capsule(1.0, 3.0, n_around=16, n_along=12, n_cap=5)):
        b = spectral.mesh_basis(m, 60)
        a = spectral.biharmonic_operator_matrix(b, 60)
        assert abs(np.trace(a)) <= 1e-8 * np.linalg.norm(a)
        d = spectral.rbihdm(b, "scale_independent")
        assert d.mu0 > 0 and np.all(d.values < 0)
        assert len(d.values) == 30


def test_rbihdm_scale_modes():
    m = capsule(1.0, 3.0, n_around=16, n_along=12, n_cap=5)
    b1 = spectral.mesh_basis(m, 60)
    b2 = spectral.mesh_basis(m.transformed(scale=2.0), 60)
    a, c = spectral.rbihdm(b1), spectral.rbihdm(b2)
    assert np.allclose(a.values, c.values, rtol=0.01)
    sd1 = spectral.rbihdm(b1, "scale_dependent", 30, 60)
    sd2 = spectral.rbihdm(b2, "scale_dependent", 30, 60)
    assert np.all(np.diff(np.abs(sd1.values)) <= 1e-12)
    assert not np.allclose(sd1.values, sd2.values, rtol=0.5)
    with pytest.raises(ValueError):
        spectral.rbihdm(b1, "other")


def test_rbihdm_distance_toy():
    rng = np.random.default_rng(0)
    vals = rng.normal(size=(5, 4))
    ds = [spectral.RBiHDMDescriptor("scale_independent", v, 4, 8) for v in vals]
    stats = spectral.standardization(ds)
    mu, sd = vals.mean(0), vals.std(0)
    for i in range(5):
        assert spectral.rbihdm_distance(ds[i], ds[i], stats) == 0.0
        for j in range(5):
            hand = np.sqrt(sum(((vals[i, k] - vals[j, k]) / sd[k]) ** 2 for k in range(4)))
            assert spectral.rbihdm_distance(ds[i], ds[j], stats) == pytest.approx(hand)
    assert np.allclose(stats[0], mu)
    other = spectral.RBiHDMDescriptor("scale_dependent", vals[0], 4, 8)
    with pytest.raises(ValueError):
        spectral.rbihdm_distance(ds[0], other, stats)


def test_ispm_histogram_properties(bumpy):
    m, b = bumpy
    rng = np.random.default_rng(1)
    codes = rng.random((m.n_vertices, 5))
    w = b.mass.weights
    one = spectral.ispm_histogram(b, codes, 1)
    assert np.allclose(one, w @ codes / w.sum())
    bins = spectral.ispm_bins(b, 2)
    masses = [w[bins == r].sum() for r in range(2)]
    assert abs(masses[0] - masses[1]) <= w.max() + 1e-12
    h = spectral.ispm_histogram(b, codes, 2)
    flipped = spectral.ispm_histogram(b, codes, 2, fiedler=-b.eigenvectors[:, 1])
    assert np.array_equal(flipped, spectral.reverse_bins(h, 2))


def test_ispm_distance():
    rng = np.random.default_rng(2)
    h1, h2 = rng.random(6), rng.random(6)
    assert spectral.ispm_distance(h1, spectral.reverse_bins(h1, 3), 3) == 0.0
    assert spectral.ispm_distance(h1, h1, 3) == 0.0
    assert spectral.ispm_distance(h1, h2, 3) == pytest.approx(spectral.ispm_distance(h2, h1, 3))
    brute = min(np.abs(h1 - h2.reshape(3, 2)[p].ravel()).sum() for p in ([0, 1, 2], [2, 1, 0]))
    assert spectral.ispm_distance(h1, h2, 3) == pytest.approx(brute)
    with pytest.raises(ValueError):
        spectral.ispm_distance(h1, h2[:4], 3)


def test_basis_cache_roundtrip(tmp_path, bumpy):
    m, b = bumpy
    for fmt in ("npz", "csv"):
        c1 = spectral.cached_basis(m, 10, tmp_path, fmt)
        c2 = spectral.cached_basis(m, 10, tmp_path, fmt)
        assert np.allclose(c1.eigenvalues, c2.eigenvalues, rtol=1e-15)
        assert np.allclose(c1.eigenvectors, c2.eigenvectors, rtol=1e-15)
    assert len(list(tmp_path.iterdir())) == 2


def test_mass_is_vertex_lumping(bumpy):
    m, b = bumpy
    assert np.allclose(b.mass.weights, vertex_mass_weights(m).weights)
