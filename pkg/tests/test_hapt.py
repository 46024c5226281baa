import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from shaperank import hapt
from shaperank.mesh import enclosed_volume, surface_area
from shaperank.primitives import capsule, icosphere, unit_cube


@pytest.fixture(scope="module")
def sphere_grid():
    return hapt.mapt_grid(icosphere(4), 0.05, [0.5, 1.0])


def test_interior_mask_volume():
    for m, s in ((icosphere(3), 0.04), (unit_cube(), 0.05), (capsule(1.0, 3.0), 0.08)):
        g = hapt.mapt_grid(m, s, [2 * s])
        assert g.interior.sum() * s**3 == pytest.approx(enclosed_volume(m), rel=0.03)


def test_sphere_center_collects_whole_area(sphere_grid):
    g = sphere_grid
    v = g.values[1].ravel()
    dist = np.linalg.norm(g.centers(), axis=1)
    # every inward offset by R = radius lands at the centre, so each voxel whose
    # sigma = R/2 ball holds the centre scores alpha * area = 1, all others 0
    full = surface_area(icosphere(4)) / (4 * np.pi)
    assert np.allclose(v[dist < 0.5 - 2 * g.spacing], full, rtol=0.02)
    assert np.all(v[dist > 0.5 + 2 * g.spacing] < 1e-9)
    # at R = radius/2 the offsets spread over a shell, so no ball gathers the full area
    assert g.values[0].max() < 0.5


def test_samples_cover_area():
    m = capsule(1.0, 3.0)
    pts, nrm, area = hapt.stratified_surface_samples(m, 0.1, seed=0)
    assert area.sum() == pytest.approx(surface_area(m), rel=1e-12)
    assert np.allclose(np.linalg.norm(nrm, axis=1), 1.0)
    assert len(pts) >= surface_area(m) / 0.05**2 * 0.9


def test_descriptor_counts(sphere_grid):
    d = hapt.hapt_descriptor(sphere_grid, bins=6)
    assert d.values.shape == (12,)
    n_in = sphere_grid.interior.sum()
    assert np.allclose(d.values.reshape(2, 6).sum(axis=1), n_in)
    dn = hapt.hapt_descriptor(sphere_grid, bins=6, normalize=True)
    assert np.allclose(dn.values.reshape(2, 6).sum(axis=1), 1.0)
    assert np.allclose(d.edges, np.linspace(0, 1, 7))
    with pytest.raises(ValueError):
        hapt.hapt_descriptor(sphere_grid, bins=1)


def test_descriptor_nearly_rotation_invariant():
    m = capsule(1.0, 3.0)
    s, radii = 0.1, [0.2, 0.5, 0.9]
    r = Rotation.from_euler("xyz", [0.5, 0.9, -0.3]).as_matrix()
    a = hapt.hapt_descriptor(hapt.mapt_grid(m, s, radii), normalize=True)
    b = hapt.hapt_descriptor(hapt.mapt_grid(m.transformed(r), s, radii), normalize=True)
    other = hapt.hapt_descriptor(hapt.mapt_grid(icosphere(3, 1.6), s, radii), normalize=True)
    same = hapt.jeffrey_divergence(a, b)
    diff = hapt.jeffrey_divergence(a, other)
    assert same < 0.2 * diff


def test_mapt_argument_checks():
    m = icosphere(2)
    with pytest.raises(ValueError):
        hapt.mapt_grid(m, 0.0, [0.1])
    with pytest.raises(ValueError):
        hapt.mapt_grid(m, 0.1, [0.1], c=1.0)
    with pytest.raises(ValueError):
        hapt.mapt_grid(m, 0.1, [0.3, 0.2])
    with pytest.raises(hapt.GridTooLarge):
        hapt.mapt_grid(m, 0.001, [0.01])


def test_default_parameters():
    s, radii = hapt.default_hapt_parameters(64.0)
    assert s == 1.0
    assert np.allclose(radii, [2, 4, 6, 8, 10, 12, 14, 16])


def test_jeffrey_divergence():
    assert hapt.jeffrey_divergence([1.0, 0.0], [0.0, 1.0]) == pytest.approx(2 * np.log(2))
    h = np.array([0.2, 0.5, 0.3])
    g = np.array([0.4, 0.4, 0.2])
    assert hapt.jeffrey_divergence(h, h) == 0.0
    expected = sum(a * np.log(2 * a / (a + b)) + b * np.log(2 * b / (a + b)) for a, b in zip(h, g))
    assert hapt.jeffrey_divergence(h, g) == pytest.approx(expected)
    assert hapt.jeffrey_divergence(h, g) == pytest.approx(hapt.jeffrey_divergence(g, h))
    assert hapt.jeffrey_divergence(h, g) > 0
    with pytest.raises(ValueError):
        hapt.jeffrey_divergence([1.0], [1.0, 0.0])


def _classes(seed=0, n_classes=4, per=12, dim=20):
    rng = np.random.default_rng(seed)
    centres = rng.normal(scale=3.0, size=(n_classes, dim))
    x = np.vstack([c + rng.normal(size=(per, dim)) for c in centres])
    return x, np.repeat(np.arange(n_classes), per)


def test_lda_beats_random_projections():
    x, y = _classes()
    w = hapt.lda_directions(x, y)
    assert w.shape == (20, 3)
    best = hapt.fisher_criterion(x @ w, y)
    rng = np.random.default_rng(1)
    for _ in range(50):
        q, _ = np.linalg.qr(rng.normal(size=(20, 3)))
        assert hapt.fisher_criterion(x @ q, y) <= best + 1e-9


def test_pca_lda_mapping():
    x, y = _classes(seed=2)
    m = hapt.train_pca_lda(x, y, pca_dims=8)
    assert (m.input_dim, m.output_dim, m.n_classes) == (20, 3, 4)
    z = hapt.apply_mapping(m, x)
    assert np.allclose(z, (x - m.mean) @ m.matrix)
    # nearest class mean in the mapped space recovers the labels
    means = np.array([z[y == c].mean(axis=0) for c in range(4)])
    pred = np.argmin(((z[:, None] - means[None]) ** 2).sum(-1), axis=1)
    assert np.mean(pred == y) == 1.0
    again = hapt.train_pca_lda(x, y, pca_dims=8)
    assert np.array_equal(again.pca, m.pca)
    with pytest.raises(ValueError):
        hapt.apply_mapping(m, x[:, :5])


def test_pca_lda_input_checks():
    x, y = _classes()
    with pytest.raises(ValueError):
        hapt.train_pca_lda(x, np.zeros(len(x)), 5)
    with pytest.raises(ValueError):
        hapt.train_pca_lda(x[:5], [0, 0, 1, 1, 2], 2)
    with pytest.raises(ValueError):
        hapt.train_pca_lda(x, y, 100)
