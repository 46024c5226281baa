import numpy as np
import pytest

from shaperank import fusion


def _features(seed=0, n_classes=4, per=6, noises=(0.2, 0.6, 1.5)):
    """Three distance matrices of different quality on one labelling."""
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(n_classes), per)
    n = len(y)
    same = y[:, None] == y[None]
    out = []
    for noise in noises:
        d = np.where(same, 0.0, 1.0) + noise * rng.random((n, n))
        d = d + d.T
        np.fill_diagonal(d, 0)
        out.append(d)
    return out, y


def brute_class_first_tier(distance, y):
    """Per-class mean first-tier recall by explicit sorting."""
    n = len(y)
    ft = np.zeros(n)
    for q in range(n):
        others = [j for j in range(n) if j != q]
        others.sort(key=lambda j: (distance[q, j], str(j).zfill(6)))
        c = int(np.sum(y == y[q])) - 1
        ft[q] = sum(y[j] == y[q] for j in others[:c]) / c
    return np.array([ft[y == k].mean() for k in np.unique(y)])


def test_entropy_weights_formula():
    dists, y = _features()
    sims = [fusion.distance_to_similarity(d) for d in dists]
    fw = fusion.entropy_weights(sims, y, ["a", "b", "c"])
    E = []
    for d in dists:
        p = brute_class_first_tier(d, y)
        p = p / p.sum()
        nz = p[p > 0]
        E.append(-(nz * np.log2(nz)).sum() / np.log2(len(p)))
    E = np.array(E)
    assert np.allclose(fw.weights, (1 - E) / (3 - E.sum()))
    assert fw.weights.sum() == pytest.approx(1.0)
    assert fw.feature_ids == ("a", "b", "c") and fw.mode == "entropy"


def test_entropy_weights_uniform_fallback():
    dists, y = _features()
    perfect = np.where(y[:, None] == y[None], 0.0, 1.0) + 0.01 * np.arange(len(y))[None]
    sims = [fusion.distance_to_similarity(perfect)] * 2
    with pytest.warns(UserWarning, match="uniform"):
        fw = fusion.entropy_weights(sims, y)
    assert np.allclose(fw.weights, 0.5)


def test_entropy_weights_input_checks():
    dists, y = _features()
    with pytest.raises(ValueError):
        fusion.entropy_weights([dists[0]], y)
    with pytest.raises(ValueError):
        fusion.entropy_weights([dists[0], dists[1][:5, :5]], y)
    with pytest.raises(ValueError):
        fusion.entropy_weights(dists[:2], y[:3])


def test_normalization_and_conversion():
    d = np.array([[0, 2.0, 4.0], [2.0, 0, 6.0], [4.0, 6.0, 0]])
    s = fusion.distance_to_similarity(d)
    assert np.allclose(s, [[1, 1, 0.5], [1, 1, 0], [0.5, 0, 1]])
    n = fusion.normalize_similarity(-d)
    off = ~np.eye(3, dtype=bool)
    assert n[off].min() == 0 and n[off].max() == 1 and np.all(np.diag(n) == 1)
    z = fusion.normalize_similarity(-d, "zscore")
    assert z[off].mean() == pytest.approx(0.0)
    with pytest.raises(ValueError):
        fusion.normalize_similarity(d, "rank")
    back = fusion.similarity_to_distance(s)
    assert np.all(np.diag(back) == 0) and back.min() == 0


def test_combine_similarity_linear():
    rng = np.random.default_rng(1)
    a, b = rng.random((5, 5)), rng.random((5, 5))
    out = fusion.combine_similarity([a, b], [0.25, 0.75], normalize=None)
    assert np.allclose(out, 0.25 * a + 0.75 * b)
    with pytest.raises(ValueError):
        fusion.combine_similarity([a, b], [1.0])
    with pytest.raises(ValueError):
        fusion.combine_similarity([a, b[:4, :4]], [0.5, 0.5])


def test_combine_distances_normalized():
    dists, _ = _features()
    m = fusion.combine_distances(dists, [1.0, 0.0, 0.0])
    off = ~np.eye(len(m), dtype=bool)
    assert m[off].min() == 0 and m[off].max() == pytest.approx(1.0)
    assert np.all(np.diag(m) == 0)


def test_stratified_split():
    y = np.repeat(np.arange(3), 7)
    tr, va = fusion.stratified_split(y, 0.7, np.random.default_rng(0))
    assert len(set(tr) & set(va)) == 0 and len(tr) + len(va) == 21
    for c in range(3):
        assert np.sum(y[tr] == c) == 4 and np.sum(y[va] == c) == 3


def test_entropy_weights_split_deterministic():
    dists, y = _features(seed=2, noises=(1.0, 1.5, 2.5))
    sims = [fusion.distance_to_similarity(d) for d in dists]
    a = fusion.entropy_weights_split(sims, y, seed=3)
    b = fusion.entropy_weights_split(sims, y, seed=3)
    assert np.array_equal(a.weights, b.weights) and a.fitness == b.fitness
    assert 0.0 <= a.fitness <= 1.0 and a.seed == 3


def test_pso_elitism_and_determinism():
    for seed in range(5):
        dists, y = _features(seed=seed)
        best_single = max(fusion.mean_first_tier(d, y) for d in dists)
        fw = fusion.pso_weights(dists, y, seed=seed, feature_ids=["a", "b", "c"])
        assert fw.fitness >= best_single
        assert np.all((fw.weights >= 0) & (fw.weights <= 1))
        assert fw.fitness == pytest.approx(
            fusion.mean_first_tier(fusion.combine_distances(dists, fw.weights), y))
        assert np.all(np.diff(fw.trace) >= 0)
        again = fusion.pso_weights(dists, y, seed=seed, feature_ids=["a", "b", "c"])
        assert np.array_equal(fw.weights, again.weights)
    with pytest.raises(ValueError):
        fusion.pso_weights(dists[:1], y)


def test_weights_text_roundtrip():
    fw = fusion.FusionWeights(np.array([0.25, 0.75]), ("hks", "hapt"), "pso", 4, 0.8125)
    back = fusion.FusionWeights.from_text(fw.to_text())
    assert np.allclose(back.weights, fw.weights)
    assert (back.feature_ids, back.mode, back.seed, back.fitness) == (("hks", "hapt"), "pso", 4, 0.8125)
