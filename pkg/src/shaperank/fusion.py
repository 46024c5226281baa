"""Entropy-weighted similarity fusion and particle-swarm search for
distance-combination weights."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .evaluation import first_tier_scores


@dataclass(frozen=True)
class FusionWeights:
    weights: np.ndarray
    feature_ids: tuple
    mode: str
    seed: int | None = None
    fitness: float | None = None
    trace: tuple = field(default=(), repr=False)

    def to_text(self) -> str:
        lines = [f"# mode={self.mode} seed={self.seed} fitness="
                 + ("" if self.fitness is None else "%.9g" % self.fitness)]
        lines += [f"{fid}={w:.9g}" for fid, w in zip(self.feature_ids, self.weights)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "FusionWeights":
        meta, ids, ws = {}, [], []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    k, _, v = tok.partition("=")
                    meta[k] = v
                continue
            k, _, v = line.partition("=")
            ids.append(k)
            ws.append(float(v))
        seed = meta.get("seed")
        fit = meta.get("fitness")
        return cls(np.array(ws), tuple(ids), meta.get("mode", ""),
                   None if seed in (None, "None") else int(seed),
                   float(fit) if fit else None)


def _offdiag_minmax(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    mask = ~np.eye(len(m), dtype=bool)
    lo, hi = m[mask].min(), m[mask].max()
    if hi <= lo:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)


def normalize_similarity(s, how: str = "minmax") -> np.ndarray:
    """Min-max (or z-score) over off-diagonal entries; diagonal set to the maximum."""
    s = np.asarray(s, dtype=float)
    if how == "minmax":
        out = _offdiag_minmax(s)
        np.fill_diagonal(out, 1.0)
        return out
    if how == "zscore":
        mask = ~np.eye(len(s), dtype=bool)
        sd = s[mask].std()
        out = (s - s[mask].mean()) / (sd if sd > 0 else 1.0)
        np.fill_diagonal(out, out[mask].max() if mask.any() else 0.0)
        return out
    raise ValueError(f"unknown normalization {how!r}")


def distance_to_similarity(d) -> np.ndarray:
    """1 − minmax(D) over off-diagonal entries."""
    out = 1.0 - _offdiag_minmax(d)
    np.fill_diagonal(out, 1.0)
    return out


def similarity_to_distance(s) -> np.ndarray:
    out = -np.asarray(s, dtype=float)
    out = out - out.min()
    np.fill_diagonal(out, 0.0)
    return out


def mean_first_tier(distance, labels) -> float:
    scores = first_tier_scores(distance, labels)
    if np.all(np.isnan(scores)):
        return float("nan")
    return float(np.nanmean(scores))


def class_precision_distribution(similarity, labels) -> np.ndarray:
    """Per-class mean first-tier precision of one feature, normalized to sum 1."""
    labels = np.asarray([str(x) for x in labels])
    ft = first_tier_scores(similarity_to_distance(similarity), labels)
    names = sorted(set(labels))
    p = np.array([np.nanmean(ft[labels == c]) if np.any(~np.isnan(ft[labels == c])) else 0.0
                  for c in names])
    tot = p.sum()
    return p / tot if tot > 0 else np.full(len(names), 1.0 / len(names))


def entropy_weights(similarities, labels, feature_ids=None, raw: bool = False) -> FusionWeights:
    """w_i = (1 − E_i) / (F − Σ E) with E_i the entropy of feature i's
    per-class precision distribution.

    Entropy is divided by log2(number of classes) unless ``raw``.
    """
    sims = [np.asarray(s, dtype=float) for s in similarities]
    F = len(sims)
    if F < 2:
        raise ValueError("need at least two features")
    if any(s.shape != sims[0].shape or s.shape[0] != s.shape[1] for s in sims):
        raise ValueError("similarity matrices must be square and of equal size")
    if len(labels) != sims[0].shape[0]:
        raise ValueError("labels must cover every row")
    ids = tuple(feature_ids) if feature_ids else tuple(f"f{i}" for i in range(F))
    E = np.empty(F)
    for i, s in enumerate(sims):
        p = class_precision_distribution(s, labels)
        nz = p[p > 0]
        E[i] = -(nz * np.log2(nz)).sum()
        if not raw and len(p) > 1:
            E[i] /= np.log2(len(p))
    denom = F - E.sum()
    if abs(denom) < 1e-12:
        warnings.warn("all feature entropies are maximal; using uniform weights", stacklevel=2)
        w = np.full(F, 1.0 / F)
    else:
        w = (1.0 - E) / denom
    return FusionWeights(w, ids, "entropy-raw" if raw else "entropy")


def combine_similarity(matrices, weights, normalize: str | None = "minmax") -> np.ndarray:
    """S = Σ w_i S_i over normalized inputs."""
    mats = [np.asarray(m, dtype=float) for m in matrices]
    w = np.asarray(getattr(weights, "weights", weights), dtype=float)
    if any(m.shape != mats[0].shape for m in mats):
        raise ValueError("matrices must have equal shapes")
    if len(w) != len(mats):
        raise ValueError("one weight per matrix is required")
    out = np.zeros_like(mats[0])
    for wi, m in zip(w, mats):
        out += wi * (normalize_similarity(m, normalize) if normalize else m)
    return out


def stratified_split(labels, frac: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Per-class split keeping at least two models on each side where possible."""
    labels = np.asarray([str(x) for x in labels])
    train, val = [], []
    for c in sorted(set(labels)):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n = len(idx)
        k = int(np.floor(frac * n))
        if n >= 4:
            k = min(max(k, 2), n - 2)
        train += idx[:k].tolist()
        val += idx[k:].tolist()
    return np.sort(train), np.sort(val)


def entropy_weights_split(similarities, labels, feature_ids=None, n_splits: int = 5,
                          frac: float = 0.7, seed: int = 0, raw: bool = False) -> FusionWeights:
    """Fit entropy weights on random stratified splits; keep the split whose
    validation first tier is best."""
    sims = [np.asarray(s, dtype=float) for s in similarities]
    labels = np.asarray([str(x) for x in labels])
    rng = np.random.default_rng(seed)
    best, best_fit = None, -np.inf
    for _ in range(n_splits):
        tr, va = stratified_split(labels, frac, rng)
        fw = entropy_weights([s[np.ix_(tr, tr)] for s in sims], labels[tr], feature_ids, raw)
        fused = combine_similarity([s[np.ix_(va, va)] for s in sims], fw.weights)
        fit = mean_first_tier(similarity_to_distance(fused), labels[va])
        if best is None or fit > best_fit:
            best, best_fit = fw, fit
    if not np.isfinite(best_fit):
        # classes of 3 or fewer leave singletons on the validation side
        warnings.warn("validation splits have no class with two models; "
                      "fitness measured on the full training set")
        fused = combine_similarity(sims, best.weights)
        best_fit = mean_first_tier(similarity_to_distance(fused), labels)
    return FusionWeights(best.weights, best.feature_ids, best.mode, seed, best_fit)


def combine_distances(matrices, weights) -> np.ndarray:
    """M = Σ w_i D_i over off-diagonal min-max normalized distances."""
    mats = [_offdiag_minmax(m) for m in matrices]
    w = np.asarray(getattr(weights, "weights", weights), dtype=float)
    out = sum(wi * m for wi, m in zip(w, mats))
    np.fill_diagonal(out, 0.0)
    return out


PSO_INERTIA = 0.7
PSO_C1 = 1.5
PSO_C2 = 1.5


def pso_weights(distances, labels, n_particles: int = 10, n_iters: int = 10, seed: int = 0,
                feature_ids=None) -> FusionWeights:
    """Particle swarm search of w in [0, 1]^F maximizing mean first tier of
    the combined distance.

    The swarm starts with every one-hot vector and the uniform vector, so the
    result is never worse than the best single input.
    """
    mats = [_offdiag_minmax(m) for m in distances]
    F = len(mats)
    if F < 2:
        raise ValueError("need at least two distance matrices")
    labels = np.asarray([str(x) for x in labels])
    ids = tuple(feature_ids) if feature_ids else tuple(f"f{i}" for i in range(F))
    rng = np.random.default_rng(seed)
    n = max(n_particles, F + 1)
    seeds = np.vstack([np.eye(F), np.full((1, F), 1.0 / F)])
    pos = np.vstack([seeds, rng.random((n - len(seeds), F))])
    vel = rng.uniform(-0.5, 0.5, size=(n, F))

    def fitness(w):
        # first tier saturates on small train sets; the margin breaks ties
        m = sum(wi * mi for wi, mi in zip(w, mats))
        return (mean_first_tier(m, labels), separation_margin(m, labels))

    def best_of(fits):
        return max(range(len(fits)), key=lambda i: fits[i])

    pfit = [fitness(p) for p in pos]
    pbest = pos.copy()
    g = best_of(pfit)
    gbest, gfit = pbest[g].copy(), pfit[g]
    trace = [gfit[0]]
    for _ in range(n_iters):
        r1, r2 = rng.random((n, F)), rng.random((n, F))
        vel = PSO_INERTIA * vel + PSO_C1 * r1 * (pbest - pos) + PSO_C2 * r2 * (gbest - pos)
        pos = np.clip(pos + vel, 0.0, 1.0)
        for i, p in enumerate(pos):
            f = fitness(p)
            if f > pfit[i]:
                pbest[i], pfit[i] = p, f
        g = best_of(pfit)
        if pfit[g] > gfit:
            gbest, gfit = pbest[g].copy(), pfit[g]
        trace.append(gfit[0])
    return FusionWeights(gbest, ids, "pso", seed, gfit[0], tuple(trace))


def separation_margin(distance, labels) -> float:
    """Mean over queries of (nearest other-class distance - farthest
    same-class distance), in units of the mean off-diagonal distance."""
    d = np.asarray(distance, dtype=float)
    labels = np.asarray([str(x) for x in labels])
    n = len(labels)
    off = ~np.eye(n, dtype=bool)
    scale = d[off].mean() if n > 1 else 0.0
    if not scale > 0:
        return 0.0
    same = (labels[:, None] == labels[None]) & off
    other = labels[:, None] != labels[None]
    ok = same.any(1) & other.any(1)
    if not ok.any():
        return 0.0
    far = np.where(same, d, -np.inf).max(1)
    near = np.where(other, d, np.inf).min(1)
    return float(np.mean((near - far)[ok]) / scale)
