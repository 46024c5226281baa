"""Ranked retrieval lists and retrieval measures: NN, first and second tier,
E-measure, DCG, precision-recall, confusion matrices and the pose, subset and
exclusion analyses."""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

E_HORIZON = 32
RECALL_GRID = np.round(np.arange(1, 21) * 0.05, 10)


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class DistanceMatrix:
    values: np.ndarray
    ids: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise EvaluationError(f"distance matrix must be square, got shape {v.shape}")
        if len(self.ids) != v.shape[0]:
            raise EvaluationError("id count does not match matrix size")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))

    @property
    def n(self) -> int:
        return len(self.ids)

    def subset(self, idx) -> "DistanceMatrix":
        idx = np.asarray(idx)
        return DistanceMatrix(self.values[np.ix_(idx, idx)], tuple(self.ids[i] for i in idx))

    def reordered(self, ids) -> "DistanceMatrix":
        pos = {m: i for i, m in enumerate(self.ids)}
        missing = [m for m in ids if m not in pos]
        if missing:
            raise EvaluationError(f"ids missing from matrix: {missing}")
        return self.subset([pos[m] for m in ids])


def write_distance_matrix(dm: DistanceMatrix, path) -> None:
    """CSV with model ids on the first row and column; 9 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model_id", *dm.ids])
        for mid, row in zip(dm.ids, dm.values):
            w.writerow([mid, *("%.9g" % x for x in row)])


def read_distance_matrix(path) -> DistanceMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise EvaluationError(f"{path}: empty distance matrix file")
    ids = rows[0][1:]
    body = rows[1:]
    if [r[0] for r in body] != ids:
        raise EvaluationError(f"{path}: row ids do not match column ids")
    return DistanceMatrix(np.array([[float(x) for x in r[1:]] for r in body]), tuple(ids))


@dataclass(frozen=True)
class GroundTruth:
    ids: tuple
    classes: tuple
    poses: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        object.__setattr__(self, "classes", tuple(str(c) for c in self.classes))
        if len(self.classes) != len(self.ids):
            raise EvaluationError("every model needs exactly one class label")
        if self.poses is not None:
            object.__setattr__(self, "poses", tuple(str(p) for p in self.poses))
            if len(self.poses) != len(self.ids):
                raise EvaluationError("every model needs exactly one pose label")
        if len(set(self.ids)) != len(self.ids):
            raise EvaluationError("duplicate model ids")

    @property
    def class_names(self) -> list:
        return sorted(set(self.classes))

    def subset(self, idx) -> "GroundTruth":
        idx = list(idx)
        poses = None if self.poses is None else tuple(self.poses[i] for i in idx)
        return GroundTruth(tuple(self.ids[i] for i in idx),
                           tuple(self.classes[i] for i in idx), poses)

    def reordered(self, ids) -> "GroundTruth":
        pos = {m: i for i, m in enumerate(self.ids)}
        missing = [m for m in ids if m not in pos]
        if missing:
            raise EvaluationError(f"ids missing from ground truth: {missing}")
        return self.subset([pos[m] for m in ids])


@dataclass(frozen=True)
class RankedLists:
    """order[q] lists the indices of all models except q, best match first."""

    order: np.ndarray
    ids: tuple
    source: str = ""


@dataclass
class EvaluationReport:
    nn: float
    first_tier: float
    second_tier: float
    e_measure: float
    dcg: float
    recall: np.ndarray
    precision: np.ndarray
    classes: list
    confusion: np.ndarray
    same_pose_error: float | None = None
    n_queries: int = 0
    extra: dict = field(default_factory=dict)

    SCALARS = ("nn", "first_tier", "second_tier", "e_measure", "dcg")

    def scalars(self) -> dict:
        return {k: float(getattr(self, k)) for k in self.SCALARS}

    def to_dict(self) -> dict:
        d = self.scalars()
        d["same_pose_error"] = self.same_pose_error
        d["n_queries"] = self.n_queries
        d["pr_curve"] = {"recall": [round(float(r), 10) for r in self.recall],
                         "precision": [float(p) for p in self.precision]}
        d["classes"] = list(self.classes)
        d["confusion"] = self.confusion.tolist()
        d.update(self.extra)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["measure", "value"])
        for k, v in self.scalars().items():
            w.writerow([k, "%.9g" % v])
        w.writerow(["same_pose_error",
                    "" if self.same_pose_error is None else "%.9g" % self.same_pose_error])
        return buf.getvalue()

    def pr_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["recall", "precision"])
        for r, p in zip(self.recall, self.precision):
            w.writerow(["%.2f" % r, "%.9g" % p])
        return buf.getvalue()

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", *self.classes])
        for c, row in zip(self.classes, self.confusion):
            w.writerow([c, *("%.9g" % x for x in row)])
        return buf.getvalue()

    def write(self, stem) -> list:
        stem = Path(stem)
        out = []
        for suffix, text in ((".json", self.to_json() + "\n"), (".csv", self.to_csv()),
                             ("_pr.csv", self.pr_csv()), ("_confusion.csv", self.confusion_csv())):
            p = stem.with_name(stem.name + suffix)
            p.write_text(text)
            out.append(p)
        return out


def _as_matrix(distances, ids=None) -> DistanceMatrix:
    if isinstance(distances, DistanceMatrix):
        return distances
    d = np.asarray(distances, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise EvaluationError(f"distance matrix must be square, got shape {d.shape}")
    if ids is None:
        ids = tuple("%06d" % i for i in range(len(d)))
    return DistanceMatrix(d, ids)


def rank_all(distances, ids=None) -> RankedLists:
    """Ascending distance per query, ties broken by the lexicographically smaller id."""
    dm = _as_matrix(distances, ids)
    n = dm.n
    id_rank = np.empty(n, dtype=np.int64)
    id_rank[np.argsort(np.array(dm.ids, dtype=object), kind="stable")] = np.arange(n)
    order = np.empty((n, n - 1), dtype=np.int64)
    for q in range(n):
        keys = np.lexsort((id_rank, dm.values[q]))
        order[q] = keys[keys != q]
    return RankedLists(order, dm.ids)


def _relevance(lists: RankedLists, truth: GroundTruth) -> tuple[np.ndarray, np.ndarray]:
    if tuple(lists.ids) != tuple(truth.ids):
        truth = truth.reordered(lists.ids)
    cls = np.array(truth.classes)
    rel = cls[lists.order] == cls[:, None]
    sizes = np.array([np.sum(cls == c) for c in cls])
    return rel, sizes


def _per_query(rel: np.ndarray, sizes: np.ndarray) -> dict:
    n, m = rel.shape
    c = sizes - 1
    cum = np.cumsum(rel, axis=1)
    nn = rel[:, 0].astype(float)
    ft = cum[np.arange(n), np.minimum(c, m) - 1] / c
    st = cum[np.arange(n), np.minimum(2 * c, m) - 1] / c
    h = min(E_HORIZON, m)
    hits = cum[:, h - 1]
    p, r = hits / h, hits / c
    with np.errstate(divide="ignore", invalid="ignore"):
        em = np.where(hits > 0, 2.0 / (1.0 / p + 1.0 / r), 0.0)
    # the query itself occupies rank 1, so list position k sits at rank k + 1
    disc = 1.0 / np.log2(np.arange(2, m + 2))
    dcg = (rel * disc).sum(1)
    ideal = np.cumsum(disc)[c - 1]
    return {"nn": nn, "first_tier": ft, "second_tier": st, "e_measure": em,
            "dcg": dcg / ideal}


def _pr_curve(rel: np.ndarray, sizes: np.ndarray, grid=RECALL_GRID) -> np.ndarray:
    n, m = rel.shape
    cum = np.cumsum(rel, axis=1)
    ranks = np.arange(1, m + 1)
    prec = cum / ranks
    recall = cum / (sizes - 1)[:, None]
    # interpolated precision: max precision at any recall >= r
    out = np.zeros((n, len(grid)))
    for q in range(n):
        best = np.maximum.accumulate(prec[q][::-1])[::-1]
        pos = np.searchsorted(recall[q], grid - 1e-12, side="left")
        valid = pos < m
        out[q, valid] = best[pos[valid]]
    return out.mean(axis=0)


def confusion_matrix(lists: RankedLists, truth: GroundTruth) -> tuple[list, np.ndarray]:
    """Row i: distribution of the nearest neighbour's class over class-i queries."""
    if tuple(lists.ids) != tuple(truth.ids):
        truth = truth.reordered(lists.ids)
    cls = np.array(truth.classes)
    names = truth.class_names
    index = {c: i for i, c in enumerate(names)}
    mat = np.zeros((len(names), len(names)))
    for q, nn in enumerate(lists.order[:, 0]):
        mat[index[cls[q]], index[cls[nn]]] += 1
    return names, mat / mat.sum(axis=1, keepdims=True)


def same_pose_error(lists: RankedLists, truth: GroundTruth) -> float | None:
    """Fraction of class-incorrect nearest neighbours sharing the query's pose."""
    if tuple(lists.ids) != tuple(truth.ids):
        truth = truth.reordered(lists.ids)
    if truth.poses is None:
        raise EvaluationError("pose labels are missing")
    cls = np.array(truth.classes)
    pose = np.array(truth.poses)
    nn = lists.order[:, 0]
    wrong = cls[nn] != cls
    if not wrong.any():
        return None
    return float(np.mean(pose[nn][wrong] == pose[wrong]))


def compute_measures(lists: RankedLists, truth: GroundTruth) -> EvaluationReport:
    rel, sizes = _relevance(lists, truth)
    keep = sizes > 1
    if not keep.all():
        skipped = [lists.ids[i] for i in np.flatnonzero(~keep)]
        warnings.warn(f"skipping queries from single-model classes: {skipped}", stacklevel=2)
    if not keep.any():
        raise EvaluationError("no class has two or more models")
    per = _per_query(rel[keep], sizes[keep])
    pr = _pr_curve(rel[keep], sizes[keep])
    names, conf = confusion_matrix(lists, truth)
    spe = None
    if truth.poses is not None:
        spe = same_pose_error(lists, truth)
    return EvaluationReport(
        nn=float(per["nn"].mean()), first_tier=float(per["first_tier"].mean()),
        second_tier=float(per["second_tier"].mean()), e_measure=float(per["e_measure"].mean()),
        dcg=float(per["dcg"].mean()), recall=RECALL_GRID.copy(), precision=pr,
        classes=names, confusion=conf, same_pose_error=spe, n_queries=int(keep.sum()))


def per_query_measures(lists: RankedLists, truth: GroundTruth) -> dict:
    rel, sizes = _relevance(lists, truth)
    keep = sizes > 1
    return _per_query(rel[keep], sizes[keep])


def evaluate(distances, truth: GroundTruth) -> EvaluationReport:
    dm = _as_matrix(distances, truth.ids)
    return compute_measures(rank_all(dm), truth.reordered(dm.ids))


def pr_curve(lists: RankedLists, truth: GroundTruth, recall_grid=RECALL_GRID):
    """Interpolated precision at each recall level, averaged over queries."""
    rel, sizes = _relevance(lists, truth)
    keep = sizes > 1
    grid = np.asarray(recall_grid, dtype=float)
    return grid, _pr_curve(rel[keep], sizes[keep], grid)


def first_tier_scores(distances, classes) -> np.ndarray:
    """Per-query first-tier recall (queries from singleton classes get nan)."""
    cls = np.asarray([str(c) for c in classes])
    dm = _as_matrix(distances)
    lists = rank_all(dm)
    rel = cls[lists.order] == cls[:, None]
    c = np.array([np.sum(cls == x) for x in cls]) - 1
    cum = np.cumsum(rel, axis=1)
    out = np.full(len(cls), np.nan)
    ok = c > 0
    out[ok] = cum[np.flatnonzero(ok), c[ok] - 1] / c[ok]
    return out


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or len(x) < 2:
        raise EvaluationError("inputs must have equal length of at least 2")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt((dx * dx).sum()), np.sqrt((dy * dy).sum())
    if sx == 0 or sy == 0:
        raise EvaluationError("correlation is undefined for constant input")
    return float(np.clip((dx * dy).sum() / (sx * sy), -1.0, 1.0))


def exclude_classes(distances, truth: GroundTruth, excluded):
    """Drop every model whose class is in ``excluded``."""
    dm = _as_matrix(distances, truth.ids)
    truth = truth.reordered(dm.ids)
    excluded = {str(c) for c in excluded}
    unknown = excluded - set(truth.classes)
    if unknown:
        raise EvaluationError(f"unknown classes: {sorted(unknown)}")
    keep = [i for i, c in enumerate(truth.classes) if c not in excluded]
    if not keep:
        raise EvaluationError("cannot exclude every class")
    return dm.subset(keep), truth.subset(keep)


def subset_eval(distances, truth: GroundTruth, n_classes: int, trials: int,
                seed: int = 0) -> EvaluationReport:
    """Average of evaluations restricted to random class subsets."""
    dm = _as_matrix(distances, truth.ids)
    truth = truth.reordered(dm.ids)
    names = truth.class_names
    if not 1 <= n_classes <= len(names):
        raise EvaluationError(f"n_classes must lie in [1, {len(names)}]")
    rng = np.random.default_rng(seed)
    reports = []
    for _ in range(trials):
        chosen = set(rng.choice(names, size=n_classes, replace=False).tolist())
        keep = [i for i, c in enumerate(truth.classes) if c in chosen]
        reports.append(evaluate(dm.subset(keep), truth.subset(keep)))
    avg = {k: float(np.mean([getattr(r, k) for r in reports])) for k in EvaluationReport.SCALARS}
    spe = [r.same_pose_error for r in reports if r.same_pose_error is not None]
    full = reports[0] if trials == 1 else None
    return EvaluationReport(
        **avg, recall=RECALL_GRID.copy(),
        precision=np.mean([r.precision for r in reports], axis=0),
        classes=full.classes if full else [], confusion=full.confusion if full else np.zeros((0, 0)),
        same_pose_error=float(np.mean(spe)) if spe else None,
        n_queries=int(np.mean([r.n_queries for r in reports])),
        extra={"subset_classes": n_classes, "subset_trials": trials, "subset_seed": seed})


def dominates(precision_a, precision_b) -> bool:
    """True iff curve a has strictly higher precision at every sampled recall."""
    a, b = np.asarray(precision_a, float), np.asarray(precision_b, float)
    if a.shape != b.shape:
        raise EvaluationError("curves are sampled on different grids")
    return bool(np.all(a > b))
