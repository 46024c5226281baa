"""Method registry, descriptor extraction, training artifacts and distance
matrices.

Every method maps a mesh to one real vector. Parameters shared across models
(time and energy grids, voxel size, codebooks, mappings, fusion weights) come
either from a training artifact or, for label-free parameters of untrained
methods, from the set being described.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bof, fusion, geodesic, hapt, local_features, spectral
from .datagen import BenchmarkManifest, read_manifest
from .evaluation import DistanceMatrix
from .mesh import TriangleMesh, compactness, load_mesh, surface_area, vertex_mass_weights

log = logging.getLogger("shaperank")

DEFAULT_CONFIG = {
    "seed": 0,
    "spectral.m": 100,
    "hks.count": 32,
    "wks.energies": 50,
    "sihks.lambda": 0.15,
    "sihks.sparse_k": 32,
    "sihks.soft_k": 48,
    "sgws.level": 2,
    "sgws.k": 32,
    "ispm.partitions": 2,
    "geo.k": 50,
    "mds.points": 300,
    "mds.iters": 300,
    "ray.directions": 64,
    "ray.bins": 32,
    "curv.k": 50,
    "hapt.s": "auto",
    "hapt.radii": 8,
    "hapt.c": 0.5,
    "hapt.bins": 6,
    "hapt.pca_dims": 10,
    "apfh.points": 4000,
    "apfh.k": 30,
    "apfh.codebook": 200,
    "codebook.iters": 50,
    "codebook.rows": 20000,
    "mr.k_nn": 10,
    "mr.alpha": 1.0,
    "pso.particles": 10,
    "pso.iters": 10,
    "entropy.splits": 5,
    "entropy.frac": 0.7,
}


class PipelineError(RuntimeError):
    pass


@dataclass(frozen=True)
class Method:
    id: str
    metric: str
    kind: str  # global | codebook | mapped | fused
    components: tuple = ()
    supervised: bool = False


METHODS = {m.id: m for m in [
    Method("area", "l1", "global"),
    Method("compactness", "l1", "global"),
    Method("hks", "l2", "global"),
    Method("wks", "l2", "global"),
    Method("sihks", "l2", "global"),
    Method("sgws-ispm", "ispm", "codebook"),
    Method("rbihdm", "std-l2", "global"),
    Method("rbihdm-s", "std-l2", "global"),
    Method("geo-svd", "std-l2", "global"),
    Method("mds-r", "l1", "global"),
    Method("ray", "l1", "global"),
    Method("curvature-bof", "js", "codebook"),
    Method("hapt", "jeffrey", "global"),
    Method("hapt-trained", "l2", "mapped", ("hapt",), supervised=True),
    Method("apfh-bof", "js", "codebook"),
    Method("apfh-mr", "manifold", "codebook"),
    Method("sihks-bof", "l1", "codebook"),
    Method("sihks-softvq", "l1", "codebook"),
    Method("multi-feature", "fused-entropy", "fused", ("hks", "wks", "area"), supervised=True),
    Method("hybrid-pso", "fused-pso", "fused", ("curvature-bof", "geo-svd", "mds-r"),
           supervised=True),
]}

METRICS = ("l1", "l2", "std-l2", "jeffrey", "js", "ispm", "manifold", "fused-entropy",
           "fused-pso")


def get_method(method_id: str) -> Method:
    if method_id not in METHODS:
        raise PipelineError(f"unknown method {method_id!r}; registered ids: "
                            + ", ".join(METHODS))
    return METHODS[method_id]


def needs_training(method_id: str) -> bool:
    return get_method(method_id).kind != "global"


# ------------------------------------------------------------------ config


def parse_value(text: str):
    t = text.strip()
    for conv in (int, float):
        try:
            return conv(t)
        except ValueError:
            pass
    return t


def load_config(path=None, overrides=()) -> dict:
    """Flat key=value config; later overrides win. Unknown keys are rejected."""
    cfg = dict(DEFAULT_CONFIG)
    items = []
    if path:
        for n, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise PipelineError(f"{path}:{n}: expected key=value")
            items.append(line)
    items += list(overrides)
    for item in items:
        k, _, v = item.partition("=")
        k = k.strip()
        if k not in DEFAULT_CONFIG:
            raise PipelineError(f"unknown config key {k!r}")
        cfg[k] = parse_value(v)
    return cfg


def dump_config(cfg: dict) -> str:
    return "".join(f"{k}={cfg[k]}\n" for k in sorted(cfg))


# ------------------------------------------------------------------ models


@dataclass(frozen=True)
class ModelRecord:
    id: str
    path: Path
    cls: str
    pose: str

    def load(self) -> TriangleMesh:
        m = load_mesh(self.path)
        return TriangleMesh(m.vertices, m.faces, self.id)


def manifest_records(manifest) -> list[ModelRecord]:
    if not isinstance(manifest, BenchmarkManifest):
        manifest = read_manifest(manifest)
    return [ModelRecord(e[0], manifest.root / e[1], e[2], e[3]) for e in manifest.entries]


_BASES: dict = {}


def basis_of(mesh: TriangleMesh, m: int) -> spectral.SpectralBasis:
    key = (mesh.content_hash(), m)
    if key not in _BASES:
        if len(_BASES) > 512:
            _BASES.clear()
        _BASES[key] = spectral.mesh_basis(mesh, m)
    return _BASES[key]


def clear_memo() -> None:
    _BASES.clear()


def model_seed(mesh: TriangleMesh, seed: int) -> int:
    return int(mesh.content_hash()[:8], 16) ^ int(seed)


# ------------------------------------------------------------- references


def _median_spectrum(meshes, cfg) -> tuple[float, float]:
    m = int(cfg["spectral.m"])
    lam = np.array([[basis_of(x, m).eigenvalues[1], basis_of(x, m).eigenvalues[-1]]
                    for x in meshes])
    return float(np.median(lam[:, 0])), float(np.median(lam[:, 1]))


def _bbox_diagonal(mesh: TriangleMesh) -> float:
    return float(np.linalg.norm(np.ptp(mesh.vertices, axis=0)))


def reference_parameters(method_id: str, meshes, cfg: dict) -> dict:
    """Label-free parameters shared by every model of a comparison."""
    if method_id in ("hks", "wks"):
        l1, lm = _median_spectrum(meshes, cfg)
        if method_id == "hks":
            return {"times": spectral.hks_times(l1, lm, int(cfg["hks.count"])).tolist()}
        return {"energy_range": [float(np.log(l1)), float(np.log(lm))]}
    if method_id == "sgws-ispm":
        l1, lm = _median_spectrum(meshes, cfg)
        return {"lam_range": [l1, lm]}
    if method_id in ("hapt", "hapt-trained"):
        n = int(cfg["hapt.radii"])
        if cfg["hapt.s"] == "auto":
            diag = float(np.median([_bbox_diagonal(x) for x in meshes]))
            s, radii = hapt.default_hapt_parameters(diag, n)
        else:
            s = float(cfg["hapt.s"])
            radii = s * np.linspace(2.0, 16.0, n)
        return {"s": float(s), "radii": radii.tolist()}
    return {}


# ------------------------------------------------------- per-model pieces


def _local_features(mesh: TriangleMesh, method_id: str, cfg: dict, ref: dict):
    """Per-sample local descriptors and their pooling weights."""
    if method_id == "curvature-bof":
        field_ = local_features.principal_curvatures(mesh)
        return (local_features.curvature_index_features(mesh, field_),
                vertex_mass_weights(mesh).weights)
    if method_id in ("apfh-bof", "apfh-mr"):
        pts = local_features.sample_oriented_points(mesh, int(cfg["apfh.points"]),
                                                    model_seed(mesh, cfg["seed"]))
        return local_features.apfh(pts, int(cfg["apfh.k"])), np.ones(len(pts))
    if method_id in ("sihks-bof", "sihks-softvq"):
        b = basis_of(mesh, int(cfg["spectral.m"]))
        x = spectral.sihks(b).values
        n = np.linalg.norm(x, axis=1, keepdims=True)
        return x / np.where(n > 0, n, 1.0), b.mass.weights
    if method_id == "sgws-ispm":
        b = basis_of(mesh, int(cfg["spectral.m"]))
        x = spectral.sgws(b, int(cfg["sgws.level"]), tuple(ref["lam_range"])).values
        # log keeps channel magnitudes comparable across models
        return np.log(np.maximum(x, 1e-300)), b.mass.weights
    raise PipelineError(f"{method_id} has no local features")


def _hapt_vector(mesh: TriangleMesh, cfg: dict, ref: dict) -> np.ndarray:
    grid = hapt.mapt_grid(mesh, ref["s"], ref["radii"], float(cfg["hapt.c"]),
                          seed=model_seed(mesh, cfg["seed"]))
    return hapt.hapt_descriptor(grid, int(cfg["hapt.bins"])).values


def _mds_ray(mesh: TriangleMesh, cfg: dict) -> np.ndarray:
    G = geodesic.geodesic_matrix(mesh).values
    n = min(int(cfg["mds.points"]), len(G))
    idx = farthest_points(G, n)
    emb = geodesic.smacof_embed(G[np.ix_(idx, idx)], 3, int(cfg["mds.iters"]),
                                seed=int(cfg["seed"]))
    feat = geodesic.ray_feature(emb, int(cfg["ray.directions"]))
    return geodesic.ray_histogram(feat, int(cfg["ray.bins"]))


def farthest_points(G: np.ndarray, n: int) -> np.ndarray:
    """Greedy farthest-point landmarks under the distance matrix G, from vertex 0's farthest."""
    first = int(np.argmax(G[0]))
    idx = [first]
    d = G[first].copy()
    for _ in range(n - 1):
        j = int(np.argmax(d))
        idx.append(j)
        d = np.minimum(d, G[j])
    return np.array(sorted(set(idx)))


def global_descriptor(mesh: TriangleMesh, method_id: str, cfg: dict, ref: dict) -> np.ndarray:
    m = int(cfg["spectral.m"])
    if method_id == "area":
        return np.array([surface_area(mesh)])
    if method_id == "compactness":
        return np.array([compactness(mesh)])
    if method_id == "hks":
        b = basis_of(mesh, m)
        h = spectral.hks(b, ref["times"]).values
        return b.mass.weights @ np.log(np.maximum(h, 1e-300)) / b.mass.total
    if method_id == "wks":
        b = basis_of(mesh, m)
        w = spectral.wks(b, int(cfg["wks.energies"]), energy_range=tuple(ref["energy_range"]))
        return np.log(np.maximum(w.pooled(b.mass), 1e-300))
    if method_id == "sihks":
        b = basis_of(mesh, m)
        return spectral.sihks(b).pooled(b.mass)
    if method_id in ("rbihdm", "rbihdm-s"):
        mode = "scale_independent" if method_id == "rbihdm" else "scale_dependent"
        L, mm = spectral.RBIHDM_DEFAULTS[mode]
        return spectral.rbihdm(basis_of(mesh, max(m, mm)), mode, L, mm).values
    if method_id == "geo-svd":
        return geodesic.geodesic_svd_feature(geodesic.geodesic_matrix(mesh), int(cfg["geo.k"]))
    if method_id == "mds-r":
        return _mds_ray(mesh, cfg)
    if method_id == "ray":
        feat = geodesic.ray_feature(mesh, int(cfg["ray.directions"]))
        return geodesic.ray_histogram(feat, int(cfg["ray.bins"]))
    if method_id == "hapt":
        return _hapt_vector(mesh, cfg, ref)
    raise PipelineError(f"{method_id} is not a global method")


def _codebook_from(art: dict) -> bof.Codebook:
    return bof.Codebook(np.array(art["codebook"]), int(art.get("seed", 0)))


def codebook_descriptor(mesh: TriangleMesh, method_id: str, cfg: dict, art: dict) -> np.ndarray:
    ref = art.get("reference", {})
    x, w = _local_features(mesh, method_id, cfg, ref)
    cb = _codebook_from(art)
    if method_id in ("curvature-bof", "apfh-bof", "apfh-mr"):
        h = bof.hard_histogram(x, cb, w)
        return h / h.sum()
    if method_id == "sihks-bof":
        D = bof.dictionary_from_codebook(cb)
        z = bof.sparse_codes(x, D, float(cfg["sihks.lambda"]))
        return bof.mean_pool(z, w).values
    if method_id == "sihks-softvq":
        q = bof.soft_assign(x, cb, float(art["sigma"]))
        return bof.mean_pool(q, w, normalize=True).values
    if method_id == "sgws-ispm":
        q = bof.soft_assign(x, cb, float(art["sigma"]))
        b = basis_of(mesh, int(cfg["spectral.m"]))
        return spectral.ispm_histogram(b, q, int(cfg["ispm.partitions"]))
    raise PipelineError(f"{method_id} is not a codebook method")


def descriptor(mesh: TriangleMesh, method_id: str, cfg: dict, art: dict) -> np.ndarray:
    """One model's descriptor given the method's artifact (or reference parameters)."""
    meth = get_method(method_id)
    if meth.kind == "global":
        return np.asarray(global_descriptor(mesh, method_id, cfg, art.get("reference", {})),
                          dtype=float)
    if meth.kind == "codebook":
        return codebook_descriptor(mesh, method_id, cfg, art)
    if meth.kind == "mapped":
        raw = global_descriptor(mesh, "hapt", cfg, art["reference"])
        mp = art["mapping"]
        mapping = hapt.LinearMapping(np.array(mp["mean"]), np.array(mp["pca"]),
                                     np.array(mp["lda"]), int(mp["n_classes"]))
        return hapt.apply_mapping(mapping, raw)
    parts = [descriptor(mesh, c, cfg, art["components"][c]) for c in meth.components]
    return np.concatenate(parts)


# ----------------------------------------------------------------- training


def _config_subset(cfg: dict) -> dict:
    return {k: cfg[k] for k in sorted(cfg)}


def fit_reference_artifact(method_id: str, meshes, cfg: dict) -> dict:
    """Artifact for an untrained global method: reference parameters only."""
    return {"method": method_id, "reference": reference_parameters(method_id, meshes, cfg)}


def train(method_id: str, records: list[ModelRecord], cfg: dict, meshes=None) -> dict:
    """Fit every artifact a method needs from the training records only."""
    meth = get_method(method_id)
    meshes = meshes if meshes is not None else [r.load() for r in records]
    labels = [r.cls for r in records]
    seed = int(cfg["seed"])
    art = {"method": method_id, "seed": seed, "train_ids": [r.id for r in records],
           "config": _config_subset(cfg)}
    if meth.kind == "global":
        art["reference"] = reference_parameters(method_id, meshes, cfg)
        return art
    if meth.kind == "codebook":
        ref = reference_parameters(method_id, meshes, cfg)
        art["reference"] = ref
        rows = np.vstack([_local_features(m, method_id, cfg, ref)[0] for m in meshes])
        rng = np.random.default_rng(seed)
        cap = int(cfg["codebook.rows"])
        if len(rows) > cap:
            rows = rows[np.sort(rng.choice(len(rows), cap, replace=False))]
        K = {"curvature-bof": int(cfg["curv.k"]), "apfh-bof": int(cfg["apfh.codebook"]),
             "apfh-mr": int(cfg["apfh.codebook"]), "sihks-bof": int(cfg["sihks.sparse_k"]),
             "sihks-softvq": int(cfg["sihks.soft_k"]), "sgws-ispm": int(cfg["sgws.k"])}[method_id]
        cb = bof.kmeans(rows, min(K, len(rows)), seed=seed, iters=int(cfg["codebook.iters"]))
        art["codebook"] = cb.centroids.tolist()
        art["sigma"] = bof.centroid_spacing(cb)
        return art
    if meth.kind == "mapped":
        ref = reference_parameters("hapt", meshes, cfg)
        art["reference"] = ref
        x = np.array([global_descriptor(m, "hapt", cfg, ref) for m in meshes])
        mp = hapt.train_pca_lda(x, labels, min(int(cfg["hapt.pca_dims"]), len(x) - 1,
                                                x.shape[1]))
        art["mapping"] = {"mean": mp.mean.tolist(), "pca": mp.pca.tolist(),
                          "lda": mp.lda.tolist(), "n_classes": mp.n_classes}
        return art
    comps = {c: train(c, records, cfg, meshes) for c in meth.components}
    art["components"] = comps
    ids = [r.id for r in records]
    mats = []
    for c in meth.components:
        vecs = {i: descriptor(m, c, cfg, comps[c]) for i, m in zip(ids, meshes)}
        comps[c]["size"] = len(next(iter(vecs.values())))
        mats.append(distance_matrix(vecs, ids, c, comps[c], cfg).values)
    if meth.metric == "fused-entropy":
        sims = [fusion.distance_to_similarity(d) for d in mats]
        fw = fusion.entropy_weights_split(sims, labels, meth.components,
                                          int(cfg["entropy.splits"]),
                                          float(cfg["entropy.frac"]), seed)
        fused = fusion.combine_similarity(sims, fw.weights)
        fitness = fusion.mean_first_tier(fusion.similarity_to_distance(fused), labels)
        single = [fusion.mean_first_tier(d, labels) for d in mats]
    else:
        fw = fusion.pso_weights(mats, labels, int(cfg["pso.particles"]), int(cfg["pso.iters"]),
                                seed, meth.components)
        fitness = fw.fitness
        single = [fusion.mean_first_tier(d, labels) for d in mats]
    art["weights"] = dict(zip(meth.components, [float(w) for w in fw.weights]))
    art["train_first_tier"] = float(fitness)
    art["component_first_tier"] = dict(zip(meth.components, [float(s) for s in single]))
    return art


def check_disjoint(train_records, test_records) -> None:
    shared = sorted({r.id for r in train_records} & {r.id for r in test_records})
    if shared:
        raise PipelineError("train and test manifests share model ids: " + ", ".join(shared))


def save_artifact(art: dict, path) -> None:
    Path(path).write_text(json.dumps(art, indent=1, sort_keys=True) + "\n")


def load_artifact(path) -> dict:
    return json.loads(Path(path).read_text())


# -------------------------------------------------------------- describing


def _cache_key(mesh: TriangleMesh, method_id: str, cfg: dict, art: dict) -> str:
    payload = json.dumps({"mesh": mesh.content_hash(), "method": method_id,
                          "cfg": _config_subset(cfg),
                          "art": {k: v for k, v in art.items() if k != "train_ids"}},
                         sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:40]


def _describe_one(args):
    rec_id, mesh, method_id, cfg, art, cache_dir = args
    path = None
    if cache_dir:
        path = Path(cache_dir) / method_id / (_cache_key(mesh, method_id, cfg, art) + ".npy")
        if path.exists():
            return rec_id, np.load(path), False, None
    try:
        vec = descriptor(mesh, method_id, cfg, art)
    except Exception as exc:  # per-model failure is reported, the run continues
        return rec_id, None, True, f"{type(exc).__name__}: {exc}"
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.save(path, vec)
    return rec_id, vec, True, None


@dataclass
class DescribeResult:
    ids: list
    vectors: dict
    failures: dict
    computed: int
    cached: int
    artifact: dict


def describe(records: list[ModelRecord], method_id: str, cfg: dict, art: dict | None = None,
             cache_dir=None, workers: int = 1, meshes=None) -> DescribeResult:
    """Descriptors for every record; failures are collected, not raised."""
    meth = get_method(method_id)
    all_ids = [r.id for r in records]
    failures = {}
    if meshes is None:
        loaded = []
        for r in records:
            try:
                loaded.append((r, r.load()))
            except (OSError, ValueError) as exc:
                failures[r.id] = f"{type(exc).__name__}: {exc}"
                log.error("failed %s: %s", r.id, failures[r.id])
        records, meshes = [r for r, _ in loaded], [m for _, m in loaded]
    if art is None:
        if meth.kind != "global":
            raise PipelineError(f"method {method_id!r} needs a training artifact; run `train`")
        if not meshes:
            raise PipelineError("no model could be loaded")
        art = fit_reference_artifact(method_id, meshes, cfg)
    if art.get("method") != method_id:
        raise PipelineError(f"artifact was trained for {art.get('method')!r}, not {method_id!r}")
    jobs = [(r.id, m, method_id, cfg, art, str(cache_dir) if cache_dir else None)
            for r, m in zip(records, meshes)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_describe_one, jobs))
    else:
        results = [_describe_one(j) for j in jobs]
    vectors = {}
    computed = cached = 0
    for rec_id, vec, fresh, err in results:
        if err:
            failures[rec_id] = err
            log.error("failed %s: %s", rec_id, err)
            continue
        vectors[rec_id] = vec
        if fresh:
            computed += 1
            log.info("computed %s", rec_id)
        else:
            cached += 1
            log.info("cached %s", rec_id)
    return DescribeResult(all_ids, vectors, failures, computed, cached, art)


def column_names(method_id: str, vectors: dict, art: dict | None) -> list[str]:
    meth = get_method(method_id)
    n = len(next(iter(vectors.values())))
    if meth.kind != "fused":
        return [f"{method_id}:{i}" for i in range(n)]
    names = []
    for c in meth.components:
        size = component_sizes(art)[c]
        names += [f"{c}:{i}" for i in range(size)]
    if len(names) != n:
        raise PipelineError("component sizes do not add up to the descriptor length")
    return names


def component_sizes(art: dict) -> dict:
    return {c: int(a["size"]) for c, a in art["components"].items()}


def write_descriptors(path, method_id: str, ids, vectors: dict, columns) -> None:
    """CSV: model_id then one column per entry, 17 significant digits."""
    lines = ["model_id," + ",".join(columns)]
    for i in ids:
        lines.append(i + "," + ",".join("%.17g" % x for x in vectors[i]))
    Path(path).write_text("\n".join(lines) + "\n")
    Path(str(path) + ".meta.json").write_text(json.dumps({"method": method_id}) + "\n")


def read_descriptors(path) -> tuple[str | None, list, dict, list]:
    lines = Path(path).read_text().splitlines()
    columns = lines[0].split(",")[1:]
    ids, vectors = [], {}
    for line in lines[1:]:
        if not line.strip():
            continue
        parts = line.split(",")
        ids.append(parts[0])
        vectors[parts[0]] = np.array([float(x) for x in parts[1:]])
    meta = Path(str(path) + ".meta.json")
    method = json.loads(meta.read_text())["method"] if meta.exists() else None
    return method, ids, vectors, columns


# ----------------------------------------------------------- distances


def pairwise(x: np.ndarray, metric: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = len(x)
    if metric == "l1":
        d = np.abs(x[:, None, :] - x[None, :, :]).sum(-1)
    elif metric in ("l2", "std-l2"):
        if metric == "std-l2":
            _, sd = spectral.standardization(x)
            x = x / sd
        diff = x[:, None, :] - x[None, :, :]
        d = np.sqrt((diff * diff).sum(-1))
    elif metric == "jeffrey":
        d = np.array([[hapt.jeffrey_divergence(x[i], x[j]) if j > i else 0.0
                       for j in range(n)] for i in range(n)])
        d = d + d.T
    elif metric == "js":
        d = np.array([[bof.js_divergence(x[i], x[j]) if j > i else 0.0
                       for j in range(n)] for i in range(n)])
        d = d + d.T
    else:
        raise PipelineError(f"metric {metric!r} needs method context")
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def distance_matrix(vectors: dict, ids, method_id: str, art: dict | None = None,
                    cfg: dict | None = None, metric: str | None = None) -> DistanceMatrix:
    meth = get_method(method_id)
    cfg = cfg or DEFAULT_CONFIG
    metric = metric or meth.metric
    if metric not in METRICS:
        raise PipelineError(f"unknown metric {metric!r}; choose from {', '.join(METRICS)}")
    if metric.startswith("fused") != (meth.kind == "fused"):
        raise PipelineError(f"metric {metric!r} does not apply to method {method_id!r}")
    missing = [i for i in ids if i not in vectors]
    if missing:
        raise PipelineError(f"descriptors missing for models: {missing}")
    x = np.array([vectors[i] for i in ids])
    if metric == "ispm":
        p = int(cfg["ispm.partitions"])
        n = len(x)
        d = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                d[i, j] = d[j, i] = spectral.ispm_distance(x[i], x[j], p)
        return DistanceMatrix(d, tuple(ids))
    if metric == "manifold":
        base = pairwise(x, "js")
        W = bof.similarity_graph(None, int(cfg["mr.k_nn"]), distances=base)
        S = bof.manifold_rank_all(W, float(cfg["mr.alpha"]))
        S = 0.5 * (S + S.T)
        d = S.max() - S
        np.fill_diagonal(d, 0.0)
        return DistanceMatrix(d, tuple(ids))
    if metric.startswith("fused"):
        if art is None:
            raise PipelineError(f"{method_id} needs its training artifact for fusion weights")
        mats, off = [], 0
        for c in meth.components:
            size = int(art["components"][c]["size"])
            sub = {i: vectors[i][off:off + size] for i in ids}
            off += size
            mats.append(distance_matrix(sub, ids, c, art["components"][c], cfg).values)
        w = [art["weights"][c] for c in meth.components]
        if metric == "fused-entropy":
            sims = [fusion.distance_to_similarity(d) for d in mats]
            d = fusion.similarity_to_distance(fusion.combine_similarity(sims, w))
        else:
            d = fusion.combine_distances(mats, w)
        return DistanceMatrix(d, tuple(ids))
    return DistanceMatrix(pairwise(x, metric), tuple(ids))


# ---------------------------------------------------------------- helpers


def run_method(method_id: str, records, cfg: dict, art: dict | None = None, cache_dir=None,
               workers: int = 1, meshes=None) -> DistanceMatrix:
    """Describe then compare; raises if any model fails."""
    res = describe(records, method_id, cfg, art, cache_dir, workers, meshes)
    if res.failures:
        raise PipelineError(f"descriptor failures: {res.failures}")
    return distance_matrix(res.vectors, res.ids, method_id, res.artifact, cfg)
