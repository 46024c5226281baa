"""Procedural labelled benchmark of articulated capsule-chain figures.

Classes are body-shape parameter sets, poses are joint articulations (or rigid
motions). Every model is meshed with its own grid offset and decimation seed,
so no two models share a triangulation.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation
from skimage.measure import marching_cubes

from .mesh import TriangleMesh, decimate, save_off, validate

JOINTS = ("l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_knee", "r_knee")
MODES = ("rigid_poses", "bent_poses")


class SelfIntersection(ValueError):
    pass


@dataclass(frozen=True)
class FigureSpec:
    """Shape and pose of one figure.

    radii: upper arm, lower arm, upper leg, lower leg (tube radii at the
    proximal end; tubes taper by ``taper`` towards the distal end).
    """

    radii: tuple = (6.0, 5.0, 8.0, 6.5)
    torso_length: float = 50.0
    torso_width: float = 16.0
    scale: float = 1.0
    angles: tuple = (0.0,) * 6
    spacing: float = 2.5
    seed: int = 0
    target_vertices: int | None = 1000
    rotation: tuple | None = None  # quaternion (x, y, z, w) applied after meshing
    translation: tuple = (0.0, 0.0, 0.0)
    taper: float = 0.85
    blend: float = 4.0
    grid_offset: bool = True  # False: grid mirror-symmetric about x = 0

    def __post_init__(self):
        if len(self.radii) != 4 or min(self.radii) <= 0:
            raise ValueError("radii must be 4 positive values")
        if self.torso_length <= 0 or self.torso_width <= 0 or self.scale <= 0:
            raise ValueError("torso dimensions and scale must be positive")
        if len(self.angles) != 6:
            raise ValueError("angles must hold 6 joint bends")
        if any(not -np.pi / 2 < a < np.pi / 2 for a in self.angles):
            raise ValueError("bend angles must lie in (-pi/2, pi/2)")


@dataclass(frozen=True)
class Segment:
    a: np.ndarray
    b: np.ndarray
    ra: float
    rb: float
    name: str
    parent: str | None = None


@dataclass
class BenchmarkManifest:
    entries: list  # (model_id, path, class, pose, sha256)
    seed: int
    mode: str
    root: Path = field(default_factory=Path)

    @property
    def ids(self) -> list:
        return [e[0] for e in self.entries]

    @property
    def classes(self) -> list:
        return [e[2] for e in self.entries]

    @property
    def poses(self) -> list:
        return [e[3] for e in self.entries]

    def paths(self) -> list:
        return [self.root / e[1] for e in self.entries]

    def write(self, path) -> None:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model_id", "path", "class", "pose", "sha256"])
            for e in self.entries:
                w.writerow(e)
        meta = path.with_suffix(".meta")
        meta.write_text(f"seed={self.seed}\nmode={self.mode}\n")


def read_manifest(path) -> BenchmarkManifest:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    required = {"model_id", "path", "class", "pose"}
    if rows and not required <= set(rows[0]):
        raise ValueError(f"{path}: manifest needs columns {sorted(required)}")
    entries = [(r["model_id"], r["path"], r["class"], r["pose"], r.get("sha256", ""))
               for r in rows]
    seed, mode = 0, ""
    meta = path.with_suffix(".meta")
    if meta.exists():
        kv = dict(line.split("=", 1) for line in meta.read_text().split() if "=" in line)
        seed, mode = int(kv.get("seed", 0)), kv.get("mode", "")
    return BenchmarkManifest(entries, seed, mode, path.parent)


def _rot(axis: str, angle: float) -> np.ndarray:
    return Rotation.from_euler(axis, angle).as_matrix()


def skeleton(spec: FigureSpec) -> list[Segment]:
    """Centre-line segments in figure units before scaling; z up, x lateral."""
    ru, rl, rU, rL = spec.radii
    tw, tl = spec.torso_width, spec.torso_length
    t = spec.taper
    hip_z = 100.0
    top_z = hip_z + tl
    segs = [Segment(np.array([0, 0, hip_z]), np.array([0, 0, top_z]), tw, tw * 0.95, "torso")]
    head_r = 0.7 * tw
    head_c = np.array([0, 0, top_z + tw * 0.95 + head_r * 0.8])
    segs.append(Segment(head_c, head_c, head_r, head_r, "head", "torso"))
    upper_arm, lower_arm = 30.0, 28.0
    upper_leg, lower_leg = 45.0, 45.0
    shoulder_z = top_z - 0.3 * tw
    for side, sign in (("l", 1.0), ("r", -1.0)):
        i = 0 if side == "l" else 1
        sh, el, kn = spec.angles[i], spec.angles[2 + i], spec.angles[4 + i]
        # arms start inside the torso rim and extend laterally
        p0 = np.array([sign * (tw * 0.8), 0.0, shoulder_z])
        d0 = _rot("y", -sign * sh) @ np.array([sign, 0.0, 0.0])
        p1 = p0 + (upper_arm + 0.2 * tw) * d0
        d1 = _rot("z", sign * el) @ d0
        p2 = p1 + lower_arm * d1
        segs.append(Segment(p0, p1, ru, ru * t, f"{side}_upper_arm", "torso"))
        segs.append(Segment(p1, p2, ru * t, rl * t, f"{side}_lower_arm", f"{side}_upper_arm"))
        q0 = np.array([sign * (1.3 * rU + 2.0), 0.0, hip_z + 0.3 * tw])
        q1 = q0 + np.array([0.0, 0.0, -(upper_leg + 0.3 * tw)])
        e1 = _rot("x", kn) @ np.array([0.0, 0.0, -1.0])
        q2 = q1 + lower_leg * e1
        segs.append(Segment(q0, q1, rU, rU * t, f"{side}_upper_leg", "torso"))
        segs.append(Segment(q1, q2, rU * t, rL * t, f"{side}_lower_leg", f"{side}_upper_leg"))
    return segs


def _segment_distance(p: np.ndarray, s: Segment) -> np.ndarray:
    ab = s.b - s.a
    den = float(ab @ ab)
    if den == 0:
        return np.linalg.norm(p - s.a, axis=-1) - s.ra
    h = np.clip(((p - s.a) @ ab) / den, 0.0, 1.0)
    r = s.ra + (s.rb - s.ra) * h
    return np.linalg.norm(p - s.a - h[..., None] * ab, axis=-1) - r


def _smooth_min(a, b, k):
    h = np.clip(0.5 + 0.5 * (b - a) / k, 0.0, 1.0)
    return b * (1 - h) + a * h - k * h * (1 - h)


def figure_sdf(points: np.ndarray, segs: list[Segment], blend: float) -> np.ndarray:
    """Signed distance (negative inside); smooth blending only where limbs meet the torso."""
    by_name = {s.name: s for s in segs}
    torso = _segment_distance(points, by_name["torso"])
    chains: dict[str, np.ndarray] = {}
    for s in segs:
        if s.name == "torso":
            continue
        d = _segment_distance(points, s)
        root = s.name if s.parent == "torso" else s.parent
        chains[root] = np.minimum(chains[root], d) if root in chains else d
    out = torso
    for d in chains.values():
        out = _smooth_min(out, d, blend)
    return out


def _seg_seg_distance(s: Segment, t: Segment, samples: int = 64) -> float:
    u = np.linspace(0.0, 1.0, samples)[:, None]
    p = s.a + u * (s.b - s.a)
    q = t.a + u * (t.b - t.a)
    return float(np.min(np.linalg.norm(p[:, None] - q[None], axis=-1)))


def check_self_intersection(segs: list[Segment], margin: float = 1.0) -> None:
    """Raise when two non-adjacent tubes come closer than the sum of their radii."""
    adjacent = {(s.name, s.parent) for s in segs if s.parent} | {
        (s.parent, s.name) for s in segs if s.parent}
    for i, s in enumerate(segs):
        for t in segs[i + 1:]:
            if (s.name, t.name) in adjacent:
                continue
            gap = _seg_seg_distance(s, t) - max(s.ra, s.rb) - max(t.ra, t.rb)
            if gap < margin:
                raise SelfIntersection(
                    f"{s.name} and {t.name} intersect (gap {gap:.2f}); reduce the bend angles")


def generate_figure(spec: FigureSpec) -> TriangleMesh:
    """Mesh one figure: SDF, marching cubes on an offset grid, decimation, rigid motion."""
    segs = skeleton(spec)
    check_self_intersection(segs)
    rng = np.random.default_rng(spec.seed)
    lo = np.min([np.minimum(s.a, s.b) - max(s.ra, s.rb) for s in segs], axis=0)
    hi = np.max([np.maximum(s.a, s.b) + max(s.ra, s.rb) for s in segs], axis=0)
    h = spec.spacing
    pad = 2.0 * h + spec.blend
    if spec.grid_offset:
        origin = lo - pad - rng.uniform(0.0, h, 3)
    else:
        origin = np.floor((lo - pad) / h) * h
        origin[0] = -np.ceil((max(-lo[0], hi[0]) + pad) / h) * h
    shape = np.ceil((hi + pad - origin) / h).astype(int) + 1
    if not spec.grid_offset:
        shape[0] = int(round(-2 * origin[0] / h)) + 1
    axes = [origin[i] + h * np.arange(shape[i]) for i in range(3)]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([X, Y, Z], axis=-1)
    field_ = figure_sdf(pts, segs, spec.blend)
    verts, faces, _, _ = marching_cubes(field_, level=0.0, spacing=(h, h, h))
    verts = verts + origin
    mesh = TriangleMesh(verts, faces.astype(np.int64), "figure")
    mesh = _clean(mesh)
    vol = _signed_volume(mesh)
    if vol < 0:
        mesh = mesh.flipped()
    if spec.target_vertices is not None and mesh.n_vertices > spec.target_vertices:
        mesh = decimate(mesh, spec.target_vertices, seed=spec.seed)
    v = mesh.vertices * spec.scale
    if spec.rotation is not None:
        v = Rotation.from_quat(spec.rotation).apply(v)
    v = v + np.asarray(spec.translation)
    return TriangleMesh(v, mesh.faces, "figure")


def _signed_volume(mesh: TriangleMesh) -> float:
    v, f = mesh.vertices, mesh.faces
    return float(np.einsum("ij,ij->i", v[f[:, 0]], np.cross(v[f[:, 1]], v[f[:, 2]])).sum() / 6)


def _clean(mesh: TriangleMesh) -> TriangleMesh:
    """Merge coincident vertices and drop faces that collapse."""
    v = np.round(mesh.vertices, 9)
    uniq, inv = np.unique(v, axis=0, return_inverse=True)
    inv = inv.ravel()
    f = inv[mesh.faces]
    ok = (f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2])
    f = f[ok]
    used = np.unique(f)
    remap = np.full(len(uniq), -1)
    remap[used] = np.arange(len(used))
    return TriangleMesh(uniq[used], remap[f], mesh.name)


def _size_proxy(params: dict) -> tuple[float, float]:
    """Log surface area and log volume of the unscaled tube skeleton (overlaps ignored)."""
    spec = FigureSpec(radii=params["radii"], torso_length=params["torso_length"],
                      torso_width=params["torso_width"])
    area = vol = 0.0
    for sg in skeleton(spec):
        length = float(np.linalg.norm(sg.b - sg.a))
        if length == 0:
            area += 4 * np.pi * sg.ra**2
            vol += 4 / 3 * np.pi * sg.ra**3
        else:
            area += np.pi * (sg.ra + sg.rb) * length
            vol += np.pi * length * (sg.ra**2 + sg.ra * sg.rb + sg.rb**2) / 3
    return float(np.log(area)), float(np.log(vol))


def class_parameters(n_classes: int, seed: int, separation: float = 1.0,
                     candidates: int = 2048) -> list[dict]:
    """Shape parameters per class.

    Fatness takes geometrically spaced levels and overall scale evenly spaced
    levels, each assigned by a seeded permutation, so every class pair differs
    by at least one fatness step. The scale permutation is the best of
    ``candidates`` seeded draws at keeping classes apart in surface area and
    volume too; independent draws can give two classes the same area, which
    sampling-based descriptors then cannot tell apart.
    """
    rng = np.random.default_rng(seed)
    lo_f, hi_f = 1.0 - 0.25 * separation, 1.0 + 0.35 * separation
    lo_s, hi_s = 1.0 - 0.15 * separation, 1.0 + 0.15 * separation
    fat = np.geomspace(lo_f, hi_f, n_classes) if n_classes > 1 else np.ones(1)
    sc = np.linspace(lo_s, hi_s, n_classes) if n_classes > 1 else np.ones(1)
    fat = fat[rng.permutation(n_classes)]
    out = []
    for k in range(n_classes):
        prof = rng.uniform(0.98, 1.02, 4)
        out.append({
            "radii": tuple(float(x) for x in np.array([6.0, 5.0, 8.0, 6.5]) * fat[k] * prof),
            "torso_width": float(16.0 * fat[k] * rng.uniform(0.99, 1.01)),
            "torso_length": float(50.0 * rng.uniform(0.98, 1.02)),
        })
    la, lv = np.array([_size_proxy(c) for c in out]).T
    iu = np.triu_indices(n_classes, 1)
    best, best_gap = None, -np.inf
    for _ in range(candidates):
        perm = rng.permutation(n_classes)
        ls = np.log(sc[perm])
        a, v = la + 2 * ls, lv + 3 * ls
        gap = min(np.abs(a[:, None] - a[None])[iu].min(initial=np.inf),
                  np.abs(v[:, None] - v[None])[iu].min(initial=np.inf))
        if gap > best_gap:
            best, best_gap = perm, gap
    for k, c in enumerate(out):
        c["scale"] = float(sc[best[k]])
    return out


def pose_parameters(n_poses: int, mode: str, seed: int, max_bend: float = 1.0) -> list[dict]:
    """Joint angles (bent mode) or rigid motions (rigid mode) per pose.

    Pose 0 is the unbent figure in both modes.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    rng = np.random.default_rng(seed + 7919)
    out = []
    for p in range(n_poses):
        if mode == "rigid_poses":
            rot = Rotation.random(random_state=rng.integers(2**31)).as_quat() if p else None
            tr = rng.uniform(-50, 50, 3) if p else np.zeros(3)
            out.append({"angles": (0.0,) * 6,
                        "rotation": None if rot is None else tuple(float(x) for x in rot),
                        "translation": tuple(float(x) for x in tr)})
        else:
            ang = np.zeros(6) if p == 0 else rng.uniform(-max_bend, max_bend, 6)
            out.append({"angles": tuple(float(a) for a in ang), "rotation": None,
                        "translation": (0.0, 0.0, 0.0)})
    return out


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def benchmark_specs(classes: int, poses: int, mode: str, seed: int, separation: float = 1.0,
                    max_bend: float = 1.0, spacing: float = 2.5,
                    target_vertices: int | None = 1000):
    """(class index, pose index, FigureSpec) for the whole class x pose grid."""
    cls = class_parameters(classes, seed, separation)
    pos = pose_parameters(poses, mode, seed, max_bend)
    out = []
    for c in range(classes):
        for p in range(poses):
            model_seed = int(np.random.SeedSequence([seed, c, p]).generate_state(1)[0])
            spec = FigureSpec(**cls[c], **pos[p], spacing=spacing, seed=model_seed,
                              target_vertices=target_vertices)
            out.append((c, p, spec))
    return out


def _safe_spec(spec: FigureSpec) -> FigureSpec:
    """Halve bend angles until the figure is free of self-intersection."""
    for _ in range(8):
        try:
            check_self_intersection(skeleton(spec))
            return spec
        except SelfIntersection:
            spec = replace(spec, angles=tuple(0.5 * a for a in spec.angles))
    return replace(spec, angles=(0.0,) * 6)


def generate_benchmark(classes: int, poses: int, mode: str, seed: int, out_dir,
                       prefix: str | None = None, separation: float = 1.0,
                       max_bend: float = 1.0, spacing: float = 2.5,
                       target_vertices: int | None = 1000, workers: int = 1,
                       log=None) -> BenchmarkManifest:
    """Write classes x poses OFF files and ``manifest.csv`` into ``out_dir``.

    Pose angles that would self-intersect for some class are reduced for that
    pose across all classes, so every class shares the same poses.
    """
    if classes < 2 or poses < 2:
        raise ValueError("classes and poses must both be >= 2")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out_dir} is not writable: {exc}") from exc
    if prefix is None:
        prefix = f"{'r' if mode == 'rigid_poses' else 'b'}{seed}"
    specs = benchmark_specs(classes, poses, mode, seed, separation, max_bend, spacing,
                            target_vertices)
    # shared pose: shrink angles until every class accepts them
    by_pose: dict[int, tuple] = {}
    for c, p, spec in specs:
        safe = _safe_spec(spec).angles
        cur = by_pose.get(p, spec.angles)
        by_pose[p] = safe if np.abs(safe).sum() < np.abs(cur).sum() else cur
    jobs = []
    for c, p, spec in specs:
        mid = f"{prefix}_c{c:02d}_p{p:02d}"
        jobs.append((mid, f"{mid}.off", f"class{c:02d}", f"pose{p:02d}",
                     replace(spec, angles=by_pose[p])))

    args = [(j, str(out_dir)) for j in jobs]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            done = ex.map(_build_job, args)
            for mid in done:
                if log:
                    log(f"generated {mid}")
    else:
        for a in args:
            mid = _build_job(a)
            if log:
                log(f"generated {mid}")
    entries = [(mid, rel, c, p, _sha256(out_dir / rel)) for mid, rel, c, p, _ in jobs]
    manifest = BenchmarkManifest(entries, seed, mode, out_dir)
    manifest.write(out_dir / "manifest.csv")
    return manifest


def _build_job(arg):
    (mid, rel, _, _, spec), out_dir = arg
    mesh = generate_figure(spec)
    save_off(TriangleMesh(mesh.vertices, mesh.faces, mid), Path(out_dir) / rel)
    return mid


def is_symmetric(mesh: TriangleMesh, tol: float = 1e-6) -> bool:
    """True when the vertex set is mirror symmetric about x = 0."""
    from scipy.spatial import cKDTree

    mirrored = mesh.vertices * np.array([-1.0, 1.0, 1.0])
    d, _ = cKDTree(mesh.vertices).query(mirrored)
    return bool(d.max() <= tol * max(1.0, np.abs(mesh.vertices).max()))
