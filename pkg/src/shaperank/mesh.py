"""Triangle mesh container, OFF/OBJ I/O, validation, simple intrinsic measures
and edge-collapse decimation."""

from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components


class MeshError(ValueError):
    """Raised for malformed meshes or operations a mesh cannot support."""


class MeshFormatError(MeshError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle surface.

    ``vertices`` is ``(V, 3)`` float64 and ``faces`` is ``(F, 3)`` int64 with
    anticlockwise (outward) winding. Both arrays are made read-only.
    """

    vertices: np.ndarray
    faces: np.ndarray
    name: str = ""

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64, copy=True).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64, copy=True).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise MeshError("vertex positions must be finite")
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                bad = int(np.flatnonzero((f < 0).any(1) | (f >= len(v)).any(1))[0])
                raise MeshError(f"face {bad} references a vertex outside 0..{len(v) - 1}")
            rep = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if rep.any():
                raise MeshError(f"face {int(np.flatnonzero(rep)[0])} repeats a vertex")
        v.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges ``(E, 2)``, smaller index first."""
        return np.unique(self._half_edges_sorted, axis=0)

    @cached_property
    def _half_edges_sorted(self) -> np.ndarray:
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        return np.sort(e, axis=1)

    @cached_property
    def edge_face_counts(self) -> tuple[np.ndarray, np.ndarray]:
        e, counts = np.unique(self._half_edges_sorted, axis=0, return_counts=True)
        return e, counts

    @cached_property
    def closed(self) -> bool:
        """True iff every edge borders exactly two faces."""
        if self.n_faces == 0:
            return False
        _, counts = self.edge_face_counts
        return bool(np.all(counts == 2))

    @cached_property
    def face_normals(self) -> np.ndarray:
        """Unnormalized normals; length is twice the face area."""
        v = self.vertices
        a, b, c = v[self.faces[:, 0]], v[self.faces[:, 1]], v[self.faces[:, 2]]
        return np.cross(b - a, c - a)

    @cached_property
    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_normals, axis=1)

    @cached_property
    def vertex_normals(self) -> np.ndarray:
        """Area-weighted unit vertex normals (zero for isolated vertices)."""
        n = np.zeros_like(self.vertices)
        fn = self.face_normals
        for k in range(3):
            np.add.at(n, self.faces[:, k], fn)
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        """Symmetric vertex adjacency with Euclidean edge lengths as weights."""
        e = self.edges
        w = np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)
        n = self.n_vertices
        a = sparse.coo_matrix((w, (e[:, 0], e[:, 1])), shape=(n, n))
        return (a + a.T).tocsr()

    @cached_property
    def neighbors(self) -> list[np.ndarray]:
        a = self.adjacency
        return [a.indices[a.indptr[i]:a.indptr[i + 1]] for i in range(self.n_vertices)]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices).tobytes())
        h.update(np.ascontiguousarray(self.faces).tobytes())
        return h.hexdigest()

    def transformed(self, rotation=None, translation=None, scale: float = 1.0) -> "TriangleMesh":
        v = self.vertices * scale
        if rotation is not None:
            v = v @ np.asarray(rotation).T
        if translation is not None:
            v = v + np.asarray(translation)
        return TriangleMesh(v, self.faces, self.name)

    def flipped(self) -> "TriangleMesh":
        return TriangleMesh(self.vertices, self.faces[:, ::-1], self.name)


@dataclass(frozen=True)
class MassWeights:
    weights: np.ndarray
    total: float

    def diag(self) -> sparse.dia_matrix:
        return sparse.diags(self.weights)


@dataclass(frozen=True)
class ValidationReport:
    n_vertices: int
    n_edges: int
    n_faces: int
    non_manifold_edges: int
    boundary_edges: int
    degenerate_faces: int
    components: int
    euler_characteristic: int
    closed: bool
    component_sizes: tuple[int, ...] = field(default=())


# --------------------------------------------------------------------------- I/O


def _strip(line: str) -> str:
    return line.split("#", 1)[0].strip()


def _parse_off(text: str, name: str) -> TriangleMesh:
    lines = [(i + 1, _strip(l)) for i, l in enumerate(text.splitlines())]
    lines = [(i, l) for i, l in lines if l]
    if not lines:
        raise MeshFormatError("empty file")
    lineno, head = lines[0]
    tokens = head.split()
    if tokens[0] != "OFF":
        raise MeshFormatError(f"expected 'OFF' header, got {tokens[0]!r}", lineno)
    pos = 1
    if len(tokens) > 1:
        counts = tokens[1:]
    else:
        if len(lines) < 2:
            raise MeshFormatError("missing count line", lineno)
        lineno, cl = lines[1]
        counts = cl.split()
        pos = 2
    try:
        nv, nf = int(counts[0]), int(counts[1])
    except (ValueError, IndexError):
        raise MeshFormatError("malformed 'V F E' count line", lineno) from None
    if nv == 0 or nf == 0:
        raise MeshFormatError("empty mesh (zero vertices or faces)", lineno)
    if len(lines) < pos + nv + nf:
        raise MeshFormatError(f"expected {nv} vertices and {nf} faces, file ends early",
                              lines[-1][0])
    verts = np.empty((nv, 3))
    for k in range(nv):
        lineno, l = lines[pos + k]
        try:
            verts[k] = [float(t) for t in l.split()[:3]]
        except ValueError:
            raise MeshFormatError(f"bad vertex coordinates {l!r}", lineno) from None
    pos += nv
    faces = np.empty((nf, 3), dtype=np.int64)
    for k in range(nf):
        lineno, l = lines[pos + k]
        try:
            t = [int(x) for x in l.split()]
        except ValueError:
            raise MeshFormatError(f"bad face line {l!r}", lineno) from None
        if not t or t[0] != 3 or len(t) < 4:
            raise MeshFormatError(f"face {k}: non-triangular face", lineno)
        idx = t[1:4]
        if min(idx) < 0 or max(idx) >= nv:
            raise MeshFormatError(f"face {k} index out of range 0..{nv - 1}: {idx}", lineno)
        if len(set(idx)) < 3:
            raise MeshFormatError(f"face {k} repeats a vertex: {idx}", lineno)
        faces[k] = idx
    return TriangleMesh(verts, faces, name)


def _parse_obj(text: str, name: str) -> TriangleMesh:
    verts, faces, face_lines = [], [], []
    for i, raw in enumerate(text.splitlines()):
        l = _strip(raw)
        if not l:
            continue
        t = l.split()
        if t[0] == "v":
            try:
                verts.append([float(x) for x in t[1:4]])
            except ValueError:
                raise MeshFormatError(f"bad vertex {l!r}", i + 1) from None
        elif t[0] == "f":
            if len(t) != 4:
                raise MeshFormatError(f"face {len(faces)}: non-triangular face", i + 1)
            try:
                idx = [int(x.split("/")[0]) for x in t[1:]]
            except ValueError:
                raise MeshFormatError(f"bad face {l!r}", i + 1) from None
            faces.append(idx)
            face_lines.append(i + 1)
    if not verts or not faces:
        raise MeshFormatError("empty mesh (no vertices or faces)")
    nv = len(verts)
    f = np.array(faces, dtype=np.int64)
    f = np.where(f < 0, f + nv, f - 1)
    for k, row in enumerate(f):
        if row.min() < 0 or row.max() >= nv:
            raise MeshFormatError(f"face {k} index out of range 1..{nv}", face_lines[k])
        if len(set(row.tolist())) < 3:
            raise MeshFormatError(f"face {k} repeats a vertex", face_lines[k])
    return TriangleMesh(np.array(verts), f, name)


def load_mesh(path, format: str | None = None) -> TriangleMesh:
    """Read an OFF or OBJ triangle mesh. Non-triangular faces are rejected."""
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).upper()
    text = path.read_text()
    if fmt == "OFF":
        return _parse_off(text, path.stem)
    if fmt == "OBJ":
        return _parse_obj(text, path.stem)
    raise MeshFormatError(f"unsupported format {fmt!r} (expected OFF or OBJ)")


def format_off(mesh: TriangleMesh) -> str:
    out = ["OFF", f"{mesh.n_vertices} {mesh.n_faces} 0"]
    out += ["%.10g %.10g %.10g" % tuple(p) for p in mesh.vertices]
    out += ["3 %d %d %d" % tuple(f) for f in mesh.faces]
    return "\n".join(out) + "\n"


def save_off(mesh: TriangleMesh, path) -> None:
    Path(path).write_text(format_off(mesh))


# ---------------------------------------------------------------- measures


def surface_area(mesh: TriangleMesh) -> float:
    """A = 1/2 sum |(b - c) x (a - b)| over faces."""
    v, f = mesh.vertices, mesh.faces
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    return float(0.5 * np.linalg.norm(np.cross(b - c, a - b), axis=1).sum())


def _require_closed(mesh: TriangleMesh, what: str) -> None:
    if not mesh.closed:
        _, counts = mesh.edge_face_counts
        raise MeshError(f"{what} requires a closed mesh; "
                        f"{int(np.sum(counts == 1))} boundary edges found")


def enclosed_volume(mesh: TriangleMesh) -> float:
    """Signed volume (1/6) sum a.(b x c); negative for inward orientation.

    Self-intersections are not resolved.
    """
    _require_closed(mesh, "volume")
    v, f = mesh.vertices, mesh.faces
    # Summing relative to the centroid keeps the sum well conditioned far from the origin.
    o = v.mean(axis=0)
    a, b, c = v[f[:, 0]] - o, v[f[:, 1]] - o, v[f[:, 2]] - o
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def compactness(mesh: TriangleMesh) -> float:
    """Dimensionless V^2 / A^3 using |V|."""
    vol = abs(enclosed_volume(mesh))
    area = surface_area(mesh)
    return vol * vol / area**3


def vertex_mass_weights(mesh: TriangleMesh) -> MassWeights:
    """Barycentric lumping: one third of each incident triangle's area."""
    w = np.zeros(mesh.n_vertices)
    third = mesh.face_areas / 3.0
    for k in range(3):
        np.add.at(w, mesh.faces[:, k], third)
    return MassWeights(w, float(w.sum()))


def validate(mesh: TriangleMesh) -> ValidationReport:
    e, counts = mesh.edge_face_counts
    n = mesh.n_vertices
    if len(e):
        g = sparse.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    else:
        g = sparse.coo_matrix((n, n))
    ncomp, labels = connected_components(g, directed=False)
    sizes = tuple(sorted(np.bincount(labels).tolist(), reverse=True))
    scale = np.ptp(mesh.vertices, axis=0).max() if n else 1.0
    degenerate = int(np.sum(mesh.face_areas <= 1e-14 * max(scale, 1e-300) ** 2))
    return ValidationReport(
        n_vertices=n,
        n_edges=len(e),
        n_faces=mesh.n_faces,
        non_manifold_edges=int(np.sum(counts > 2)),
        boundary_edges=int(np.sum(counts == 1)),
        degenerate_faces=degenerate,
        components=int(ncomp),
        euler_characteristic=n - len(e) + mesh.n_faces,
        closed=mesh.closed,
        component_sizes=sizes,
    )


# -------------------------------------------------------------- decimation


def decimate(mesh: TriangleMesh, target_vertices: int, seed: int | None = None,
             jitter: float = 0.25) -> TriangleMesh:
    """Reduce the vertex count to exactly ``target_vertices`` by edge collapse.

    Edges are collapsed shortest first into their midpoint. A collapse is
    skipped when it would violate the link condition, touch the boundary, or
    flip a neighbouring face, so closed manifold input stays closed and
    manifold. ``seed`` perturbs the collapse priorities multiplicatively by up
    to ``jitter``, giving a different triangulation per seed.
    """
    n = mesh.n_vertices
    if target_vertices < 4:
        raise MeshError("target_vertices must be at least 4")
    if target_vertices >= n:
        raise MeshError(f"target_vertices ({target_vertices}) must be below the current "
                        f"vertex count ({n})")
    rng = np.random.default_rng(seed) if seed is not None else None

    pos = [tuple(p) for p in mesh.vertices.tolist()]
    faces = mesh.faces.tolist()
    face_alive = [True] * len(faces)
    vfaces: list[set[int]] = [set() for _ in range(n)]
    for fi, f in enumerate(faces):
        for v in f:
            vfaces[v].add(fi)
    nbrs: list[set[int]] = [set(nb.tolist()) for nb in mesh.neighbors]

    e, counts = mesh.edge_face_counts
    boundary = np.zeros(n, dtype=bool)
    boundary[e[counts != 2].ravel()] = True
    boundary = boundary.tolist()

    version = [0] * n
    alive = [True] * n
    rng_seed = int(rng.integers(2**31)) if rng is not None else 0

    def priority(a, b):
        pa, pb = pos[a], pos[b]
        p = (pa[0] - pb[0]) ** 2 + (pa[1] - pb[1]) ** 2 + (pa[2] - pb[2]) ** 2
        if rng is not None:
            # Deterministic per edge so re-pushes of the same edge agree.
            p *= 1.0 + jitter * _unit_hash(rng_seed, a, b)
        return p

    def try_collapse(a, b):
        if boundary[a] or boundary[b]:
            return False
        shared = vfaces[a] & vfaces[b]
        if len(shared) != 2 or len(nbrs[a] & nbrs[b]) != 2:
            return False
        pa, pb = pos[a], pos[b]
        mid = ((pa[0] + pb[0]) * 0.5, (pa[1] + pb[1]) * 0.5, (pa[2] + pb[2]) * 0.5)
        for fi in (vfaces[a] | vfaces[b]) - shared:
            f = faces[fi]
            p0, p1, p2 = pos[f[0]], pos[f[1]], pos[f[2]]
            n0 = _tri_normal(p0, p1, p2)
            q = [mid if v == a or v == b else pos[v] for v in f]
            n1 = _tri_normal(q[0], q[1], q[2])
            nb = n0[0] * n0[0] + n0[1] * n0[1] + n0[2] * n0[2]
            na = n1[0] * n1[0] + n1[1] * n1[1] + n1[2] * n1[2]
            dot = n0[0] * n1[0] + n0[1] * n1[1] + n0[2] * n1[2]
            if na <= 1e-24 * nb or dot <= 0.2 * (nb * na) ** 0.5:
                return False
        pos[a] = mid
        for fi in shared:
            face_alive[fi] = False
            for v in faces[fi]:
                vfaces[v].discard(fi)
        for fi in vfaces[b]:
            f = faces[fi]
            f[f.index(b)] = a
            vfaces[a].add(fi)
        vfaces[b] = set()
        for v in nbrs[b]:
            nbrs[v].discard(b)
            if v != a:
                nbrs[v].add(a)
                nbrs[a].add(v)
        nbrs[b] = set()
        alive[b] = False
        version[a] += 1
        return True

    remaining = n
    progress = True
    while remaining > target_vertices and progress:
        progress = False
        heap = [(priority(a, b), a, b, version[a], version[b])
                for a in range(n) if alive[a] for b in nbrs[a] if a < b]
        heapq.heapify(heap)
        while remaining > target_vertices and heap:
            _, a, b, va, vb = heapq.heappop(heap)
            if not (alive[a] and alive[b]) or va != version[a] or vb != version[b]:
                continue
            if not try_collapse(a, b):
                continue
            remaining -= 1
            progress = True
            for v in nbrs[a]:
                x, y = (a, v) if a < v else (v, a)
                heapq.heappush(heap, (priority(x, y), x, y, version[x], version[y]))

    keep = np.flatnonzero(alive)
    remap = -np.ones(n, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    new_faces = np.array([faces[i] for i in range(len(faces)) if face_alive[i]], dtype=np.int64)
    new_pos = np.array([pos[i] for i in keep])
    return TriangleMesh(new_pos, remap[new_faces], mesh.name)


def _tri_normal(p0, p1, p2):
    ux, uy, uz = p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]
    vx, vy, vz = p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]
    return (uy * vz - uz * vy, uz * vx - ux * vz, ux * vy - uy * vx)


def _unit_hash(seed: int, a: int, b: int) -> float:
    """Deterministic hash of (seed, a, b) to [0, 1)."""
    x = (seed * 0x9E3779B1 + a * 0x85EBCA6B + b * 0xC2B2AE35) & 0xFFFFFFFF
    x ^= x >> 16
    x = (x * 0x7FEB352D) & 0xFFFFFFFF
    x ^= x >> 15
    x = (x * 0x846CA68B) & 0xFFFFFFFF
    x ^= x >> 16
    return x / 2**32
