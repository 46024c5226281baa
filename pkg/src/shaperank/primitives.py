"""Small analytic meshes used for calibration and tests."""

from __future__ import annotations

import numpy as np

from .mesh import TriangleMesh


def unit_cube() -> TriangleMesh:
    v = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)
    # index = 4x + 2y + z
    quads = [
        (0, 1, 3, 2),  # x = 0
        (4, 6, 7, 5),  # x = 1
        (0, 4, 5, 1),  # y = 0
        (2, 3, 7, 6),  # y = 1
        (0, 2, 6, 4),  # z = 0
        (1, 5, 7, 3),  # z = 1
    ]
    f = []
    for a, b, c, d in quads:
        f += [(a, b, c), (a, c, d)]
    return TriangleMesh(v, np.array(f), "cube")


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriangleMesh:
    t = (1.0 + 5**0.5) / 2.0
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
         (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
         (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
         (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
         (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
         (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, float) / np.linalg.norm(p) for p in v]
    faces = f
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return TriangleMesh(np.array(verts) * radius, np.array(faces), f"icosphere{subdivisions}")


def grid(n: int = 10, size: float = 1.0) -> TriangleMesh:
    """Flat open square grid in the z = 0 plane."""
    xs = np.linspace(0.0, size, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    v = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    f = []
    for i in range(n):
        for j in range(n):
            a, b, c, d = idx[i, j], idx[i + 1, j], idx[i + 1, j + 1], idx[i, j + 1]
            f += [(a, b, c), (a, c, d)]
    return TriangleMesh(v, np.array(f), "grid")


def capsule(radius: float = 1.0, length: float = 2.0, n_around: int = 32,
            n_along: int = 16, n_cap: int = 8, bend: float = 0.0) -> TriangleMesh:
    """Closed capsule along z: cylinder of ``length`` plus hemispherical caps.

    ``bend`` curves the centerline into a circular arc of total turning
    angle ``bend`` (radians) while keeping its length.
    """
    # Profile rings: (z along axis, ring radius)
    rings = []
    for k in range(1, n_cap + 1):
        th = -np.pi / 2 + k * (np.pi / 2) / n_cap
        rings.append((-length / 2 + radius * np.sin(th), radius * np.cos(th)))
    for k in range(1, n_along):
        rings.append((-length / 2 + length * k / n_along, radius))
    for k in range(0, n_cap):
        th = k * (np.pi / 2) / n_cap
        rings.append((length / 2 + radius * np.sin(th), radius * np.cos(th)))
    phi = np.linspace(0, 2 * np.pi, n_around, endpoint=False)
    verts = [np.array([0.0, 0.0, -length / 2 - radius])]
    for z, r in rings:
        for p in phi:
            verts.append(np.array([r * np.cos(p), r * np.sin(p), z]))
    verts.append(np.array([0.0, 0.0, length / 2 + radius]))
    verts = np.array(verts)
    nr = len(rings)
    f = []
    for j in range(n_around):
        f.append((0, 1 + (j + 1) % n_around, 1 + j))
    for i in range(nr - 1):
        base0, base1 = 1 + i * n_around, 1 + (i + 1) * n_around
        for j in range(n_around):
            j1 = (j + 1) % n_around
            f += [(base0 + j, base0 + j1, base1 + j1), (base0 + j, base1 + j1, base1 + j)]
    top = len(verts) - 1
    last = 1 + (nr - 1) * n_around
    for j in range(n_around):
        f.append((top, last + j, last + (j + 1) % n_around))
    if bend:
        verts = _bend_z(verts, length, bend)
    return TriangleMesh(verts, np.array(f), "capsule")


def _bend_z(v: np.ndarray, length: float, angle: float) -> np.ndarray:
    """Bend the z axis on [-L/2, L/2] into an arc in the x-z plane, caps rigidly."""
    rho = length / angle
    out = v.copy()
    z = np.clip(v[:, 2], -length / 2, length / 2)
    dz = v[:, 2] - z
    th = z / rho
    cx = rho - (rho - v[:, 0]) * np.cos(th)
    cz = (rho - v[:, 0]) * np.sin(th)
    # tangent direction for the cap overhang
    tx, tz = np.sin(th), np.cos(th)
    out[:, 0] = cx + dz * tx
    out[:, 2] = cz + dz * tz
    return out


def cylinder(radius: float = 1.0, height: float = 4.0, n_around: int = 48,
             n_along: int = 48) -> TriangleMesh:
    """Open cylinder tube along z (no caps)."""
    phi = np.linspace(0, 2 * np.pi, n_around, endpoint=False)
    zs = np.linspace(-height / 2, height / 2, n_along + 1)
    v = np.array([[radius * np.cos(p), radius * np.sin(p), z] for z in zs for p in phi])
    f = []
    for i in range(n_along):
        for j in range(n_around):
            a = i * n_around + j
            b = i * n_around + (j + 1) % n_around
            c = b + n_around
            d = a + n_around
            f += [(a, b, c), (a, c, d)]
    return TriangleMesh(v, np.array(f), "cylinder")
