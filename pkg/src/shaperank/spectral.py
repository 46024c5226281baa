"""Cotangent Laplace-Beltrami operator, its low spectrum, and the spectral
point signatures and shape descriptors built on it."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .mesh import MassWeights, TriangleMesh, vertex_mass_weights

COT_CLAMP = 1e4


class EigenSolveError(RuntimeError):
    def __init__(self, message: str, residuals=None):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True)
class SpectralBasis:
    """Smallest generalized eigenpairs of (stiffness, lumped mass).

    ``eigenvectors[:, i]`` is mass-orthonormal and ``eigenvalues`` ascend from 0.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    mass: MassWeights

    @property
    def size(self) -> int:
        return len(self.eigenvalues)

    def truncated(self, k: int) -> "SpectralBasis":
        return SpectralBasis(self.eigenvalues[:k], self.eigenvectors[:, :k], self.mass)

    def permuted(self, perm: np.ndarray) -> "SpectralBasis":
        """Basis of the mesh whose vertex ``i`` is our vertex ``perm[i]``."""
        return SpectralBasis(self.eigenvalues, self.eigenvectors[perm],
                             MassWeights(self.mass.weights[perm], self.mass.total))


@dataclass(frozen=True)
class PointSignature:
    method: str
    values: np.ndarray  # (n_vertices, n_samples)
    grid: np.ndarray

    def pooled(self, mass: MassWeights) -> np.ndarray:
        """Mass-weighted mean over vertices."""
        return mass.weights @ self.values / mass.total


# ------------------------------------------------------------------ operator


def cotangent_weights(mesh: TriangleMesh) -> sparse.csr_matrix:
    """Symmetric matrix of edge weights w_uv = (cot a + cot b) / 2."""
    v, f = mesh.vertices, mesh.faces
    n = mesh.n_vertices
    rows, cols, vals = [], [], []
    area2 = np.linalg.norm(np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]]), axis=1)
    live = area2 > 0
    for k in range(3):
        i, j, o = f[:, (k + 1) % 3], f[:, (k + 2) % 3], f[:, k]
        e1, e2 = v[i] - v[o], v[j] - v[o]
        dot = np.einsum("ij,ij->i", e1, e2)
        with np.errstate(divide="ignore", invalid="ignore"):
            cot = np.where(live, dot / np.where(live, area2, 1.0), 0.0)
        cot = np.clip(cot, -COT_CLAMP, COT_CLAMP)
        rows += [i, j]
        cols += [j, i]
        vals += [0.5 * cot, 0.5 * cot]
    w = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n))
    return w.tocsr()


def cotangent_laplacian(mesh: TriangleMesh) -> tuple[sparse.csr_matrix, MassWeights]:
    """Positive semi-definite stiffness matrix L = D - W and lumped mass.

    Rows of L sum to zero, so constants are in its null space.
    """
    if mesh.n_vertices < 4:
        raise ValueError("cotangent Laplacian needs at least 4 vertices")
    w = cotangent_weights(mesh)
    d = np.asarray(w.sum(axis=1)).ravel()
    lap = (sparse.diags(d) - w).tocsr()
    return lap, vertex_mass_weights(mesh)


# ---------------------------------------------------------------- eigensolve


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    out = vecs.copy()
    for k in range(out.shape[1]):
        a = np.abs(out[:, k])
        top = np.flatnonzero(a >= np.quantile(a, 0.9))
        if out[top[0], k] < 0:
            out[:, k] = -out[:, k]
    return out


def eigendecompose(operator: sparse.spmatrix, mass: MassWeights, m: int,
                   tol: float = 1e-8, max_iter: int | None = None) -> SpectralBasis:
    """Smallest ``m + 1`` eigenpairs of ``operator x = lambda M x``.

    Uses shift-invert Lanczos with a deterministic start vector; when ``m + 1``
    is too close to the vertex count for Lanczos, a dense solve is used.
    Lanczos is asked for a buffer of extra pairs because single-vector
    iterations can drop copies of a repeated eigenvalue (symmetric meshes).
    """
    n = operator.shape[0]
    k = m + 1
    if k > n:
        raise ValueError(f"requested {k} eigenpairs from a {n}-vertex operator")
    M = sparse.diags(mass.weights).tocsc()
    want = k
    k = min(n - 2, want + max(8, want // 4))
    if k <= want:
        from scipy.linalg import eigh

        vals, vecs = eigh(operator.toarray(), M.toarray())
        vals, vecs = vals[:k], vecs[:, :k]
    else:
        v0 = np.cos(np.arange(n) * 0.618034 + 0.1) + 1.5
        scale = float(np.mean(operator.diagonal() / np.maximum(mass.weights, 1e-300)))
        sigma = -1e-6 * scale
        cap = max_iter if max_iter is not None else max(10 * m, 100)
        try:
            vals, vecs = splinalg.eigsh(operator.tocsc(), k=k, M=M, sigma=sigma, which="LM",
                                        v0=v0, tol=tol, maxiter=cap)
        except splinalg.ArpackNoConvergence as exc:
            res = None
            if exc.eigenvalues is not None and len(exc.eigenvalues):
                res = np.linalg.norm(operator @ exc.eigenvectors
                                     - (M @ exc.eigenvectors) * exc.eigenvalues, axis=0)
            raise EigenSolveError(f"eigensolver did not converge in {cap} iterations",
                                  res) from None
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
    vals, vecs = vals[:want], vecs[:, :want]
    # Re-normalize against the lumped mass (Lanczos output is close already).
    norms = np.sqrt(np.einsum("i,ij,ij->j", mass.weights, vecs, vecs))
    vecs = vecs / norms
    vals = np.where(np.abs(vals) < 1e-10 * max(abs(vals[-1]), 1e-300), 0.0, vals)
    return SpectralBasis(vals, _fix_signs(vecs), mass)


def mesh_basis(mesh: TriangleMesh, m: int) -> SpectralBasis:
    lap, mass = cotangent_laplacian(mesh)
    return eigendecompose(lap, mass, m)


def basis_cache_key(mesh: TriangleMesh, m: int) -> str:
    return hashlib.sha256(f"{mesh.content_hash()}:{m}".encode()).hexdigest()[:32]


def save_basis(basis: SpectralBasis, path, fmt: str = "npz") -> None:
    path = Path(path)
    if fmt == "npz":
        with open(path, "wb") as fh:
            np.savez(fh, eigenvalues=basis.eigenvalues, eigenvectors=basis.eigenvectors,
                     mass=basis.mass.weights)
    elif fmt == "csv":
        # first row: eigenvalues (mass column left as the total area)
        rows = np.vstack([np.concatenate([[basis.mass.total], basis.eigenvalues]),
                          np.column_stack([basis.mass.weights, basis.eigenvectors])])
        np.savetxt(path, rows, delimiter=",", fmt="%.17g")
    else:
        raise ValueError(f"unknown basis cache format {fmt!r}")


def load_basis(path, fmt: str = "npz") -> SpectralBasis:
    if fmt == "npz":
        with np.load(path) as z:
            w = z["mass"]
            return SpectralBasis(z["eigenvalues"], z["eigenvectors"], MassWeights(w, float(w.sum())))
    rows = np.loadtxt(path, delimiter=",", ndmin=2)
    w = rows[1:, 0]
    return SpectralBasis(rows[0, 1:], rows[1:, 1:], MassWeights(w, float(w.sum())))


def cached_basis(mesh: TriangleMesh, m: int, cache_dir=None, fmt: str = "npz") -> SpectralBasis:
    if cache_dir is None:
        return mesh_basis(mesh, m)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"basis_{basis_cache_key(mesh, m)}.{fmt}"
    if path.exists():
        return load_basis(path, fmt)
    basis = mesh_basis(mesh, m)
    save_basis(basis, path, fmt)
    return basis


# ---------------------------------------------------------------- signatures


def hks_times(lam_1: float, lam_m: float, count: int = 64) -> np.ndarray:
    """Log-spaced times over [4 ln 10 / lam_m, 4 ln 10 / lam_1]."""
    c = 4.0 * np.log(10.0)
    return np.geomspace(c / lam_m, c / lam_1, count)


def hks(basis: SpectralBasis, times=None) -> PointSignature:
    """Heat kernel signature sum_i exp(-lam_i t) phi_i(v)^2."""
    lam, phi = basis.eigenvalues, basis.eigenvectors
    if times is None:
        times = hks_times(lam[1], lam[-1])
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if times.size == 0:
        raise ValueError("times must be nonempty")
    vals = (phi * phi) @ np.exp(-np.outer(lam, times))
    return PointSignature("HKS", vals, times)


def wks(basis: SpectralBasis, energies=100, sigma: float | None = None,
        energy_range: tuple[float, float] | None = None) -> PointSignature:
    """Wave kernel signature over a log-eigenvalue energy grid.

    ``energies`` is a count or an explicit grid. The default grid spans
    [log lam_1, log lam_m] and ``sigma`` defaults to 7 grid steps.
    """
    lam, phi = basis.eigenvalues, basis.eigenvectors
    nz = lam > 0
    if nz.sum() < 2:
        raise ValueError("WKS needs at least two nonzero eigenvalues")
    loglam = np.log(lam[nz])
    if np.ndim(energies) == 0:
        lo, hi = energy_range if energy_range is not None else (loglam[0], loglam[-1])
        grid = np.linspace(lo, hi, int(energies))
    else:
        grid = np.asarray(energies, dtype=float)
    if sigma is None:
        step = (grid[-1] - grid[0]) / max(len(grid) - 1, 1)
        sigma = 7.0 * step
    g = np.exp(-((grid[None, :] - loglam[:, None]) ** 2) / (2 * sigma**2))
    norm = g.sum(axis=0)
    vals = (phi[:, nz] ** 2) @ g / np.where(norm > 0, norm, 1.0)
    return PointSignature("WKS", vals, grid)


SIHKS_TAU = np.arange(1.0, 20.0 + 1e-9, 1.0 / 8.0)


def sihks(basis: SpectralBasis, tau_grid=SIHKS_TAU, num_frequencies: int = 6) -> PointSignature:
    """Scale-invariant HKS: |FFT| of d/dtau log h(2^tau), first frequencies kept."""
    tau = np.asarray(tau_grid, dtype=float)
    steps = np.diff(tau)
    if steps.size and not np.allclose(steps, steps[0]):
        raise ValueError("tau_grid must be uniform")
    h = hks(basis, 2.0**tau).values
    logh = np.log(np.maximum(h, np.finfo(float).tiny))
    d = np.diff(logh, axis=1)
    mag = np.abs(np.fft.fft(d, axis=1))[:, :num_frequencies]
    return PointSignature("SIHKS", mag, np.arange(num_frequencies, dtype=float))


def _spline_kernel(x: np.ndarray, alpha: int = 2, beta: int = 2, x1: float = 1.0,
                   x2: float = 2.0) -> np.ndarray:
    """Cubic spline band-pass wavelet kernel.

    g(x) = x^alpha            for x < 1
           -5 + 11x - 6x^2 + x^3  for 1 <= x <= 2
           4 x^-beta          for x > 2
    (continuous with continuous derivative at the knots for alpha = beta = 2).
    """
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    lo, hi = x < x1, x > x2
    mid = ~(lo | hi)
    out[lo] = x1 ** (-alpha) * x[lo] ** alpha
    xm = x[mid]
    out[mid] = -5 + 11 * xm - 6 * xm**2 + xm**3
    out[hi] = x2**beta * x[hi] ** (-beta)
    return out


def sgws_kernels(lam: np.ndarray, resolution_level: int = 2,
                 lam_range: tuple[float, float] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Filter bank values ``(len(lam), resolution_level + 1)`` and wavelet scales.

    Column 0 is the low-pass scaling function
    h(x) = gamma exp(-(x / (0.6 lam_min))^4), gamma = max g; columns 1.. are
    g(t_j x) with scales t_j geometric between 2/lam_max and 1/lam_min, where
    (lam_min, lam_max) defaults to (lam_1, lam_m).
    """
    if lam_range is None:
        nz = lam[lam > 0]
        lam_min, lam_max = nz[0], nz[-1]
    else:
        lam_min, lam_max = lam_range
    t = np.geomspace(1.0 / lam_min, 2.0 / lam_max, resolution_level)
    gamma = float(_spline_kernel(np.array([2.0 - 3.0**-0.5]))[0])  # kernel maximum
    cols = [gamma * np.exp(-((lam / (0.6 * lam_min)) ** 4))]
    cols += [_spline_kernel(tj * lam) for tj in t]
    return np.column_stack(cols), t


def sgws(basis: SpectralBasis, resolution_level: int = 2,
         lam_range: tuple[float, float] | None = None) -> PointSignature:
    """Spectral graph wavelet signature sum_i g(t, lam_i) phi_i(v)^2."""
    if basis.size < 3:
        raise ValueError("SGWS needs m >= 2")
    lam, phi = basis.eigenvalues, basis.eigenvectors
    g, scales = sgws_kernels(lam, resolution_level, lam_range)
    return PointSignature("SGWS", (phi * phi) @ g, np.concatenate([[0.0], scales]))


# --------------------------------------------------------------- biharmonic


def biharmonic_distance(basis: SpectralBasis, x: int, y: int) -> float:
    lam, phi = basis.eigenvalues[1:], basis.eigenvectors[:, 1:]
    if lam.size == 0:
        raise ValueError("need at least one nonzero eigenvalue")
    d = (phi[x] - phi[y]) / lam
    return float(np.sqrt(d @ d))


@dataclass(frozen=True)
class RBiHDMDescriptor:
    mode: str
    values: np.ndarray
    L: int
    m: int
    mu0: float = 0.0


class NumericalFailure(RuntimeError):
    pass


RBIHDM_DEFAULTS = {"scale_independent": (30, 60), "scale_dependent": (100, 100)}


def biharmonic_operator_matrix(basis: SpectralBasis, m: int) -> np.ndarray:
    """Reduced matrix a_ij = <psi_i, D2[psi_j]> of the squared biharmonic
    distance operator over the first ``m + 1`` eigenfunctions.

    D2[f](x) = g(x) <1, f> + <g, f> - 2 sum_k psi_k(x) <psi_k, f> / lam_k^2,
    with g = sum_k psi_k^2 / lam_k^2; all inner products use the lumped mass.
    """
    if m + 1 > basis.size:
        raise ValueError(f"basis has {basis.size} functions, need {m + 1}")
    w = basis.mass.weights
    psi = basis.eigenvectors[:, : m + 1]
    lam = basis.eigenvalues[1 : m + 1]
    psik = psi[:, 1:]
    g = (psik**2) @ (1.0 / lam**2)
    wpsi = psi * w[:, None]
    ones_f = wpsi.sum(axis=0)  # <1, psi_j>
    g_f = g @ wpsi  # <g, psi_j>
    gram = psi.T @ (psik * w[:, None])  # <psi_i, psi_k>
    a = np.outer(g_f, ones_f) + np.outer(ones_f, g_f) - 2.0 * (gram / lam**2) @ gram.T
    return 0.5 * (a + a.T)


def rbihdm(basis: SpectralBasis, mode: str = "scale_independent", L: int | None = None,
           m: int | None = None) -> RBiHDMDescriptor:
    if mode not in RBIHDM_DEFAULTS:
        raise ValueError(f"mode must be one of {sorted(RBIHDM_DEFAULTS)}")
    dL, dm = RBIHDM_DEFAULTS[mode]
    L = dL if L is None else L
    m = dm if m is None else m
    a = biharmonic_operator_matrix(basis, m)
    mu = np.linalg.eigvalsh(a)
    mu = mu[np.argsort(-np.abs(mu), kind="stable")]
    if not mu[0] > 0:
        raise NumericalFailure(f"leading eigenvalue mu_0 = {mu[0]:.3e} is not positive")
    if mode == "scale_independent":
        vals = mu[1 : L + 1] / mu[0]
    else:
        vals = mu[1 : L + 1]
    return RBiHDMDescriptor(mode, vals, L, m, float(mu[0]))


def standardization(descriptors) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and std of a descriptor set (std of 0 replaced by 1)."""
    x = np.array([getattr(d, "values", d) for d in descriptors], dtype=float)
    sd = x.std(axis=0)
    return x.mean(axis=0), np.where(sd > 0, sd, 1.0)


def rbihdm_distance(a: RBiHDMDescriptor, b: RBiHDMDescriptor, stats) -> float:
    """Euclidean distance after per-dimension standardization by ``stats``."""
    if a.mode != b.mode or a.L != b.L:
        raise ValueError("descriptors differ in mode or length")
    _, sd = stats
    return float(np.linalg.norm((a.values - b.values) / sd))


# -------------------------------------------------------------------- ISPM


def ispm_bins(basis: SpectralBasis, partitions: int, fiedler=None) -> np.ndarray:
    """Bin index per vertex from equal-mass quantiles of the second eigenfunction."""
    phi1 = basis.eigenvectors[:, 1] if fiedler is None else np.asarray(fiedler)
    w = basis.mass.weights
    vals, inverse = np.unique(phi1, return_inverse=True)
    gmass = np.bincount(inverse, weights=w, minlength=len(vals))
    total = gmass.sum()
    mid = np.cumsum(gmass) - 0.5 * gmass
    gbin = np.minimum((partitions * mid / total).astype(np.int64), partitions - 1)
    return gbin[inverse]


def ispm_histogram(basis: SpectralBasis, codes: np.ndarray, partitions: int = 2,
                   fiedler=None) -> np.ndarray:
    """Concatenated per-bin mass-weighted mean code histograms."""
    codes = np.asarray(codes, dtype=float)
    if codes.shape[0] != len(basis.mass.weights):
        raise ValueError("codes must have one row per vertex")
    if partitions < 1:
        raise ValueError("partitions must be >= 1")
    bins = ispm_bins(basis, partitions, fiedler)
    w = basis.mass.weights
    out = []
    for r in range(partitions):
        sel = bins == r
        ws = w[sel]
        tot = ws.sum()
        out.append(ws @ codes[sel] / tot if tot > 0 else np.zeros(codes.shape[1]))
    return np.concatenate(out)


def reverse_bins(h: np.ndarray, partitions: int) -> np.ndarray:
    return np.asarray(h).reshape(partitions, -1)[::-1].ravel()


def ispm_distance(h1: np.ndarray, h2: np.ndarray, partitions: int = 2) -> float:
    """L1 distance minimized over the identity and bin-reversed orderings of h2."""
    h1, h2 = np.asarray(h1, float), np.asarray(h2, float)
    if h1.shape != h2.shape or h1.size % partitions:
        raise ValueError("histograms must have equal length divisible by partitions")
    d0 = np.abs(h1 - h2).sum()
    d1 = np.abs(h1 - reverse_bins(h2, partitions)).sum()
    return float(min(d0, d1))
