"""Discretized Schrodinger operator -hbar^2 Laplacian + V and its projector.

A truncated box with Dirichlet boundary carries a second-order central
difference Hamiltonian.  Eigenpairs below an energy cap feed the spectral
projector, whose kernel can be rescaled microscopically around any interior
point.  Agmon-weighted norms quantify how strongly eigenfunctions stick to
the classically allowed region.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.linalg import eigh_tridiagonal
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .errors import NumericalError, ValidationError
from .kernels import KernelEvaluation, KernelKind
from .potential import droplet_half_width

__all__ = [
    "Grid",
    "EigenSystem",
    "ProjectorKernel",
    "choose_box",
    "assemble_hamiltonian",
    "eigensolve",
    "projector_kernel",
    "rescaled_kernel",
    "edge_rotation",
    "agmon_check",
]


@dataclass(frozen=True)
class Grid:
    """Tensor lattice on [-L, L]^n; eigenproblems live on the interior nodes."""

    dimension: int
    half_width: float
    points_per_axis: int

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValidationError("grid dimension must be 1 or 2")
        if self.half_width <= 0.0:
            raise ValidationError("grid half_width must be positive")
        if self.points_per_axis < 3:
            raise ValidationError("points_per_axis must be at least 3")

    @property
    def spacing(self):
        return 2.0 * self.half_width / (self.points_per_axis - 1)

    @property
    def weight(self):
        """Quadrature weight of one node, spacing^n."""
        return self.spacing ** self.dimension

    @property
    def axis(self):
        return np.linspace(
            -self.half_width, self.half_width, self.points_per_axis
        )

    @property
    def interior_axis(self):
        return self.axis[1:-1]

    @property
    def interior_count(self):
        return (self.points_per_axis - 2) ** self.dimension

    def interior_points(self):
        """Interior nodes as an (m, n) array, x1-major ordering."""
        ax = self.interior_axis
        if self.dimension == 1:
            return ax[:, None]
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])


def choose_box(V, M, margin):
    """Smallest half-width on a 0.5-lattice that safely contains {V <= M}.

    The box must dominate the droplet of level M + margin and satisfy
    V >= M + margin everywhere on its boundary, so that the Dirichlet
    truncation cannot disturb spectra below M.
    """
    level = M + margin
    inner = droplet_half_width(V, level)  # raises when unconfined
    n = V.dimension
    L = 0.5 * max(1.0, math.ceil(inner / 0.5))
    while L <= 64.0:
        if L >= inner and _boundary_min(V, L, n) >= level:
            return L
        L += 0.5
    raise ValidationError(
        f"no box with boundary above {level} found out to half-width 64"
    )


def _boundary_min(V, L, n):
    if n == 1:
        pts = np.array([[-L], [L]])
        return float(np.min(V(pts)))
    t = np.linspace(-L, L, 257)
    edges = [
        np.column_stack([np.full_like(t, -L), t]),
        np.column_stack([np.full_like(t, L), t]),
        np.column_stack([t, np.full_like(t, -L)]),
        np.column_stack([t, np.full_like(t, L)]),
    ]
    return float(min(np.min(V(e)) for e in edges))


def assemble_hamiltonian(V, hbar, grid):
    """Sparse -hbar^2 (central-difference Laplacian) + diag(V) on the interior."""
    if hbar <= 0.0:
        raise ValidationError("hbar must be positive")
    h = grid.spacing
    mi = grid.points_per_axis - 2
    c = hbar * hbar / (h * h)
    lap1 = sp.diags(
        [
            -c * np.ones(mi - 1),
            2.0 * c * np.ones(mi),
            -c * np.ones(mi - 1),
        ],
        offsets=(-1, 0, 1),
        format="csr",
    )
    if grid.dimension == 1:
        kinetic = lap1
    else:
        eye = sp.identity(mi, format="csr")
        kinetic = sp.kron(lap1, eye) + sp.kron(eye, lap1)
    pot = V(grid.interior_points())
    return (kinetic + sp.diags(pot)).tocsr()


@dataclass
class EigenSystem:
    """All eigenpairs with eigenvalue at most mu_cap, weighted-orthonormal."""

    hbar: float
    mu_cap: float
    eigenvalues: np.ndarray       # ascending, all <= mu_cap
    eigenvectors: np.ndarray      # column k: v_k on interior nodes
    grid: Grid

    def to_csv(self, include_vectors=False):
        lines = [
            f"# hbar={self.hbar:.17g}",
            f"# mu_cap={self.mu_cap:.17g}",
            "k,eigenvalue",
        ]
        for k, lam in enumerate(self.eigenvalues):
            lines.append(f"{k},{lam:.17g}")
        if include_vectors:
            lines.append("# eigenvectors (node-major, one column per k)")
            for row in self.eigenvectors:
                lines.append(",".join(f"{v:.17g}" for v in row))
        return "\n".join(lines) + "\n"


def _fix_signs(vecs):
    # Lanczos returns eigenvectors up to sign; pin each one for reproducibility
    for k in range(vecs.shape[1]):
        idx = np.argmax(np.abs(vecs[:, k]))
        if vecs[idx, k] < 0.0:
            vecs[:, k] = -vecs[:, k]
    return vecs


def eigensolve(H, cap, grid, hbar, max_lanczos=6):
    """All eigenpairs of H with eigenvalue <= cap, weighted-orthonormalized.

    n=1 uses the direct tridiagonal subset-by-value solver; n=2 runs
    shift-inverted Lanczos below the spectrum, enlarging the block until the
    whole window [min, cap] is certified captured.
    """
    m = H.shape[0]
    if grid.interior_count != m:
        raise ValidationError("grid does not match the Hamiltonian size")
    if grid.dimension == 1:
        d = H.diagonal().astype(float)
        e = np.asarray(H.diagonal(1), dtype=float)
        lo = float(np.min(d)) - 2.0 * float(np.max(np.abs(e), initial=0.0)) - 1.0
        if lo >= cap:
            vals = np.empty(0)
            vecs = np.empty((m, 0))
        else:
            vals, vecs = eigh_tridiagonal(
                d, e, select="v", select_range=(lo, cap)
            )
    else:
        row_abs = np.asarray(np.abs(H).sum(axis=1)).ravel()
        diag = H.diagonal()
        gersh_lo = float(np.min(diag - (row_abs - np.abs(diag))))
        sigma = gersh_lo - 1.0
        k = min(m - 1, 16)
        vals = vecs = None
        for _ in range(max_lanczos):
            try:
                w, u = eigsh(H, k=k, sigma=sigma, which="LM")
            except ArpackNoConvergence as exc:
                raise NumericalError(
                    f"Lanczos failed to converge at block size {k}: {exc}"
                ) from exc
            order = np.argsort(w)
            w = w[order]
            u = u[:, order]
            if w[-1] > cap or k >= m - 1:
                keep = w <= cap
                vals, vecs = w[keep], u[:, keep]
                break
            k = min(m - 1, 2 * k)
        if vals is None:
            raise NumericalError(
                "eigensolve could not certify capturing all eigenvalues "
                f"below {cap}; spectrum still inside the window at k={k}"
            )
    vecs = np.ascontiguousarray(vecs, dtype=float)
    # solver gives unit Euclidean columns; rescale to the weighted product
    vecs = vecs / math.sqrt(grid.weight)
    return EigenSystem(
        hbar=float(hbar),
        mu_cap=float(cap),
        eigenvalues=np.asarray(vals, dtype=float),
        eigenvectors=_fix_signs(vecs),
        grid=grid,
    )


@dataclass
class ProjectorKernel:
    """Rank-N spectral projector onto eigenvalues at most mu.

    mu is the effective Fermi level: when the requested level fell within
    1e-9 of an eigenvalue it has been nudged to the midpoint of the
    surrounding spectral gap to keep N stable.
    """

    eigs: EigenSystem
    mu: float
    N: int
    _matrix: np.ndarray = field(default=None, repr=False)

    def matrix(self):
        """Dense kernel values Pi(x_i, x_j) on interior nodes (cached)."""
        if self._matrix is None:
            sel = self.eigs.eigenvectors[:, : self.N]
            self._matrix = sel @ sel.T
        return self._matrix

    def trace(self):
        """Weighted diagonal sum; equals N by orthonormality."""
        sel = self.eigs.eigenvectors[:, : self.N]
        return float(np.sum(sel * sel) * self.eigs.grid.weight)


def projector_kernel(eigs, mu):
    if mu > eigs.mu_cap:
        raise ValidationError(
            f"mu={mu} exceeds the solved cap {eigs.mu_cap}; spectrum incomplete"
        )
    lam = eigs.eigenvalues
    if lam.size and np.min(np.abs(lam - mu)) < 1e-9:
        below = lam <= mu + 1e-9
        k_top = int(np.nonzero(below)[0][-1])
        upper = lam[k_top + 1] if k_top + 1 < lam.size else eigs.mu_cap
        mu = 0.5 * (lam[k_top] + upper)
    N = int(np.count_nonzero(lam <= mu))
    return ProjectorKernel(eigs=eigs, mu=float(mu), N=N)


def _interpolator(eigs, columns):
    grid = eigs.grid
    mi = grid.points_per_axis - 2
    K = columns.shape[1]
    if grid.dimension == 1:
        padded = np.zeros((mi + 2, K))
        padded[1:-1, :] = columns
        return RegularGridInterpolator(
            (grid.axis,), padded, method="linear", bounds_error=True
        )
    padded = np.zeros((mi + 2, mi + 2, K))
    padded[1:-1, 1:-1, :] = columns.reshape(mi, mi, K)
    return RegularGridInterpolator(
        (grid.axis, grid.axis), padded, method="linear", bounds_error=True
    )


def rescaled_kernel(pk, x0, eps, U, x_list, y_list):
    """eps^n Pi(x0 + eps U^T x, x0 + eps U^T y) on the probe rectangle.

    Eigenfunctions are interpolated bilinearly between grid nodes, so probe
    spacings should stay a few grid spacings wide.  Probes outside the box
    raise.
    """
    grid = pk.eigs.grid
    n = grid.dimension
    if eps <= 0.0:
        raise ValidationError("eps must be positive")
    U = np.asarray(U, dtype=float)
    if U.shape != (n, n) or not np.allclose(U @ U.T, np.eye(n), atol=1e-10):
        raise ValidationError("U must be an orthogonal n-by-n matrix")
    x0 = np.asarray(x0, dtype=float).reshape(n)
    xs = np.atleast_2d(np.asarray(x_list, dtype=float))
    ys = np.atleast_2d(np.asarray(y_list, dtype=float))
    px = x0[None, :] + eps * xs @ U  # rows: x0 + eps U^T x
    py = x0[None, :] + eps * ys @ U
    L = grid.half_width
    if np.max(np.abs(px)) > L or np.max(np.abs(py)) > L:
        raise ValidationError("a rescaled probe point lies outside the box")
    params = {"hbar": pk.eigs.hbar, "mu": pk.mu, "eps": float(eps)}
    for k in range(n):
        params[f"x0_{k + 1}"] = float(x0[k])
    if pk.N == 0:
        values = np.zeros((xs.shape[0], ys.shape[0]))
        return KernelEvaluation(
            KernelKind.PROJECTOR, n, params, xs, ys, values
        )
    interp = _interpolator(pk.eigs, pk.eigs.eigenvectors[:, : pk.N])
    A = interp(px if n == 2 else px[:, 0])
    B = interp(py if n == 2 else py[:, 0])
    values = (eps ** n) * (A @ B.T)
    return KernelEvaluation(KernelKind.PROJECTOR, n, params, xs, ys, values)


def edge_rotation(grad):
    """Special-orthogonal U with U grad = |grad| e_1."""
    g = np.asarray(grad, dtype=float).reshape(-1)
    norm = float(np.linalg.norm(g))
    if norm == 0.0:
        raise ValidationError("edge_rotation requires a nonzero gradient")
    n = g.size
    if n == 1:
        return np.array([[1.0]]) if g[0] > 0 else np.array([[-1.0]])
    u = g / norm
    w = u - np.eye(n)[0]
    if np.dot(w, w) < 1e-28:
        return np.eye(n)
    Hh = np.eye(n) - 2.0 * np.outer(w, w) / np.dot(w, w)
    Hh[-1, :] = -Hh[-1, :]  # flip one row: reflection becomes a rotation
    return Hh


def _min_distances(points, targets, chunk=2048):
    """Euclidean distance from each point to the nearest target, chunked."""
    out = np.empty(points.shape[0])
    for start in range(0, points.shape[0], chunk):
        block = points[start : start + chunk]
        d2 = (
            np.sum(block * block, axis=1)[:, None]
            - 2.0 * block @ targets.T
            + np.sum(targets * targets, axis=1)[None, :]
        )
        out[start : start + chunk] = np.sqrt(np.maximum(d2.min(axis=1), 0.0))
    return out


@dataclass
class AgmonReport:
    delta: float
    bound: float                 # 1 + 2 mu / delta
    eigenvalues: np.ndarray
    norms: np.ndarray            # weighted norm of e^{f_delta/hbar} v_k


def agmon_check(eigs, V, mu, delta):
    """Weighted norms of e^{f_delta/hbar} v_k for every eigenvalue <= mu.

    f_delta(x) = delta * dist(x, {V <= mu + delta}) with the distance taken
    to the nearest grid node of the sublevel set (exhaustive search).
    """
    if not 0.0 < delta <= 1.0:
        raise ValidationError("delta must lie in (0, 1]")
    if mu + delta > eigs.mu_cap + 1e-12:
        raise ValidationError("agmon_check needs mu <= mu_cap - delta")
    pts = eigs.grid.interior_points()
    inside = V(pts) <= mu + delta
    if not np.any(inside):
        raise ValidationError("the sublevel set {V <= mu + delta} misses the grid")
    f = delta * _min_distances(pts, pts[inside])
    sel = eigs.eigenvalues <= mu
    lam = eigs.eigenvalues[sel]
    vecs = eigs.eigenvectors[:, sel]
    weighted = np.exp(f / eigs.hbar)[:, None] * vecs
    norms = np.sqrt(np.sum(weighted * weighted, axis=0) * eigs.grid.weight)
    return AgmonReport(
        delta=float(delta),
        bound=1.0 + 2.0 * mu / delta,
        eigenvalues=lam,
        norms=norms,
    )
