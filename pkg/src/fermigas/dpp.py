"""Finite determinantal point processes: sampling and exact statistics.

A projection process carries an N-by-G feature matrix whose rows are the
weighted eigenfunctions below the Fermi level; chain-rule sampling draws
exactly N nodes.  General symmetric kernels are reduced to random
projections by Bernoulli thinning of their spectral components.  Means,
variances, covariances and Laplace functionals are evaluated exactly as
finite traces and determinants on the same grid the sampler uses.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError

__all__ = [
    "RngState",
    "PointConfiguration",
    "ProjectionDPP",
    "GeneralDPP",
    "from_eigensystem",
    "from_kernel",
    "sample",
    "correlation",
    "laplace_functional",
    "mean_linear_stat",
    "var_linear_stat",
    "cov_linear_stats",
    "soshnikov_remainder",
]


@dataclass(frozen=True)
class RngState:
    """Counter-based RNG state: (seed, counter) pins the sample stream."""

    seed: int
    counter: int = 0
    algorithm: str = "philox4x64"

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        if self.counter < 0:
            raise ValidationError("counter must be nonnegative")
        if self.algorithm != "philox4x64":
            raise ValidationError(f"unknown rng algorithm {self.algorithm!r}")

    def generator(self):
        return np.random.Generator(
            np.random.Philox(key=[int(self.seed), int(self.counter)])
        )

    def stream(self, k):
        """Independent derived stream number k (for parallel Monte Carlo)."""
        return RngState(self.seed, self.counter + 1 + int(k), self.algorithm)


@dataclass
class PointConfiguration:
    """One exact sample: node coordinates plus provenance."""

    points: np.ndarray   # (N, n)
    indices: np.ndarray  # node indices into the process's grid
    seed: int
    counter: int

    def __len__(self):
        return self.points.shape[0]


class ProjectionDPP:
    """Rank-N projection process on grid nodes.

    features[k, i] = sqrt(weight) * v_k(node_i), so the rows are orthonormal
    in plain Euclidean product and K = features^T features is the matrix of
    the weighted projection operator.
    """

    def __init__(self, features, nodes, weight):
        features = np.atleast_2d(np.asarray(features, dtype=float))
        nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
        if features.shape[1] != nodes.shape[0]:
            raise ValidationError("features and nodes disagree on node count")
        if weight <= 0.0:
            raise ValidationError("weight must be positive")
        self.features = features
        self.nodes = nodes
        self.weight = float(weight)
        self._op_matrix = None
        gram = features @ features.T
        resid = np.max(np.abs(gram - np.eye(features.shape[0]))) if features.size else 0.0
        if resid > 1e-8:
            raise ValidationError(
                f"feature rows are not orthonormal (residual {resid:.2e})"
            )

    @property
    def N(self):
        return self.features.shape[0]

    @property
    def node_count(self):
        return self.features.shape[1]

    def intensity(self):
        """Per-node inclusion masses K(x_i, x_i) * weight; sums to N."""
        return np.sum(self.features * self.features, axis=0)

    def op_matrix(self):
        """Dense weighted-operator matrix M = features^T features (cached)."""
        if self._op_matrix is None:
            self._op_matrix = self.features.T @ self.features
        return self._op_matrix

    def kernel_entry(self, i, j):
        """Continuous-kernel value K(x_i, x_j)."""
        return float(self.features[:, i] @ self.features[:, j]) / self.weight


class GeneralDPP:
    """Symmetric-kernel process given by spectral pairs 0 <= q_k <= 1."""

    def __init__(self, q, vectors, nodes, weight):
        self.q = np.asarray(q, dtype=float)
        self.vectors = np.asarray(vectors, dtype=float)  # (G, K), unit columns
        self.nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
        self.weight = float(weight)
        if np.any(self.q < 0.0) or np.any(self.q > 1.0):
            raise ValidationError("spectral weights must lie in [0, 1]")

    @property
    def node_count(self):
        return self.nodes.shape[0]

    def intensity(self):
        return np.sum(self.q[None, :] * self.vectors * self.vectors, axis=1)

    def op_matrix(self):
        return (self.vectors * self.q[None, :]) @ self.vectors.T

    def kernel_entry(self, i, j):
        return float(
            np.sum(self.q * self.vectors[i, :] * self.vectors[j, :])
        ) / self.weight


def from_eigensystem(eigs, mu):
    """Projection DPP of the fermion state filling eigenvalues <= mu."""
    if mu > eigs.mu_cap:
        raise ValidationError(
            f"mu={mu} exceeds the solved cap {eigs.mu_cap}; spectrum incomplete"
        )
    sel = eigs.eigenvalues <= mu
    features = math.sqrt(eigs.grid.weight) * eigs.eigenvectors[:, sel].T
    return ProjectionDPP(
        features, eigs.grid.interior_points(), eigs.grid.weight
    )


def _infer_weight(points):
    pts = np.atleast_2d(points)
    n = pts.shape[1]
    spacings = []
    for k in range(n):
        vals = np.unique(pts[:, k])
        if vals.size < 2:
            continue
        gaps = np.diff(vals)
        if np.max(gaps) - np.min(gaps) > 1e-9 * max(1.0, np.max(np.abs(vals))):
            raise ValidationError(
                "kernel window nodes are not a uniform lattice; "
                "pass the quadrature weight explicitly"
            )
        spacings.append(gaps[0])
    if not spacings:
        raise ValidationError("cannot infer a weight from a single node")
    return float(np.prod(spacings)) if n == len(spacings) else float(
        spacings[0] ** n
    )


def from_kernel(kernel_eval, weight=None):
    """Validate a sampled symmetric kernel as a DPP and diagonalize it.

    The operator matrix is values * weight; eigenvalues are clipped into
    [0, 1] when within 1e-6 of the ends and rejected beyond that.
    """
    xs = kernel_eval.x_points
    ys = kernel_eval.y_points
    if xs.shape != ys.shape or not np.allclose(xs, ys, atol=0.0):
        raise ValidationError("from_kernel needs x_points identical to y_points")
    A = np.asarray(kernel_eval.values, dtype=float)
    if not np.allclose(A, A.T, atol=1e-10):
        raise ValidationError("kernel matrix is not symmetric")
    if weight is None:
        weight = _infer_weight(xs)
    q, U = np.linalg.eigh(0.5 * (A + A.T) * weight)
    if np.min(q) < -1e-6 or np.max(q) > 1.0 + 1e-6:
        raise ValidationError(
            "not a DPP kernel at this discretization: spectrum reaches "
            f"[{np.min(q):.3e}, {np.max(q):.3e}]"
        )
    q = np.clip(q, 0.0, 1.0)
    keep = q > 1e-12
    return GeneralDPP(q[keep], U[:, keep], xs, weight)


def _chain_rule_sample(features, nodes, rng):
    """Draw one configuration of the projection process with rows `features`."""
    phi = np.array(features, dtype=float)  # working copy, rows deflated away
    n_pts = phi.shape[0]
    dens = np.sum(phi * phi, axis=0)
    chosen = np.empty(n_pts, dtype=int)
    for step in range(n_pts):
        total = n_pts - step
        neg = float(np.min(dens))
        if neg < -1e-10:
            raise NumericalError(
                f"conditional density went negative ({neg:.3e}); "
                "kernel is not a valid projection at this discretization"
            )
        probs = np.maximum(dens, 0.0)
        probs /= np.sum(probs)
        i = int(rng.choice(probs.size, p=probs))
        chosen[step] = i
        col = phi[:, i]
        norm = math.sqrt(float(col @ col))
        u = col / norm
        # deflate: remove the span of the chosen node's feature vector
        proj = u @ phi
        phi -= np.outer(u, proj)
        dens = np.maximum(dens - proj * proj, 0.0)
        dens[i] = 0.0
        if step + 1 < n_pts:
            # drop one row to keep the working matrix full-rank: rotate u
            # into the last row, then discard it
            w = u.copy()
            w[-1] -= 1.0
            ww = float(w @ w)
            if ww > 1e-24:
                phi -= (2.0 / ww) * np.outer(w, w @ phi)
            phi = phi[:-1]
    return chosen


def sample(dpp, rng_state):
    """One exact sample; a ProjectionDPP always yields exactly N points."""
    rng = rng_state.generator()
    if isinstance(dpp, ProjectionDPP):
        feats = dpp.features
    elif isinstance(dpp, GeneralDPP):
        keep = rng.random(dpp.q.size) < dpp.q
        feats = dpp.vectors[:, keep].T
    else:
        raise ValidationError(f"not a DPP object: {dpp!r}")
    if feats.shape[0] == 0:
        idx = np.empty(0, dtype=int)
    else:
        idx = _chain_rule_sample(feats, dpp.nodes, rng)
    return PointConfiguration(
        points=dpp.nodes[idx],
        indices=idx,
        seed=rng_state.seed,
        counter=rng_state.counter,
    )


def _nearest_node(dpp, z):
    z = np.asarray(z, dtype=float).reshape(1, -1)
    d2 = np.sum((dpp.nodes - z) ** 2, axis=1)
    return int(np.argmin(d2))


def correlation(dpp, points):
    """k-point correlation det[K(z_i, z_j)] at the nearest grid nodes."""
    idx = [_nearest_node(dpp, z) for z in np.atleast_2d(points)]
    k = len(idx)
    minor = np.empty((k, k))
    for a in range(k):
        for b in range(k):
            minor[a, b] = dpp.kernel_entry(idx[a], idx[b])
    return float(np.linalg.det(minor))


def _as_grid_function(dpp, f):
    vals = np.asarray(f, dtype=float).reshape(-1)
    if vals.size != dpp.node_count:
        raise ValidationError(
            f"grid function has {vals.size} values for {dpp.node_count} nodes"
        )
    return vals


def laplace_functional(dpp, f):
    """E exp(-Xi(f)) = det(I - D_{1-e^{-f}} M) for f >= 0 on the nodes."""
    vals = np.asarray(f, dtype=float).reshape(-1)
    if vals.size != dpp.node_count:
        raise ValidationError(
            f"grid function has {vals.size} values for {dpp.node_count} nodes"
        )
    if np.any(np.isnan(vals)) or np.any(vals < 0.0):
        raise ValidationError("laplace_functional needs f >= 0")
    d = -np.expm1(-vals)  # 1 - e^{-f}, exact at f = +inf
    if isinstance(dpp, ProjectionDPP):
        phi = dpp.features
        small = np.eye(dpp.N) - (phi * d[None, :]) @ phi.T
        return float(np.linalg.det(small))
    root = np.sqrt(dpp.q)
    B = dpp.vectors * root[None, :]
    small = np.eye(dpp.q.size) - (B.T * d[None, :]) @ B
    return float(np.linalg.det(small))


def mean_linear_stat(dpp, f):
    """E Xi(f) = tr(f M)."""
    vals = _as_grid_function(dpp, f)
    return float(vals @ dpp.intensity())


def cov_linear_stats(dpp, f, g):
    """cov(Xi(f), Xi(g)) = tr(g (I - M) f M) = tr(gfM) - tr(gMfM)."""
    fv = _as_grid_function(dpp, f)
    gv = _as_grid_function(dpp, g)
    if isinstance(dpp, ProjectionDPP):
        phi = dpp.features
        A = (phi * fv[None, :]) @ phi.T  # N x N, symmetric
        B = (phi * gv[None, :]) @ phi.T
        return float(fv @ (gv * dpp.intensity()) - np.sum(A * B))
    M = dpp.op_matrix()
    first = float(np.sum(fv * gv * np.diag(M)))
    second = float(np.sum((gv[:, None] * M) * (M * fv[None, :])))
    return first - second


def var_linear_stat(dpp, f, method="trace"):
    """var Xi(f) by one of three exact routes that must agree.

    trace:      tr(f^2 M) - tr(fMfM)
    commutator: 1/2 ||[f, M]||_F^2 + ||f sqrt(M(I-M))||_F^2
    double_sum: 1/2 sum_ij (f_i - f_j)^2 M_ij^2 plus the same residual
    """
    vals = _as_grid_function(dpp, f)
    if method == "trace":
        return cov_linear_stats(dpp, vals, vals)
    M = dpp.op_matrix()
    if method == "double_sum":
        diff = vals[:, None] - vals[None, :]
        comm = 0.5 * float(np.sum(diff * diff * M * M))
    elif method == "commutator":
        C = (vals[:, None] - vals[None, :]) * M
        comm = 0.5 * float(np.sum(C * C))
    else:
        raise ValidationError(f"unknown variance method {method!r}")
    if isinstance(dpp, ProjectionDPP):
        residual = 0.0  # M is an exact projection: M(I - M) = 0
    else:
        B = dpp.vectors * np.sqrt(dpp.q * (1.0 - dpp.q))[None, :]
        residual = float(np.sum((vals[:, None] * B) ** 2))
    return comm + residual


def soshnikov_remainder(dpp, f):
    """Cumulant-expansion remainder of log E e^{Xi(f)} for small f.

    Returns (delta, controlling) where
    delta = |log E e^{Xi(f)} - E Xi(f) - 1/2 var Xi(e^f - 1)| and
    controlling = max(f_+) * var Xi(e^f - 1).
    """
    vals = _as_grid_function(dpp, f)
    if np.max(vals, initial=0.0) > 0.69:
        raise ValidationError("soshnikov_remainder needs max f <= 0.69")
    g = np.expm1(vals)
    if isinstance(dpp, ProjectionDPP):
        phi = dpp.features
        small = np.eye(dpp.N) + (phi * g[None, :]) @ phi.T
    else:
        root = np.sqrt(dpp.q)
        B = dpp.vectors * root[None, :]
        small = np.eye(dpp.q.size) + (B.T * g[None, :]) @ B
    sign, logabs = np.linalg.slogdet(small)
    if sign <= 0.0:
        raise NumericalError("log-Laplace transform is not positive")
    mean = mean_linear_stat(dpp, vals)
    var_g = var_linear_stat(dpp, g)
    delta = abs(float(logabs) - mean - 0.5 * var_g)
    controlling = float(np.max(np.maximum(vals, 0.0), initial=0.0)) * var_g
    return delta, controlling
