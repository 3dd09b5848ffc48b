"""Experiment drivers that turn the limit theorems into desk-scale checks.

Each driver assembles the operator pipeline for a list of semiclassical
parameters, runs the comparison prescribed by the corresponding theorem
(Weyl count, bulk/edge kernel convergence, Wasserstein law of large
numbers, Gaussian tails, variance asymptotics, H^{1/2} seminorm duality,
Monte-Carlo central limit behaviour) and returns an ExperimentReport whose
CSV form is reproducible bit for bit from the parameters and the seed.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid, quad, trapezoid
from scipy.signal import fftconvolve
from scipy.special import j1 as _scipy_j1
from scipy.stats import kstest

from . import __version__
from .dpp import (
    RngState,
    from_eigensystem,
    mean_linear_stat,
    sample,
    var_linear_stat,
)
from .errors import ValidationError
from .kernels import (
    bulk_kernel,
    bulk_scale,
    density_of_states,
    edge_kernel,
    edge_scale,
    weyl_constant,
)
from .potential import droplet_half_width, grad_potential, parse_potential
from .schrodinger import (
    Grid,
    assemble_hamiltonian,
    choose_box,
    edge_rotation,
    eigensolve,
    projector_kernel,
    rescaled_kernel,
)
from .specfun import bessel_j, unit_ball_volume

__all__ = [
    "TestFunction",
    "ExperimentReport",
    "weyl_check",
    "bulk_convergence",
    "edge_convergence",
    "lln_wasserstein",
    "gaussian_tail_check",
    "free_variance_exact",
    "free_variance_bruteforce",
    "free_variance_asymptotic",
    "sigma_n_squared",
    "sigma_fourier",
    "sigma_slobodeckij",
    "mesoscopic_variance_scan",
    "clt_monte_carlo",
]

# |g| is treated as zero outside the support radius once it drops below this
_SUPPORT_FLOOR = 1e-12


def _smooth_step(u):
    """C-infinity ramp equal to 1 for u <= 0 and 0 for u >= 1."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    out[u <= 0.0] = 1.0
    mid = (u > 0.0) & (u < 1.0)
    if np.any(mid):
        um = u[mid]
        a = np.exp(-1.0 / (1.0 - um))
        b = np.exp(-1.0 / um)
        out[mid] = a / (a + b)
    return out


class TestFunction:
    """Smooth test function with effectively compact support.

    Three kinds are supported:

    * ``gaussian_bump(center, width)``: exp(-|x - c|^2 / (2 width^2));
    * ``smooth_indicator(center, radius, smoothing)``: a C-infinity plateau,
      1 inside |x - c| <= radius, 0 outside radius + smoothing;
    * ``custom(expr, support_radius)``: any parsed expression together with
      a radius outside which it is declared negligible.
    """

    __test__ = False  # not a pytest case despite the name

    def __init__(self, kind, dimension, center, params):
        if dimension not in (1, 2):
            raise ValidationError("test functions support dimension 1 or 2")
        self.kind = kind
        self.dimension = int(dimension)
        self.center = np.asarray(center, dtype=float).reshape(self.dimension)
        self.params = dict(params)

    @classmethod
    def gaussian_bump(cls, dimension, center=0.0, width=1.0):
        if width <= 0.0:
            raise ValidationError("gaussian bump needs width > 0")
        return cls("gaussian_bump", dimension, center, {"width": float(width)})

    @classmethod
    def smooth_indicator(cls, dimension, center=0.0, radius=1.0, smoothing=0.5):
        if radius <= 0.0 or smoothing <= 0.0:
            raise ValidationError(
                "smooth indicator needs radius > 0 and smoothing > 0"
            )
        return cls(
            "smooth_indicator",
            dimension,
            center,
            {"radius": float(radius), "smoothing": float(smoothing)},
        )

    @classmethod
    def custom(cls, expr, support_radius):
        if support_radius <= 0.0:
            raise ValidationError("custom test function needs support_radius > 0")
        if isinstance(expr, str):
            expr = parse_potential(expr)
        return cls(
            "custom",
            expr.dimension,
            np.zeros(expr.dimension),
            {"expr": expr, "support_radius": float(support_radius)},
        )

    def support_radius(self):
        """Radius around the center beyond which |g| <= 1e-12."""
        if self.kind == "gaussian_bump":
            return self.params["width"] * math.sqrt(
                -2.0 * math.log(_SUPPORT_FLOOR)
            )
        if self.kind == "smooth_indicator":
            return self.params["radius"] + self.params["smoothing"]
        return self.params["support_radius"]

    def bounding_radius(self):
        """Radius of a centered-at-origin box containing the support."""
        return float(np.linalg.norm(self.center)) + self.support_radius()

    def rescale(self, x0, eps):
        """The test function x -> g((x - x0) / eps)."""
        if eps <= 0.0:
            raise ValidationError("rescale needs eps > 0")
        x0 = np.asarray(x0, dtype=float).reshape(self.dimension)
        if self.kind == "gaussian_bump":
            return TestFunction.gaussian_bump(
                self.dimension,
                x0 + eps * self.center,
                eps * self.params["width"],
            )
        if self.kind == "smooth_indicator":
            return TestFunction.smooth_indicator(
                self.dimension,
                x0 + eps * self.center,
                eps * self.params["radius"],
                eps * self.params["smoothing"],
            )
        raise ValidationError("rescale supports the gaussian and indicator kinds")

    def fourier_sq_profile(self):
        """Radial |ghat|^2 in the unitary convention, or None.

        Only the gaussian bump has a closed form here: the modulus is
        independent of the center and equals width^{2n} exp(-width^2 rho^2).
        """
        if self.kind != "gaussian_bump":
            return None
        w = self.params["width"]
        n = self.dimension

        def profile(rho):
            return w ** (2 * n) * np.exp(-(w * rho) ** 2)

        return profile

    def __call__(self, points):
        pts = np.asarray(points, dtype=float)
        scalar = pts.ndim == 0
        if scalar:
            pts = pts.reshape(1, 1)
        elif pts.ndim == 1:
            if self.dimension == 1:
                pts = pts.reshape(-1, 1)
            else:
                scalar = True
                pts = pts.reshape(1, -1)
        if pts.ndim != 2 or pts.shape[1] != self.dimension:
            raise ValidationError(
                f"expected points in dimension {self.dimension}"
            )
        if self.kind == "custom":
            vals = np.asarray(self.params["expr"](pts), dtype=float)
        else:
            r = np.sqrt(np.sum((pts - self.center[None, :]) ** 2, axis=1))
            if self.kind == "gaussian_bump":
                w = self.params["width"]
                vals = np.exp(-0.5 * (r / w) ** 2)
            else:
                u = (r - self.params["radius"]) / self.params["smoothing"]
                vals = _smooth_step(u)
        return float(vals[0]) if scalar else vals


@dataclass
class ExperimentReport:
    """Parameter rows plus observed/reference values for one experiment.

    The CSV form carries the experiment id, all parameters and the seed in
    '#' header lines; the wall time is kept on the object only, so that the
    serialized report is a pure function of (parameters, seed).
    """

    experiment: str
    columns: tuple
    rows: list
    params: dict = field(default_factory=dict)
    seed: int = None
    wall_time: float = 0.0

    def column(self, name):
        if name not in self.columns:
            raise ValidationError(f"report has no column {name!r}")
        k = tuple(self.columns).index(name)
        return np.array([row[k] for row in self.rows], dtype=float)

    def to_csv(self):
        lines = [f"# experiment={self.experiment}"]
        for key in sorted(self.params):
            lines.append(f"# {key}={_format_value(self.params[key])}")
        if self.seed is not None:
            lines.append(f"# seed={int(self.seed)}")
        lines.append(f"# fermigas={__version__}")
        lines.append(",".join(self.columns))
        for row in self.rows:
            lines.append(",".join(_format_value(v) for v in row))
        return "\n".join(lines) + "\n"


def _format_value(v):
    if isinstance(v, float):
        return "%.17g" % v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _map_trials(worker, trials, threads):
    """Run worker(0..trials-1), merged in index order regardless of pool."""
    if threads is None or threads <= 1:
        return [worker(t) for t in range(trials)]
    with ThreadPoolExecutor(max_workers=int(threads)) as pool:
        return list(pool.map(worker, range(trials)))


# ---------------------------------------------------------------------------
# operator pipeline helpers


def _solve_window(V, mu, hbar, margin=1.0, c_h=2.0, min_points=201):
    """Eigensystem of the boxed operator with all levels <= mu.

    The grid spacing follows c_h * hbar^{3/2}: the finite-difference
    eigenvalue defect then stays an O(hbar) fraction of the level spacing,
    which the convergence drivers need so the discretization error scales
    with the same power as the semiclassical one.
    """
    if hbar <= 0.0:
        raise ValidationError("hbar must be positive")
    L = choose_box(V, mu, margin)
    target = c_h * hbar ** 1.5
    ppa = max(int(math.ceil(2.0 * L / target)) + 1, min_points)
    grid = Grid(V.dimension, L, ppa)
    H = assemble_hamiltonian(V, hbar, grid)
    return eigensolve(H, mu, grid, hbar), grid


def _value_at(V, x0):
    pt = np.asarray(x0, dtype=float).reshape(1, -1)
    return float(V(pt)[0])


# ---------------------------------------------------------------------------
# Weyl law


def weyl_check(V, mu, hbar_list, margin=1.0, c_h=2.0):
    """Count eigenvalues below mu and compare with the phase-space volume.

    Rows are (hbar, count, hbar_count, scaled_count, deviation) where
    hbar_count is hbar^n N, scaled_count is hbar^n N (2 pi)^n / (omega_n Z)
    and Z integrates (mu - V)_+^{n/2}; the scaled count tends to 1 as hbar
    goes to 0.
    """
    t0 = time.perf_counter()
    n = V.dimension
    Z = weyl_constant(V, mu, n)
    norm = unit_ball_volume(n) * Z / (2.0 * math.pi) ** n
    rows = []
    for hbar in hbar_list:
        eigs, _ = _solve_window(V, mu, hbar, margin=margin, c_h=c_h)
        count = int(np.sum(eigs.eigenvalues <= mu))
        if norm > 0.0:
            scaled = hbar ** n * count / norm
            deviation = scaled - 1.0
        else:
            scaled = math.nan
            deviation = math.nan
        rows.append((float(hbar), count, hbar ** n * count, scaled, deviation))
    report = ExperimentReport(
        "weyl_check",
        ("hbar", "count", "hbar_count", "scaled_count", "deviation"),
        rows,
        params={"potential": V.to_text(), "mu": float(mu), "weyl_constant": Z},
    )
    report.wall_time = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------------------
# bulk and edge convergence


def _snap_probes(grid, x0_coord, eps, targets):
    """Move probe offsets so the physical points land on grid nodes.

    Interpolation between nodes is only first order, which would pollute the
    convergence rates; on the nodes the rescaled kernel is exact.
    """
    ax = grid.interior_axis
    phys = x0_coord + eps * np.asarray(targets, dtype=float)
    idx = np.round((phys - ax[0]) / grid.spacing).astype(int)
    idx = np.clip(idx, 0, ax.size - 1)
    return np.unique((ax[idx] - x0_coord) / eps)


def bulk_convergence(
    V, mu, x0, hbar_list, window=(-2.0, 2.0), probes=17, margin=1.0, c_h=2.0
):
    """Sup-distance between the rescaled projector and the bulk kernel.

    Rows are (hbar, eps, sup_error, ratio) with ratio the quotient of
    successive sup errors; the expected decay is first order in hbar.
    """
    t0 = time.perf_counter()
    if V.dimension != 1:
        raise ValidationError(
            "bulk_convergence runs the n=1 pipeline; higher dimensions use "
            "the analytic free-Laplacian kernels"
        )
    x0c = float(np.asarray(x0, dtype=float).reshape(-1)[0])
    V_x0 = _value_at(V, x0c)
    if not V_x0 < mu:
        raise ValidationError("bulk_convergence requires V(x0) < mu")
    rows = []
    prev_err = None
    for hbar in hbar_list:
        eigs, grid = _solve_window(V, mu, hbar, margin=margin, c_h=c_h)
        pk = projector_kernel(eigs, mu)
        eps = bulk_scale(hbar, V_x0, mu, 1)
        us = _snap_probes(grid, x0c, eps, np.linspace(window[0], window[1], probes))
        pts = us.reshape(-1, 1)
        sampled = rescaled_kernel(pk, [x0c], eps, np.eye(1), pts, pts)
        ref = np.empty_like(sampled.values)
        for i, u in enumerate(us):
            for j, v in enumerate(us):
                ref[i, j] = bulk_kernel(1, [u], [v])
        err = float(np.max(np.abs(sampled.values - ref)))
        ratio = math.nan if prev_err is None else err / prev_err
        rows.append((float(hbar), float(eps), err, ratio))
        prev_err = err
    report = ExperimentReport(
        "bulk_convergence",
        ("hbar", "eps", "sup_error", "ratio"),
        rows,
        params={
            "potential": V.to_text(),
            "mu": float(mu),
            "x0": x0c,
            "window_lo": float(window[0]),
            "window_hi": float(window[1]),
            "probes": int(probes),
        },
    )
    report.wall_time = time.perf_counter() - t0
    return report


def edge_convergence(
    V, mu, x0, hbar_list, window=(-4.0, 2.0), probes=17, margin=1.0, c_h=2.0
):
    """Sup-distance between the rescaled projector and the edge kernel.

    The probe frame is rotated so the first axis points along grad V(x0);
    rows are (hbar, eps, sup_error, ratio) and the expected decay is
    hbar^{1/3}.
    """
    t0 = time.perf_counter()
    if V.dimension != 1:
        raise ValidationError(
            "edge_convergence runs the n=1 pipeline; higher dimensions use "
            "the analytic free-Laplacian kernels"
        )
    x0c = float(np.asarray(x0, dtype=float).reshape(-1)[0])
    if abs(_value_at(V, x0c) - mu) > 1e-9:
        raise ValidationError("edge_convergence requires V(x0) = mu within 1e-9")
    grad = grad_potential(V, [x0c])
    gnorm = float(np.linalg.norm(grad))
    if gnorm == 0.0:
        raise ValidationError("degenerate edge point: grad V(x0) vanishes")
    U = edge_rotation(grad)
    ref_cache = {}

    def ref_value(u, v):
        key = (u, v) if u <= v else (v, u)
        if key not in ref_cache:
            ref_cache[key] = edge_kernel(1, [key[0]], [key[1]])
        return ref_cache[key]

    rows = []
    prev_err = None
    for hbar in hbar_list:
        eigs, grid = _solve_window(V, mu, hbar, margin=margin, c_h=c_h)
        pk = projector_kernel(eigs, mu)
        eps = edge_scale(hbar, gnorm)
        # U^T e_1 is the outward normal; offsets along it need U in the probe
        signed = float(U[0, 0])
        us = _snap_probes(
            grid, x0c, eps * signed, np.linspace(window[0], window[1], probes)
        )
        pts = us.reshape(-1, 1)
        sampled = rescaled_kernel(pk, [x0c], eps, U, pts, pts)
        ref = np.empty_like(sampled.values)
        for i, u in enumerate(us):
            for j, v in enumerate(us):
                ref[i, j] = ref_value(float(u), float(v))
        err = float(np.max(np.abs(sampled.values - ref)))
        ratio = math.nan if prev_err is None else err / prev_err
        rows.append((float(hbar), float(eps), err, ratio))
        prev_err = err
    report = ExperimentReport(
        "edge_convergence",
        ("hbar", "eps", "sup_error", "ratio"),
        rows,
        params={
            "potential": V.to_text(),
            "mu": float(mu),
            "x0": x0c,
            "window_lo": float(window[0]),
            "window_hi": float(window[1]),
            "probes": int(probes),
        },
    )
    report.wall_time = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------------------
# law of large numbers in Wasserstein distance


def _reference_cdf(V, mu, grid):
    """Limiting-density CDF tabulated on a fine axis covering the box."""
    lo = -grid.half_width
    hi = grid.half_width
    taxis = np.linspace(lo, hi, 8001)
    dens = np.array([density_of_states(V, mu, 1, [t]) for t in taxis])
    cdf = cumulative_trapezoid(dens, taxis, initial=0.0)
    return taxis, cdf


def w1_to_reference(points, taxis, ref_cdf):
    """Integral of |F_emp - F_ref| over the tabulation axis."""
    pts = np.sort(np.asarray(points, dtype=float).reshape(-1))
    if pts.size == 0:
        raise ValidationError("w1_to_reference needs at least one point")
    emp = np.searchsorted(pts, taxis, side="right") / pts.size
    return float(trapezoid(np.abs(emp - ref_cdf), taxis))


def lln_wasserstein(
    V, mu, hbar, trials, rng, margin=1.0, c_h=2.0, threads=1
):
    """Wasserstein distance of empirical measures to the limiting density.

    Accepts one hbar or a list; rows are (hbar, trials, mean_w1, q10, q50,
    q90).  Every (hbar, trial) cell draws from its own derived RNG stream,
    so the report does not depend on scheduling.
    """
    t0 = time.perf_counter()
    if V.dimension != 1:
        raise ValidationError("lln_wasserstein uses the exact n=1 CDF formula")
    hbars = [float(h) for h in np.atleast_1d(hbar)]
    trials = int(trials)
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    rows = []
    for ih, hb in enumerate(hbars):
        eigs, grid = _solve_window(V, mu, hb, margin=margin, c_h=c_h)
        dpp = from_eigensystem(eigs, mu)
        if dpp.N == 0:
            raise ValidationError("no levels below mu: the process is empty")
        taxis, ref_cdf = _reference_cdf(V, mu, grid)

        def one_trial(t, _dpp=dpp, _taxis=taxis, _cdf=ref_cdf, _ih=ih):
            cfg = sample(_dpp, rng.stream(_ih * trials + t))
            return w1_to_reference(cfg.points[:, 0], _taxis, _cdf)

        w1 = np.array(_map_trials(one_trial, trials, threads))
        q10, q50, q90 = np.quantile(w1, [0.1, 0.5, 0.9])
        rows.append(
            (hb, trials, float(np.mean(w1)), float(q10), float(q50), float(q90))
        )
    report = ExperimentReport(
        "lln_wasserstein",
        ("hbar", "trials", "mean_w1", "q10", "q50", "q90"),
        rows,
        params={"potential": V.to_text(), "mu": float(mu)},
        seed=rng.seed,
    )
    report.wall_time = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------------------
# Gaussian concentration of linear statistics


def gaussian_tail_check(
    V,
    mu,
    f,
    hbar,
    trials,
    rng,
    thresholds=(0.5, 1.0, 1.5, 2.0),
    margin=1.0,
    c_h=2.0,
    threads=1,
):
    """Exceedance frequencies of |X(f) - mean| / sqrt(hbar N).

    Rows are (t, frequency, envelope) where envelope = 2 exp(-c t^2) uses
    the largest c consistent with every observed frequency; the params
    carry c along with the exact mean and variance of X(f).
    """
    t0 = time.perf_counter()
    eigs, grid = _solve_window(V, mu, hbar, margin=margin, c_h=c_h)
    dpp = from_eigensystem(eigs, mu)
    if dpp.N == 0:
        raise ValidationError("no levels below mu: the process is empty")
    fvec = f(dpp.nodes) if isinstance(f, TestFunction) else np.asarray(f, float)
    mean = mean_linear_stat(dpp, fvec)
    var = var_linear_stat(dpp, fvec)
    scale = math.sqrt(hbar * dpp.N)
    trials = int(trials)

    def one_trial(t):
        cfg = sample(dpp, rng.stream(t))
        return float(np.sum(fvec[cfg.indices]))

    stats = np.array(_map_trials(one_trial, trials, threads))
    deviations = np.abs(stats - mean) / scale
    rows = []
    c_fit = math.inf
    for t in thresholds:
        if t <= 0.0:
            raise ValidationError("thresholds must be positive")
        freq = float(np.mean(deviations > t))
        rows.append([float(t), freq])
        if freq > 0.0:
            c_fit = min(c_fit, -math.log(freq / 2.0) / t ** 2)
    for row in rows:
        row.append(2.0 * math.exp(-c_fit * row[0] ** 2) if c_fit < math.inf else 0.0)
    report = ExperimentReport(
        "gaussian_tail_check",
        ("t", "frequency", "envelope"),
        [tuple(r) for r in rows],
        params={
            "potential": V.to_text(),
            "mu": float(mu),
            "hbar": float(hbar),
            "trials": trials,
            "count": dpp.N,
            "mean": mean,
            "var": var,
            "var_over_hbar_count": var / (hbar * dpp.N),
            "c": c_fit,
        },
        seed=rng.seed,
    )
    report.wall_time = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------------------
# variance of linear statistics under the free-Laplacian kernel


def sigma_n_squared(n):
    """omega_{n-1} / (2 pi)^n, the squared mesoscopic variance constant."""
    n = int(n)
    if n < 1:
        raise ValidationError("sigma_n_squared requires n >= 1")
    return unit_ball_volume(n - 1) / (2.0 * math.pi) ** n


def _ball_difference_volume(n, d):
    """Volume of B(0,1) minus a unit ball whose center is d away."""
    if n == 1:
        return min(float(d), 2.0)
    d = float(d)
    if d >= 2.0:
        return math.pi
    if d <= 0.0:
        return 0.0
    lens = 2.0 * math.acos(0.5 * d) - 0.5 * d * math.sqrt(4.0 - d * d)
    return math.pi - lens


def _fourier_sq_lattice(g, pad=4.0, points=None):
    """|ghat|^2 (unitary convention) on the DFT frequency lattice.

    Returns (weights, xi_points, cell_volume).  The box half-width is
    pad * bounding_radius, so rescaled copies of g see proportionally
    rescaled boxes and quadrature errors cancel exactly in scaling checks.
    """
    n = g.dimension
    A = pad * g.bounding_radius()
    m = int(points) if points else (8192 if n == 1 else 256)
    h = 2.0 * A / m
    ax = -A + h * np.arange(m)
    norm = (h / math.sqrt(2.0 * math.pi)) ** n
    if n == 1:
        vals = g(ax.reshape(-1, 1))
        ghat = np.fft.fft(vals) * norm
        xi = (2.0 * math.pi * np.fft.fftfreq(m, d=h)).reshape(-1, 1)
    else:
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel()])
        vals = g(pts).reshape(m, m)
        ghat = np.fft.fft2(vals) * norm
        freq = 2.0 * math.pi * np.fft.fftfreq(m, d=h)
        FX, FY = np.meshgrid(freq, freq, indexing="ij")
        xi = np.column_stack([FX.ravel(), FY.ravel()])
        ghat = ghat.ravel()
    dxi = (2.0 * math.pi / (m * h)) ** n
    return np.abs(ghat) ** 2, xi, dxi


def free_variance_exact(n, mu, g, pad=4.0, points=None):
    """Variance of X(g) under the free kernel, by the Plancherel formula.

    var = mu^n / (2 pi)^n int |ghat(xi)|^2 |B(0,1) \\ B(|xi|/mu, 1)| dxi.
    Gaussian bumps use the closed-form radial |ghat|^2 with adaptive
    quadrature; other kinds fall back to the FFT frequency lattice.
    """
    n = int(n)
    if n not in (1, 2):
        raise ValidationError("free_variance_exact supports n in {1, 2}")
    if mu <= 0.0:
        raise ValidationError("mu must be positive")
    pref = mu ** n / (2.0 * math.pi) ** n
    profile = g.fourier_sq_profile()
    if profile is not None:
        surface = 2.0 if n == 1 else 2.0 * math.pi

        def integrand(rho):
            return (
                rho ** (n - 1)
                * profile(rho)
                * _ball_difference_volume(n, rho / mu)
            )

        inner, _ = quad(integrand, 0.0, 2.0 * mu, limit=400, epsabs=1e-13)
        outer, _ = quad(
            lambda rho: rho ** (n - 1) * profile(rho),
            2.0 * mu,
            math.inf,
            limit=200,
            epsabs=1e-13,
        )
        total = inner + unit_ball_volume(n) * outer
        return pref * surface * total
    w2, xi, dxi = _fourier_sq_lattice(g, pad=pad, points=points)
    d = np.sqrt(np.sum(xi * xi, axis=1)) / mu
    if n == 1:
        vol = np.minimum(d, 2.0)
    else:
        dc = np.clip(d, 0.0, 2.0)
        vol = math.pi - (
            2.0 * np.arccos(0.5 * dc) - 0.5 * dc * np.sqrt(4.0 - dc * dc)
        )
    return pref * float(np.sum(w2 * vol)) * dxi


def _free_kernel_sq_radial(n, mu, r):
    """|K(r)|^2 for the free kernel, vectorized over radii r >= 0."""
    r = np.asarray(r, dtype=float)
    out = np.empty_like(r)
    zero = r == 0.0
    out[zero] = (mu ** n * unit_ball_volume(n) / (2.0 * math.pi) ** n) ** 2
    rr = r[~zero]
    if n == 1:
        out[~zero] = (np.sin(mu * rr) / (math.pi * rr)) ** 2
    else:
        out[~zero] = (mu * _scipy_j1(mu * rr) / (2.0 * math.pi * rr)) ** 2
    return out


def free_variance_bruteforce(n, mu, g, step=None, method="fft"):
    """Variance of X(g) as the double integral of (g(x)-g(y))^2 K(x,y)^2 / 2.

    The default route reduces the double integral to the difference variable
    with FFT autocorrelation and adds the closed-form Bessel tail beyond the
    sampled window; method="direct" keeps the literal double Riemann sum on
    a coarse grid (useful for invariance checks, not for accuracy).
    """
    n = int(n)
    if n not in (1, 2):
        raise ValidationError("free_variance_bruteforce supports n in {1, 2}")
    if mu <= 0.0:
        raise ValidationError("mu must be positive")
    R = g.bounding_radius()
    if method == "direct":
        h = step if step else R / (30.0 if n == 1 else 8.0)
        m = int(math.ceil(2.0 * R / h)) + 1
        ax = -R + h * np.arange(m)
        if n == 1:
            pts = ax.reshape(-1, 1)
        else:
            X, Y = np.meshgrid(ax, ax, indexing="ij")
            pts = np.column_stack([X.ravel(), Y.ravel()])
        vals = g(pts)
        diffs = pts[:, None, :] - pts[None, :, :]
        dist = np.sqrt(np.sum(diffs * diffs, axis=2))
        ksq = _free_kernel_sq_radial(n, mu, dist.ravel()).reshape(dist.shape)
        dg = vals[:, None] - vals[None, :]
        return 0.5 * float(np.sum(dg * dg * ksq)) * h ** (2 * n)
    if method != "fft":
        raise ValidationError("method must be 'fft' or 'direct'")
    h = step if step else min(math.pi / (4.5 * mu), R / 25.0)
    m = int(math.ceil(2.0 * R / h)) + 1
    ax = -R + h * np.arange(m)
    if n == 1:
        vals = g(ax.reshape(-1, 1))
        corr = fftconvolve(vals, vals[::-1]) * h
        l2 = float(np.sum(vals * vals)) * h
        k = np.arange(-(m - 1), m)
        dist = np.abs(k) * h
    else:
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        vals = g(np.column_stack([X.ravel(), Y.ravel()])).reshape(m, m)
        corr = fftconvolve(vals, vals[::-1, ::-1]) * h ** 2
        l2 = float(np.sum(vals * vals)) * h ** 2
        k = np.arange(-(m - 1), m)
        KX, KY = np.meshgrid(k, k, indexing="ij")
        sq = KX * KX + KY * KY
        dist = np.sqrt(sq.astype(float)) * h
    big_d = np.maximum(2.0 * l2 - 2.0 * corr, 0.0)
    Z = (m - 1) * h  # lattice sum out to the inscribed-ball radius
    inside = dist <= Z
    uniq, inv = np.unique(dist[inside].ravel(), return_inverse=True)
    ksq_u = _free_kernel_sq_radial(n, mu, uniq)
    weights = big_d[inside].ravel() * ksq_u[inv]
    if n == 1:
        # trapezoid split: the two boundary nodes carry half cells, the
        # closed-form tail starts exactly at Z
        weights[dist[inside].ravel() == Z] *= 0.5
        lattice = 0.5 * float(np.sum(weights)) * h
        osc, _ = quad(
            lambda z: 1.0 / (z * z), Z, math.inf, weight="cos", wvar=2.0 * mu
        )
        tail_int = (1.0 / Z - osc) / math.pi ** 2
    else:
        # midpoint cells tile an area of count * h^2; start the tail at the
        # radius of the disk with that area so no measure is dropped
        lattice = 0.5 * float(np.sum(weights)) * h ** 2
        z_eff = h * math.sqrt(np.count_nonzero(inside) / math.pi)
        j0 = bessel_j(0.0, mu * z_eff)
        j1v = bessel_j(1.0, mu * z_eff)
        tail_int = mu ** 2 * (j0 * j0 + j1v * j1v) / (4.0 * math.pi)
    return lattice + 0.5 * (2.0 * l2) * tail_int


def free_variance_asymptotic(n, mu, g):
    """Large-mu variance growth law sigma_n^2 mu^{n-1} Sigma^2(g)."""
    return sigma_n_squared(n) * float(mu) ** (int(n) - 1) * sigma_fourier(g)


# ---------------------------------------------------------------------------
# H^{1/2} seminorms


def sigma_fourier(g, pad=4.0, points=None):
    """Sigma^2(g) = int |ghat(xi)|^2 |xi| dxi.

    A closed-form radial profile of |ghat|^2 is integrated with quadrature;
    other kinds fall back to the frequency lattice.
    """
    n = g.dimension
    profile = g.fourier_sq_profile()
    if profile is not None:
        surface = n * unit_ball_volume(n)
        val, _ = quad(
            lambda r: r ** n * profile(r), 0.0, np.inf, limit=200
        )
        return surface * val
    w2, xi, dxi = _fourier_sq_lattice(g, pad=pad, points=points)
    return float(np.sum(w2 * np.sqrt(np.sum(xi * xi, axis=1)))) * dxi


def sigma_slobodeckij(g, pad=2.0, points=None, cut_steps=4):
    """The double integral int |g(x)-g(y)|^2 / |x-y|^{n+1} dx dy.

    The diagonal singularity is excised at a few lattice steps and replaced
    by its Taylor value omega_n * cut * int |grad g|^2; beyond the sampled
    window the integrand is 2 ||g||^2 / |z|^{n+1} exactly, which integrates
    in closed form.
    """
    n = g.dimension
    A = pad * g.bounding_radius()
    m = int(points) if points else (2048 if n == 1 else 160)
    h = 2.0 * A / m
    ax = -A + h * np.arange(m)
    if n == 1:
        vals = g(ax.reshape(-1, 1))
        corr = fftconvolve(vals, vals[::-1]) * h
        l2 = float(np.sum(vals * vals)) * h
        grad_sq = float(np.sum(np.gradient(vals, h) ** 2)) * h
        k = np.arange(-(m - 1), m)
        dist = np.abs(k) * h
    else:
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        vals = g(np.column_stack([X.ravel(), Y.ravel()])).reshape(m, m)
        corr = fftconvolve(vals, vals[::-1, ::-1]) * h ** 2
        l2 = float(np.sum(vals * vals)) * h ** 2
        gx, gy = np.gradient(vals, h)
        grad_sq = float(np.sum(gx * gx + gy * gy)) * h ** 2
        k = np.arange(-(m - 1), m)
        KX, KY = np.meshgrid(k, k, indexing="ij")
        dist = np.sqrt((KX * KX + KY * KY).astype(float)) * h
    big_d = np.maximum(2.0 * l2 - 2.0 * corr, 0.0)
    cut = cut_steps * h
    Z = (m - 1) * h
    ring = (dist > cut) & (dist <= Z)
    total = float(np.sum(big_d[ring] / dist[ring] ** (n + 1))) * h ** n
    total += unit_ball_volume(n) * cut * grad_sq
    total += 2.0 * l2 * n * unit_ball_volume(n) / Z
    return total


# ---------------------------------------------------------------------------
# mesoscopic variance scan


def mesoscopic_variance_scan(
    V, mu, x0, hbar_list, beta, g, margin=1.0, c_h=2.0
):
    """delta^{n-1} var X(g((x - x0)/eps)) against the limiting constant.

    eps = hbar^beta and delta = hbar / eps.  For n=1 the variance comes
    from the boxed eigensolve; for n=2 it comes from the free kernel at the
    local wavenumber eps sqrt(mu - V(x0)) / hbar, the scaling image of the
    rescaled statistic.  Both normalizations of the limit constant are
    reported: ratio_sigma_sq divides by sigma_n^2 (mu - V(x0))^{(n-1)/2}
    Sigma^2(g) and ratio_sigma by the same with sigma_n unsquared.
    """
    t0 = time.perf_counter()
    n = V.dimension
    if not 0.0 < beta < 1.0:
        raise ValidationError("beta must lie in (0, 1)")
    x0v = np.asarray(x0, dtype=float).reshape(n)
    V_x0 = _value_at(V, x0v)
    if not V_x0 < mu:
        raise ValidationError("mesoscopic scan requires V(x0) < mu")
    depth = mu - V_x0
    sig_sq = sigma_n_squared(n)
    sigma_sq_g = sigma_fourier(g)
    rows = []
    for hbar in hbar_list:
        hbar = float(hbar)
        if hbar <= 0.0:
            raise ValidationError("hbar must be positive")
        eps = hbar ** beta
        delta = hbar / eps
        if n == 1:
            eigs, grid = _solve_window(V, mu, hbar, margin=margin, c_h=c_h)
            if eps < 4.0 * grid.spacing:
                raise ValidationError(
                    "eps is below four grid spacings; refine the grid"
                )
            dpp = from_eigensystem(eigs, mu)
            fvec = g((dpp.nodes - x0v[None, :]) / eps)
            var = var_linear_stat(dpp, fvec)
        else:
            var = free_variance_exact(n, eps * math.sqrt(depth) / hbar, g)
        normalized = delta ** (n - 1) * var
        base = depth ** (0.5 * (n - 1)) * sigma_sq_g
        if base > 0.0:
            r_sq = normalized / (sig_sq * base)
            r_one = normalized / (math.sqrt(sig_sq) * base)
        else:
            r_sq = math.nan
            r_one = math.nan
        rows.append((hbar, eps, delta, var, normalized, r_sq, r_one))
    params = {
        "potential": V.to_text(),
        "mu": float(mu),
        "beta": float(beta),
        "sigma_sq_g": sigma_sq_g,
    }
    for k in range(n):
        params[f"x0_{k + 1}"] = float(x0v[k])
    report = ExperimentReport(
        "mesoscopic_variance_scan",
        (
            "hbar",
            "eps",
            "delta",
            "variance",
            "normalized",
            "ratio_sigma_sq",
            "ratio_sigma",
        ),
        rows,
        params=params,
    )
    report.wall_time = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------------------
# central limit theorem


def clt_monte_carlo(process, f, trials, rng, threads=1):
    """Kolmogorov-Smirnov test of the standardized linear statistic.

    The mean and variance are exact traces, never estimated, so the
    standardized samples are z = (X(f) - tr fM) / sqrt(var).  Rows are
    (trials, ks_stat, ks_pvalue, skewness, third_moment_se).
    """
    t0 = time.perf_counter()
    trials = int(trials)
    if trials < 2:
        raise ValidationError("clt_monte_carlo needs at least 2 trials")
    fvec = f(process.nodes) if isinstance(f, TestFunction) else np.asarray(f, float)
    if fvec.shape != (process.node_count,):
        raise ValidationError("f must give one value per node")
    mean = mean_linear_stat(process, fvec)
    var = var_linear_stat(process, fvec)
    if var < 1e-12:
        raise ValidationError(
            "the statistic is degenerate: its variance is below 1e-12"
        )

    def one_trial(t):
        cfg = sample(process, rng.stream(t))
        return float(np.sum(fvec[cfg.indices]))

    stats = np.array(_map_trials(one_trial, trials, threads))
    z = (stats - mean) / math.sqrt(var)
    ks_stat, ks_p = kstest(z, "norm")
    skew = float(np.mean(z ** 3))
    skew_se = math.sqrt(15.0 / trials)
    params = {"mean": mean, "var": var}
    skew_exact = _exact_skewness(process, fvec, var)
    if skew_exact is not None:
        params["skew_exact"] = skew_exact
    report = ExperimentReport(
        "clt_monte_carlo",
        ("trials", "ks_stat", "ks_pvalue", "skewness", "skewness_se"),
        [(trials, float(ks_stat), float(ks_p), skew, skew_se)],
        params=params,
        seed=rng.seed,
    )
    report.wall_time = time.perf_counter() - t0
    return report


def _exact_skewness(process, fvec, var):
    """Third standardized cumulant from traces, for projection kernels."""
    if not hasattr(process, "features"):
        return None
    phi = process.features
    fphi = phi * fvec[None, :]
    A = fphi @ phi.T  # N x N image of multiplication by f
    B = (phi * (fvec * fvec)[None, :]) @ phi.T
    C = (phi * (fvec * fvec * fvec)[None, :]) @ phi.T
    k3 = float(np.trace(C) - 3.0 * np.sum(B * A.T) + 2.0 * np.trace(A @ A @ A))
    return k3 / var ** 1.5
