"""Grid, Hamiltonian assembly, eigensolver, projector and Agmon diagnostics."""

import numpy as np
import pytest

from fermigas.errors import ValidationError
from fermigas.kernels import bulk_kernel
from fermigas.potential import parse_potential
from fermigas.schrodinger import (
    Grid,
    agmon_check,
    assemble_hamiltonian,
    choose_box,
    edge_rotation,
    eigensolve,
    projector_kernel,
    rescaled_kernel,
)


def harmonic_eigensystem(hbar=0.05, L=3.0, ppa=1201, cap=1.0):
    V = parse_potential("x1^2")
    grid = Grid(1, L, ppa)
    H = assemble_hamiltonian(V, hbar, grid)
    return eigensolve(H, cap, grid, hbar)


# ---------------------------------------------------------------------------
# grid and box selection


def test_grid_arithmetic():
    g = Grid(1, 3.0, 1201)
    assert g.spacing == pytest.approx(0.005)
    assert g.weight == pytest.approx(0.005)
    assert g.interior_count == 1199
    g2 = Grid(2, 1.5, 61)
    assert g2.weight == pytest.approx(0.05 ** 2)
    assert g2.interior_points().shape == (59 * 59, 2)


def test_grid_validation():
    with pytest.raises(ValidationError):
        Grid(3, 1.0, 11)
    with pytest.raises(ValidationError):
        Grid(1, -1.0, 11)
    with pytest.raises(ValidationError):
        Grid(1, 1.0, 2)


def test_choose_box_examples():
    V = parse_potential("x1^2")
    assert choose_box(V, 1.0, 1.0) == pytest.approx(1.5)
    assert choose_box(V, 4.0, 0.0) >= 2.0
    with pytest.raises(ValidationError, match="unconfined"):
        choose_box(parse_potential("-x1^2"), 1.0, 0.0)


def test_choose_box_covers_double_well():
    V = parse_potential("(1 - x1^2)^2")
    L = choose_box(V, 0.5, 0.5)
    # sublevel set reaches past |x| = 1.3, boundary must clear level 1
    assert L >= 1.5
    assert float(V(np.array([[L]]))[0]) >= 1.0


# ---------------------------------------------------------------------------
# Hamiltonian assembly


def test_dirichlet_stencil_three_points():
    grid = Grid(1, 2.0, 5)  # spacing 1, three interior nodes
    H = assemble_hamiltonian(parse_potential("0*x1"), 1.0, grid)
    want = np.array([[2.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 2.0]])
    assert np.allclose(H.toarray(), want)


def test_constant_potential_shifts_spectrum():
    grid = Grid(1, 2.0, 41)
    V0 = parse_potential("0*x1")
    Vc = parse_potential("0*x1 + 2.5")
    e0 = np.linalg.eigvalsh(assemble_hamiltonian(V0, 1.0, grid).toarray())
    ec = np.linalg.eigvalsh(assemble_hamiltonian(Vc, 1.0, grid).toarray())
    assert np.allclose(ec, e0 + 2.5, atol=1e-10)


def test_hamiltonian_symmetric():
    grid = Grid(2, 1.5, 21)
    H = assemble_hamiltonian(parse_potential("x1^2 + x2^2"), 0.3, grid)
    assert abs(H - H.T).max() == 0.0


def test_assemble_rejects_nonpositive_hbar():
    grid = Grid(1, 1.0, 11)
    with pytest.raises(ValidationError):
        assemble_hamiltonian(parse_potential("x1^2"), 0.0, grid)


# ---------------------------------------------------------------------------
# eigensolve


def test_harmonic_lowest_eigenvalue():
    es = harmonic_eigensystem()
    assert es.eigenvalues[0] == pytest.approx(0.05, abs=1e-4)


def test_harmonic_spectrum_fine_grid():
    es = harmonic_eigensystem(ppa=2401)
    exact = 0.05 * (2.0 * np.arange(10) + 1.0)
    assert es.eigenvalues.size == 10
    assert np.max(np.abs(es.eigenvalues - exact)) <= 1e-4


def test_harmonic_spectrum_relative_error_default_grid():
    es = harmonic_eigensystem()
    exact = 0.05 * (2.0 * np.arange(10) + 1.0)
    rel = np.abs(es.eigenvalues - exact) / exact
    assert es.eigenvalues.size == 10
    assert np.max(rel) <= 1e-3


def test_eigensolve_orthogonality():
    es = harmonic_eigensystem()
    G = es.eigenvectors.T @ es.eigenvectors * es.grid.weight
    assert np.max(np.abs(G - np.eye(G.shape[0]))) <= 1e-8


def test_second_order_convergence():
    exact = 0.95  # tenth harmonic level at hbar = 0.05
    err = []
    for ppa in (601, 1201):
        es = harmonic_eigensystem(ppa=ppa)
        err.append(abs(es.eigenvalues[9] - exact))
    ratio = err[0] / err[1]
    assert 3.3 <= ratio <= 4.7


def test_dirichlet_truncation_insensitivity():
    base = harmonic_eigensystem(L=3.0, ppa=1201)
    wide = harmonic_eigensystem(L=4.5, ppa=1801)  # same spacing, larger box
    assert wide.eigenvalues.size == base.eigenvalues.size
    assert np.max(np.abs(wide.eigenvalues - base.eigenvalues)) <= 1e-8


def test_eigensolve_empty_window():
    es = harmonic_eigensystem(cap=0.01)
    assert es.eigenvalues.size == 0
    assert es.eigenvectors.shape[1] == 0


def test_eigensolve_2d_isotropic_harmonic():
    V = parse_potential("x1^2 + x2^2")
    grid = Grid(2, 1.5, 61)
    H = assemble_hamiltonian(V, 0.2, grid)
    es = eigensolve(H, 1.0, grid, 0.2)
    assert np.allclose(es.eigenvalues, [0.4, 0.8, 0.8], atol=2e-3)
    G = es.eigenvectors.T @ es.eigenvectors * grid.weight
    assert np.max(np.abs(G - np.eye(3))) <= 1e-8


def test_eigensolve_2d_block_growth():
    # 21 levels below the cap forces the Lanczos block to enlarge past 16
    V = parse_potential("x1^2 + x2^2")
    grid = Grid(2, 1.5, 61)
    H = assemble_hamiltonian(V, 0.08, grid)
    es = eigensolve(H, 1.0, grid, 0.08)
    assert es.eigenvalues.size == 21
    exact = np.sort(
        [0.16 * (k1 + k2 + 1) for k1 in range(7) for k2 in range(7)]
    )
    exact = exact[exact <= 1.0]
    # coarse grid, so only window completeness and rough locations matter here
    assert np.allclose(es.eigenvalues, exact, atol=1.5e-2)


def test_eigensystem_csv():
    es = harmonic_eigensystem()
    text = es.to_csv()
    lines = text.strip().split("\n")
    assert lines[0].startswith("# hbar=")
    assert lines[2] == "k,eigenvalue"
    assert len(lines) == 3 + 10


# ---------------------------------------------------------------------------
# projector kernel


def test_projector_counts_and_trace():
    es = harmonic_eigensystem()
    pk = projector_kernel(es, 1.0)
    assert pk.N == 10
    assert pk.trace() == pytest.approx(10.0, abs=1e-6)


def test_projector_below_ground_state():
    es = harmonic_eigensystem()
    pk = projector_kernel(es, 0.01)
    assert pk.N == 0
    assert np.all(pk.matrix() == 0.0)
    assert pk.trace() == 0.0


def test_projector_idempotent_in_weighted_product():
    es = harmonic_eigensystem()
    pk = projector_kernel(es, 1.0)
    P = pk.matrix()
    resid = P @ P * es.grid.weight - P
    assert np.max(np.abs(resid)) <= 1e-6


def test_projector_degenerate_fermi_level_nudge():
    es = harmonic_eigensystem()
    lam = es.eigenvalues
    pk = projector_kernel(es, float(lam[3]))
    assert pk.N == 4
    assert lam[3] < pk.mu < lam[4]


def test_projector_rejects_mu_above_cap():
    es = harmonic_eigensystem()
    with pytest.raises(ValidationError):
        projector_kernel(es, 1.5)


# ---------------------------------------------------------------------------
# rescaled kernel


def test_rescaled_kernel_exact_on_nodes():
    es = harmonic_eigensystem()
    pk = projector_kernel(es, 1.0)
    h = es.grid.spacing
    x0 = [es.grid.interior_axis[600]]
    probes = np.array([[-2.0], [0.0], [3.0]])
    ke = rescaled_kernel(pk, x0, h, np.eye(1), probes, probes)
    P = pk.matrix()
    idx = [598, 600, 603]
    assert np.allclose(ke.values, h * P[np.ix_(idx, idx)], atol=1e-14)


def test_rescaled_kernel_approaches_sine_kernel():
    es = harmonic_eigensystem()
    pk = projector_kernel(es, 1.0)
    eps = np.pi * 0.05  # bulk scale at the center of the well
    z = np.linspace(-1.0, 1.0, 5)[:, None]
    ke = rescaled_kernel(pk, [0.0], eps, np.eye(1), z, z)
    ref = np.array([[bulk_kernel(1, a, b) for b in z] for a in z])
    assert np.max(np.abs(ke.values - ref)) <= 0.1


def test_rescaled_kernel_probe_outside_box():
    es = harmonic_eigensystem()
    pk = projector_kernel(es, 1.0)
    with pytest.raises(ValidationError, match="outside"):
        rescaled_kernel(pk, [2.9], 0.1, np.eye(1), [[5.0]], [[0.0]])


def test_rescaled_kernel_requires_orthogonal_map():
    es = harmonic_eigensystem()
    pk = projector_kernel(es, 1.0)
    with pytest.raises(ValidationError, match="orthogonal"):
        rescaled_kernel(pk, [0.0], 0.1, np.array([[2.0]]), [[0.0]], [[0.0]])


# ---------------------------------------------------------------------------
# edge rotation


def test_edge_rotation_2d_example():
    U = edge_rotation([0.0, 3.0])
    assert np.allclose(U @ np.array([0.0, 1.0]), [1.0, 0.0], atol=1e-14)
    assert np.linalg.det(U) == pytest.approx(1.0, abs=1e-12)


def test_edge_rotation_1d():
    assert np.allclose(edge_rotation([2.0]), [[1.0]])
    assert np.allclose(edge_rotation([-2.0]), [[-1.0]])


def test_edge_rotation_random_gradients():
    rng = np.random.default_rng(11)
    for _ in range(20):
        g = rng.normal(size=2)
        U = edge_rotation(g)
        out = U @ g
        assert abs(out[0] - np.linalg.norm(g)) <= 1e-12
        assert abs(out[1]) <= 1e-12
        assert np.linalg.det(U) == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(U @ U.T, np.eye(2), atol=1e-12)


def test_edge_rotation_zero_gradient():
    with pytest.raises(ValidationError):
        edge_rotation([0.0, 0.0])


# ---------------------------------------------------------------------------
# Agmon diagnostics


def test_agmon_bound_holds():
    es = harmonic_eigensystem()
    V = parse_potential("x1^2")
    rep = agmon_check(es, V, 0.5, 0.5)
    assert rep.bound == pytest.approx(3.0)
    assert np.all(rep.norms <= rep.bound)
    assert rep.eigenvalues.size == 5


def test_agmon_interior_eigenfunctions_have_unit_norm():
    es = harmonic_eigensystem()
    V = parse_potential("x1^2")
    rep = agmon_check(es, V, 0.5, 0.5)
    # the weight is 1 on the sublevel set, so norms stay essentially 1
    assert np.all(rep.norms >= 1.0 - 1e-12)
    assert rep.norms[0] == pytest.approx(1.0, abs=1e-6)


def test_agmon_estimate_tightens_with_delta():
    es = harmonic_eigensystem()
    V = parse_potential("x1^2")
    slack = []
    for delta in (0.1, 0.2, 0.35, 0.5):
        rep = agmon_check(es, V, 0.5, delta)
        slack.append(rep.bound - np.max(rep.norms))
    assert all(a > b for a, b in zip(slack, slack[1:]))


def test_agmon_validates_inputs():
    es = harmonic_eigensystem()
    V = parse_potential("x1^2")
    with pytest.raises(ValidationError):
        agmon_check(es, V, 0.5, 0.0)
    with pytest.raises(ValidationError):
        agmon_check(es, V, 0.5, 1.5)
    with pytest.raises(ValidationError):
        agmon_check(es, V, 0.9, 0.5)  # needs mu + delta <= cap
