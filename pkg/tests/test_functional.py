import math

import numpy as np
import pytest

from bosefunc import manifold as mf
from bosefunc.exact import build_hamiltonian, ground_state, interaction_expectation
from bosefunc.fock import enumerate_basis
from bosefunc.functional import (
    FunctionalConfig,
    SubspaceBasis,
    d_matrix,
    delta_matrix,
    dimer_exact,
    dimer_exact_derivative,
    dimer_landscape,
    dimer_landscape_minimum,
    evaluate_functional,
    fit_bec_slope,
    full_subspace,
    functional_curve,
    functional_derivative,
    lowdin_frame,
    minimize_functional,
    mott_subspace,
    normalize_curve,
    reconstruct_wavefunction,
    rescaled_dimer,
    rotated_functional,
)
from bosefunc.rdm import ConstantFamily, OneBodyRDM, SpectralDecomposition, UniformFamily, build_uniform_gamma, spectral

LBFGS = FunctionalConfig(restarts=4, method="lbfgs")


def test_full_subspace_examples():
    sub = full_subspace(2, 2)
    assert sub.dim == 2 and [tuple(o) for o in sub.occupations] == [(1, 0), (0, 1)]
    assert np.array_equal(sub.number_matrices[0], np.diag([1.0, 0.0]))
    assert full_subspace(4, 4).dim == 20


def test_mott_subspace_examples():
    sub = mott_subspace(4, 1)
    assert sub.dim == 4
    assert np.array_equal(sub.occupations, np.ones((4, 4)) - np.eye(4))
    assert np.array_equal(sub.number_matrices[0], np.diag([0.0, 1, 1, 1]))
    s32 = mott_subspace(3, 2)
    assert sorted(tuple(o) for o in s32.occupations) == sorted({(1, 2, 2), (2, 1, 2), (2, 2, 1)})
    with pytest.raises(ValueError):
        mott_subspace(4, 1.5)


@pytest.mark.parametrize("sub", [full_subspace(3, 3), mott_subspace(4, 2), full_subspace(2, 4)])
def test_fock_frame_trace_identity(sub):
    mats = sub.number_matrices
    assert np.allclose(mats, np.swapaxes(mats, 1, 2))
    assert sum(np.trace(m) for m in mats) == (sub.particles - 1) * sub.dim


def test_dense_frame_matches_fock_frame():
    ambient = enumerate_basis(3, 2)
    q = mf.haar_orthogonal(ambient.dim, np.random.default_rng(0))
    rotated = SubspaceBasis.from_frame(q, ambient)
    plain = full_subspace(3, 3)
    gamma = build_uniform_gamma(3, 1.0, 0.4)
    spec = spectral(gamma)
    v = mf.trivialize(np.random.default_rng(1).standard_normal(15), 6, 3)
    # the same vectors Phi in two frames give the same value
    assert evaluate_functional(spec, q @ v, plain) == pytest.approx(evaluate_functional(spec, v, rotated), abs=1e-12)


def test_delta_examples():
    sub = full_subspace(2, 2)
    spec = spectral(build_uniform_gamma(2, 1.0, 0.0))
    delta = delta_matrix(spec, np.eye(2), sub)
    root = np.sqrt(spec.values)
    assert np.sum(np.outer(root, root) * delta) == pytest.approx(1.0, abs=1e-14)
    assert evaluate_functional(spec, np.eye(2), sub) == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_delta_and_direct_forms_agree(seed):
    rng = np.random.default_rng(seed)
    sub = full_subspace(3, 3)
    a = rng.standard_normal((3, 3))
    g = a @ a.T
    gamma = OneBodyRDM(3 * g / np.trace(g), 3)
    spec = spectral(gamma)
    v = mf.trivialize(rng.standard_normal(mf.n_coords(sub.dim)), sub.dim, 3)
    delta = delta_matrix(spec, v, sub)
    assert np.allclose(delta, delta.T)
    root = np.sqrt(spec.values)
    d = d_matrix(spec, v)
    direct = sum(d[i] @ sub.number_matrices[i] @ d[i] for i in range(3))
    assert np.sum(np.outer(root, root) * delta) == pytest.approx(direct, abs=1e-10)
    assert evaluate_functional(spec, v, sub) == pytest.approx(direct, abs=1e-10)
    assert np.max(np.abs(d @ d.T - gamma.matrix)) <= 1e-10


def test_evaluate_examples():
    spec = spectral(build_uniform_gamma(4, 2.0, 0.0))
    sub = mott_subspace(4, 2)
    assert evaluate_functional(spec, lowdin_frame(spec), sub) == pytest.approx(8.0, abs=1e-12)
    with pytest.raises(ValueError):
        evaluate_functional(spec, np.eye(3), sub)
    bad = SpectralDecomposition(np.eye(2), np.array([2.5, -0.5]))
    with pytest.raises(ValueError):
        evaluate_functional(bad, np.eye(2), full_subspace(2, 2))


@pytest.mark.parametrize("eta", [0.1, 0.6, 0.9, 1.0])
def test_minimize_dimer(eta):
    ev = minimize_functional(build_uniform_gamma(2, 1.0, eta), full_subspace(2, 2))
    assert ev.converged and ev.gradient_norm <= 1e-8
    assert ev.value == pytest.approx(dimer_exact(eta), abs=1e-8)
    assert np.allclose(ev.frame.T @ ev.frame, np.eye(2), atol=1e-12)


def test_minimize_examples():
    assert minimize_functional(build_uniform_gamma(2, 1.0, 0.6), full_subspace(2, 2)).value == pytest.approx(0.2, abs=1e-8)
    ev = minimize_functional(build_uniform_gamma(4, 1.0, 0.0), full_subspace(4, 4), LBFGS)
    assert ev.value == pytest.approx(0.0, abs=1e-8)


def test_minimize_errors():
    with pytest.raises(ValueError):
        minimize_functional(build_uniform_gamma(3, 1.0, 0.2), full_subspace(2, 2))
    with pytest.raises(ValueError):
        minimize_functional(build_uniform_gamma(2, 2.0, 0.2), full_subspace(2, 2))
    with pytest.raises(ValueError):
        minimize_functional(build_uniform_gamma(2, 1.0, 0.2), full_subspace(2, 2),
                            FunctionalConfig(restarts=0, zero_start=False))


def test_minimize_reports_non_convergence():
    ev = minimize_functional(build_uniform_gamma(2, 1.0, 0.6), full_subspace(2, 2),
                             FunctionalConfig(max_iters=3, restarts=0))
    assert not ev.converged and ev.gradient_norm > 1e-8


def test_minimize_deterministic():
    g = build_uniform_gamma(3, 1.0, 0.5)
    a = minimize_functional(g, full_subspace(3, 3), LBFGS)
    b = minimize_functional(g, full_subspace(3, 3), LBFGS)
    assert a.value == b.value and np.array_equal(a.params, b.params)


def test_dimer_closed_forms():
    assert dimer_exact(0.0) == 0 and dimer_exact(1.0) == 1
    assert dimer_exact(0.6) == pytest.approx(0.2, abs=1e-15)
    with pytest.raises(ValueError):
        dimer_exact(1.5)
    assert dimer_exact_derivative(0.6) == pytest.approx(0.75)
    assert dimer_exact_derivative(0.99) == pytest.approx(7.01792, abs=1e-5)
    assert rescaled_dimer(2, 1.0, 0.37) == pytest.approx(dimer_exact(0.37))
    assert rescaled_dimer(40, 1.0, 0.0) == 0 and rescaled_dimer(40, 1.0, 1.0) == 20


def test_landscape_examples():
    th = 2 * math.pi / 7
    assert dimer_landscape(th, 3 * math.pi / 28) == pytest.approx(2 * math.sin(3 * math.pi / 28) ** 2, abs=1e-15)
    assert dimer_landscape(th, 3 * math.pi / 28) == pytest.approx(0.2182, abs=5e-5)
    assert dimer_landscape(math.pi / 2, 0.0) == pytest.approx(0.0, abs=1e-30)
    for th in np.linspace(0.05, math.pi / 2, 20):
        theta_l, value = dimer_landscape_minimum(th)
        assert value == pytest.approx(dimer_exact(math.cos(th)), abs=1e-8)
        assert math.sin(2 * theta_l) ** 2 == pytest.approx(math.cos(th) ** 2, abs=1e-6)


def test_derivative_examples():
    fam, sub = UniformFamily(2, 1.0), full_subspace(2, 2)
    env = functional_derivative(fam, 0.6, sub, "envelope")
    reo = functional_derivative(fam, 0.6, sub, "reoptimize")
    assert env == pytest.approx(0.75, abs=1e-8)
    assert abs(env - reo) <= 1e-5
    assert abs(functional_derivative(fam, 1e-4, sub)) <= 1e-3
    assert functional_derivative(fam, 0.99, sub) == pytest.approx(7.01792, abs=1e-4)
    with pytest.raises(ArithmeticError):
        functional_derivative(fam, 0.6, sub, config=FunctionalConfig(max_iters=2, restarts=0))


def test_bec_slope_dimer_and_degenerate():
    grid = np.linspace(0.9, 0.999, 8)
    fit = fit_bec_slope(UniformFamily(2, 1.0), full_subspace(2, 2), grid)
    assert fit.zeta == pytest.approx(-0.5, abs=0.05) and fit.residual >= 0
    with pytest.raises(ValueError):
        fit_bec_slope(ConstantFamily(OneBodyRDM(np.eye(2), 2)), full_subspace(2, 2), grid)
    with pytest.raises(ValueError):
        fit_bec_slope(UniformFamily(2, 1.0), full_subspace(2, 2), grid[:4])


def test_rotation_lemma():
    sub = full_subspace(2, 2)
    ev = minimize_functional(build_uniform_gamma(2, 1.0, 0.6), sub)
    assert rotated_functional(ev, sub, 0, 1, 0.0) == pytest.approx(ev.value, abs=1e-14)
    for th in np.linspace(0.01, math.pi - 0.01, 25):
        assert rotated_functional(ev, sub, 0, 1, th) >= ev.value - 1e-10
    with pytest.raises(IndexError):
        rotated_functional(ev, sub, 0, 0, 0.1)


@pytest.mark.parametrize("m,alpha", [(2, 1), (4, 1), (4, 2), (3, 3)])
def test_mott_rotation_identity(m, alpha):
    sub = mott_subspace(m, alpha)
    gamma = build_uniform_gamma(m, alpha, 0.0)
    ev = minimize_functional(gamma, sub, FunctionalConfig(restarts=0, zero_start=False),
                             [lowdin_frame(spectral(gamma))])
    assert ev.value == pytest.approx(m * alpha * (alpha - 1), abs=1e-12)
    for th in (0.3, 1.1, 2.0):
        for i, j in ((0, 1), (0, m - 1)):
            expected = ev.value + 2 * alpha * math.sin(th) ** 2
            assert rotated_functional(ev, sub, i, j, th) == pytest.approx(expected, abs=1e-8)


def test_reconstruction():
    sub = full_subspace(2, 2)
    ev = minimize_functional(build_uniform_gamma(2, 1.0, 0.6), sub)
    rec = reconstruct_wavefunction(ev.spectrum, ev.frame, sub)
    assert rec.gamma_error <= 1e-6

    mott = mott_subspace(3, 2)
    gamma = build_uniform_gamma(3, 2.0, 0.0)
    spec = spectral(gamma)
    rec = reconstruct_wavefunction(spec, lowdin_frame(spec), mott)
    psi = rec.psi / rec.norm
    assert abs(psi[rec.basis.position((2, 2, 2))]) == pytest.approx(1.0, abs=1e-12)

    v = mf.trivialize(np.random.default_rng(0).standard_normal(mf.n_coords(6)), 6, 3)
    rec = reconstruct_wavefunction(spectral(build_uniform_gamma(3, 1.0, 0.3)), v, full_subspace(3, 3))
    assert np.isfinite(rec.norm) and rec.gamma_error >= 0


def test_normalize_curve():
    assert np.allclose(normalize_curve([0, 0.5, 1]), [0, 0.5, 1])
    y = normalize_curve([dimer_exact(e) for e in np.linspace(0, 1, 11)])
    assert y[0] == 0 and y[-1] == 1
    with pytest.raises(ValueError):
        normalize_curve([2.0, 2.0, 2.0])


@pytest.mark.parametrize("m,n,u", [(2, 2, 1.0), (2, 2, 5.0), (3, 3, 2.0), (3, 2, 1.0), (4, 4, 3.0)])
def test_relaxation_bound(m, n, u):
    ham = build_hamiltonian(m, n, 1.0, u)
    gs = ground_state(ham)
    f_true = interaction_expectation(gs.psi, ham.basis)
    ev = minimize_functional(gs.gamma, full_subspace(m, n), LBFGS)
    assert ev.value <= f_true + 1e-8
    if (m, n) == (2, 2):
        assert ev.value == pytest.approx(f_true, abs=1e-8)


def test_site_relabeling_invariance():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((3, 3))
    g = a @ a.T
    gamma = OneBodyRDM(3 * g / np.trace(g), 3)
    perm = np.roll(np.eye(3), 1, axis=0)
    shifted = OneBodyRDM(perm @ gamma.matrix @ perm.T, 3)
    sub = full_subspace(3, 3)
    assert minimize_functional(gamma, sub, LBFGS).value == pytest.approx(
        minimize_functional(shifted, sub, LBFGS).value, abs=1e-9)


def test_degenerate_block_invariance():
    gamma = build_uniform_gamma(4, 1.0, 0.5)
    spec = spectral(gamma)
    rng = np.random.default_rng(2)
    r = np.eye(4)
    r[1:, 1:] = mf.haar_orthogonal(3, rng)
    other = SpectralDecomposition(spec.vectors @ r, spec.values)
    assert np.allclose(other.reconstruct(), gamma.matrix, atol=1e-12)
    sub = full_subspace(4, 4)
    for _ in range(5):
        v = mf.trivialize(rng.standard_normal(mf.n_coords(20)), 20, 4)
        assert evaluate_functional(other, v @ r, sub) == pytest.approx(evaluate_functional(spec, v, sub), abs=1e-12)
    # and the minimized value does not see the choice of basis
    base = minimize_functional(gamma, sub, LBFGS)
    assert evaluate_functional(other, base.frame @ r, sub) == pytest.approx(base.value, abs=1e-8)


def test_functional_curve_warm_start():
    etas = np.linspace(0, 1, 6)
    evs = functional_curve(UniformFamily(2, 1.0), full_subspace(2, 2), etas)
    assert np.allclose([e.value for e in evs], [dimer_exact(e) for e in etas], atol=1e-8)


@pytest.mark.parametrize("m,alpha", [(3, 1), (4, 1), (4, 2)])
def test_mott_lowdin_start_is_global(m, alpha):
    sub = mott_subspace(m, alpha)
    for eta in (0.0, 0.3, 0.7, 0.95):
        gamma = build_uniform_gamma(m, alpha, eta)
        spec = spectral(gamma)
        closed = m * alpha * alpha - np.sum(np.sqrt(spec.values)) ** 2 / m
        lowdin = minimize_functional(gamma, sub, FunctionalConfig(restarts=0, zero_start=False),
                                     [lowdin_frame(spec)])
        searched = minimize_functional(gamma, sub, FunctionalConfig(restarts=6, method="lbfgs", seed=1))
        assert lowdin.value == pytest.approx(closed, abs=1e-10)
        assert searched.value >= lowdin.value - 1e-8
