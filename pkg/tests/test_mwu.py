import math

import mpmath
import numpy as np
import pytest

from lprefine.errors import UnsupportedExponent, WidthBudgetExceeded
from lprefine.linalg import FactorBlock, QuadraticForm, min_quadratic_under_constraints
from lprefine.mwu import compute_params, mwu_solve, oracle_coefficients, oracle_step, phi, psi
from reference import reference_solve

mpmath.mp.dps = 40


def mp_params(m1, p):
    m1, p = mpmath.mpf(m1), mpmath.mpf(p)
    denom = p * (3 * p - 2)
    rho = m1 ** ((p * p - 4 * p + 2) / denom)
    beta = 3 ** (p - 1) * m1 ** ((p - 2) / (3 * p - 2))
    alpha = 3 ** (-(p - 1) / p) / p * m1 ** (-(p * p - 5 * p + 2) / denom)
    tau = 3**p * m1 ** ((p - 1) * (p - 2) / (3 * p - 2))
    return rho, beta, alpha, tau, int(mpmath.ceil(m1 ** (1 / p) / alpha))


def planted(seed, p, shrink=1.0, optimal=False):
    """Instance with ``c = A D`` and ``zeta`` the objective at ``D`` divided by ``shrink``.

    With ``optimal=True`` the planted ``D`` is replaced by the reference minimizer.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 16))
    m = int(rng.integers(30, 100))
    A = rng.standard_normal((int(rng.integers(1, 4)), n))
    M = rng.standard_normal((int(rng.integers(0, 5)), n))
    N = rng.standard_normal((m, n))
    N[:3] *= 30.0
    D = rng.standard_normal(n)
    c = A @ D
    if optimal:
        D = reference_solve(A, M, N, None, c, p).x
    zeta = float(np.sum((M @ D) ** 2) + np.sum(np.abs(N @ D) ** p)) / shrink
    return A, M, N, c, zeta, D


def test_params_match_high_precision():
    params = compute_params(4096, 4.0)
    rho, beta, alpha, tau, T = mp_params(4096, 4)
    assert params.rho == pytest.approx(float(rho), rel=1e-13)
    assert params.beta == pytest.approx(float(beta), rel=1e-13)
    assert params.alpha == pytest.approx(float(alpha), rel=1e-13)
    assert params.tau == pytest.approx(float(tau), rel=1e-13)
    assert params.T == T == 49
    assert params.rho == pytest.approx(1.51572, abs=1e-5)
    assert params.beta == pytest.approx(142.51, abs=1e-2)
    assert params.alpha == pytest.approx(3**-0.75 * 0.25 * 2**0.6, rel=1e-13)
    assert params.alpha == pytest.approx(0.16628, abs=1e-4)
    assert params.tau == pytest.approx(81 * 2**7.2, rel=1e-13)
    assert params.tau == pytest.approx(11909.5, abs=0.5)
    assert params.rho == pytest.approx(2**0.6, rel=1e-13)
    assert params.beta == pytest.approx(27 * 2**2.4, rel=1e-13)


@pytest.mark.parametrize("m1,p", [(2, 3.0), (50, 2.5), (4096, 4.0), (1000, 7.3)])
def test_T_is_the_ceiling(m1, p):
    params = compute_params(m1, p)
    root = m1 ** (1 / p)
    assert params.T * params.alpha >= root * (1 - 1e-12)
    assert (params.T - 1) * params.alpha < root


@pytest.mark.parametrize("m1,p", [(16, 3.0), (4096, 4.0), (777, 6.5)])
def test_width_ratio_closed_form(m1, p):
    # the closed forms give p^p a^p tau / (p a m1^((p-1)/p)) = 3^((2p-1)/p) exactly
    P = compute_params(m1, p)
    ratio = p**p * P.alpha**p * P.tau / (p * P.alpha * m1 ** ((p - 1) / p))
    assert ratio == pytest.approx(3 ** ((2 * p - 1) / p), rel=1e-12)


def test_params_guards():
    with pytest.raises(ValueError):
        compute_params(1, 4.0)
    with pytest.raises(UnsupportedExponent):
        compute_params(10, 2.0)


def test_oracle_uniform_weights_least_norm():
    delta = oracle_step([[1, 1]], np.zeros((0, 2)), np.eye(2), [1.0], np.ones(2), 1.0, 4.0)
    np.testing.assert_allclose(delta, [0.5, 0.5], atol=1e-12)


def test_oracle_zeta_scaling():
    cm1, cn1 = oracle_coefficients(10, 1.0, 5.0)
    cm2, cn2 = oracle_coefficients(10, 2.0, 5.0)
    assert cn1 == cn2 == 3.0**-3
    assert cm2 / cm1 == pytest.approx(2 ** (-3 / 5))


def test_oracle_matches_assembled_form():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((2, 6))
    M = rng.standard_normal((3, 6))
    N = rng.standard_normal((12, 6))
    c = rng.standard_normal(2)
    w = rng.uniform(1.0, 3.0, 12)
    zeta, p = 0.7, 4.0
    cm, cn = oracle_coefficients(12, zeta, p)
    Q = QuadraticForm([FactorBlock(M, cm), FactorBlock(N, cn, w ** (p - 2))], 6)
    expect = min_quadratic_under_constraints(Q, A, c)
    np.testing.assert_allclose(oracle_step(A, M, N, c, w, zeta, p), expect, rtol=1e-9, atol=1e-11)
    assert psi(w ** (p - 2), A, M, N, c, zeta, p) == pytest.approx(Q.value(expect), rel=1e-10)


def test_phi_examples():
    assert phi(np.ones(7), 3.0) == 7.0
    w = np.random.default_rng(2).uniform(1, 2, 9)
    assert phi(2 * w, 3.5) == pytest.approx(2**3.5 * phi(w, 3.5))
    exact = mpmath.fsum(mpmath.mpf(v) ** mpmath.mpf(3.5) for v in w)
    assert phi(w, 3.5) == pytest.approx(float(exact), rel=1e-14)


def test_psi_examples():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((2, 5))
    M = rng.standard_normal((2, 5))
    N = rng.standard_normal((10, 5))
    c = rng.standard_normal(2)
    r = rng.uniform(1, 2, 10)
    assert psi(r, A, M, N, np.zeros(2), 1.0, 4.0) == 0.0
    assert psi(r * rng.uniform(1, 3, 10), A, M, N, c, 1.0, 4.0) >= psi(r, A, M, N, c, 1.0, 4.0)


def test_mwu_zero_rhs():
    x, st = mwu_solve(np.ones((1, 3)), None, np.eye(3), [0.0], 1.0, 4.0)
    np.testing.assert_array_equal(x, 0)
    assert st.k == 0 and st.i == 0


def test_mwu_primal_steps_match_T():
    rng = np.random.default_rng(4)
    N = rng.standard_normal((4096, 4))
    A = np.ones((1, 4))
    D = rng.standard_normal(4)
    zeta = float(np.sum(np.abs(N @ D) ** 4))
    x, st = mwu_solve(A, None, N, A @ D, zeta, 4.0)
    assert st.i == st.params.T == 49
    assert st.k <= st.params.width_budget


@pytest.mark.parametrize("seed", range(6))
def test_mwu_planted_contract(seed):
    p = [3.0, 4.0, 5.0][seed % 3]
    A, M, N, c, zeta, _ = planted(seed, p)
    x, st = mwu_solve(A, M, N, c, zeta, p)
    np.testing.assert_allclose(A @ x, c, rtol=1e-9, atol=1e-9)
    assert float(np.sum((M @ x) ** 2)) <= 4 * zeta
    assert float(np.sum(np.abs(N @ x) ** p)) <= math.e * 3**p * zeta
    assert st.i <= st.params.T and st.k <= st.params.width_budget


@pytest.mark.parametrize("seed", range(6))
def test_mwu_potentials_per_step(seed):
    p = [3.0, 4.0, 5.0][seed % 3]
    A, M, N, c, zeta, _ = planted(seed, p)
    _, st = mwu_solve(A, M, N, c, zeta, p, instrument=True)
    P = st.params
    for k, step in enumerate(st.steps):
        assert step.phi <= P.phi_cap(step.i, step.k) * (1 + 1e-6)
        assert step.psi <= P.psi_ceiling(step.phi, zeta) * (1 + 1e-6)
        if step.kind == "primal":
            assert step.resistance_excess <= 1e-9
    assert st.final_phi <= P.phi_cap(st.i, st.k) * (1 + 1e-6)


@pytest.mark.parametrize("seed", range(6))
def test_oracle_bound_without_quadratic_term(seed):
    p = [3.0, 4.0, 5.0][seed % 3]
    A, _, N, c, zeta, _ = planted(seed, p)
    M = np.zeros((0, N.shape[1]))
    _, st = mwu_solve(A, M, N, c, zeta, p, instrument=True)
    for step in st.steps:
        bound = zeta ** (2 / p) * step.phi ** ((p - 2) / p)
        assert step.oracle_sum <= bound * (1 + 1e-8)


def forced_width_steps(seeds, shrinks):
    """Width steps from runs whose ``zeta`` sits far below the planted optimum."""
    out = []
    for seed in seeds:
        p = [3.0, 4.0, 5.0, 3.5][seed % 4]
        for shrink in shrinks:
            A, M, N, c, zeta, _ = planted(seed, p, shrink, optimal=True)
            try:
                _, st = mwu_solve(A, M, N, c, zeta, p, instrument=True)
                steps, w = st.steps, st.w
            except WidthBudgetExceeded as exc:
                steps, w = exc.state.steps, exc.state.w
            for j, step in enumerate(steps):
                if step.kind != "width":
                    continue
                after = steps[j + 1].psi if j + 1 < len(steps) else psi(w ** (p - 2), A, M, N, c, zeta, p)
                out.append((p, zeta, step, after, compute_params(N.shape[0], p)))
    return out


def test_width_steps_raise_energy():
    steps = forced_width_steps(range(8), [1e2, 1e3])
    assert steps
    for p, zeta, step, after, _ in steps:
        assert after >= step.psi + step.energy_increment - 1e-9 * after


def test_width_step_gain_corrected_constant():
    steps = forced_width_steps(range(40), [1e1, 1e2, 1e3, 1e4])
    checked = 0
    for p, zeta, step, after, params in steps:
        if step.precondition_gain:
            checked += 1
            assert after - step.psi >= 3.0 ** (-(p - 2)) * params.psi_gain(zeta) / 2 * (1 - 1e-6)
    assert checked > 0
