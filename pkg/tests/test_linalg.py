import numpy as np
import pytest
from hypothesis import given, strategies as st

from lprefine.errors import DimensionMismatch, InfeasibleConstraint, NoConvergence
from lprefine.linalg import (
    AffineConstraint,
    DirectBackend,
    FactorBlock,
    QuadraticForm,
    constrained_least_squares,
    energy,
    kkt_residual,
    min_quadratic_under_constraints,
    preconditioned_solve,
)


def kkt_oracle(H, g, C, d):
    """Minimize ``x^T H x - 2 g^T x`` s.t. ``C x = d`` by solving the bordered system."""
    n, k = H.shape[0], C.shape[0]
    K = np.block([[2 * H, C.T], [C, np.zeros((k, k))]])
    sol = np.linalg.solve(K, np.concatenate([2 * g, d]))
    return sol[:n]


def random_form(rng, n, blocks=2):
    return QuadraticForm(
        [FactorBlock(rng.standard_normal((n + 2, n)), float(rng.uniform(0.5, 2)),
                     rng.uniform(0.1, 3, n + 2)) for _ in range(blocks)],
        n,
    )


def test_constrained_least_squares_symmetric_average():
    x = constrained_least_squares(np.eye(2), [1, 2], [[1, -1]], [0])
    np.testing.assert_allclose(x, [1.5, 1.5], atol=1e-12)


def test_constrained_least_squares_min_norm_on_line():
    x = constrained_least_squares(np.eye(2), [0, 0], [[1, 1]], [2])
    np.testing.assert_allclose(x, [1, 1], atol=1e-12)


def test_constrained_least_squares_matches_kkt():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((6, 4))
    b = rng.standard_normal(6)
    C = rng.standard_normal((2, 4))
    d = rng.standard_normal(2)
    x = constrained_least_squares(A, b, C, d)
    np.testing.assert_allclose(x, kkt_oracle(A.T @ A, A.T @ b, C, d), rtol=1e-9, atol=1e-10)


def test_constrained_least_squares_infeasible():
    with pytest.raises(InfeasibleConstraint):
        constrained_least_squares(np.eye(2), [0, 0], [[1, 1], [1, 1]], [0, 1])


def test_min_quadratic_projection():
    x = min_quadratic_under_constraints(QuadraticForm.identity(2), [[1, 0]], [1])
    np.testing.assert_allclose(x, [1, 0], atol=1e-12)


def test_min_quadratic_weighted_least_norm():
    x = min_quadratic_under_constraints(QuadraticForm.diagonal([1, 4]), [[1, 1]], [1])
    np.testing.assert_allclose(x, [0.8, 0.2], atol=1e-10)


def test_min_quadratic_matches_kkt():
    rng = np.random.default_rng(5)
    Q = random_form(rng, 5)
    A = rng.standard_normal((2, 5))
    c = rng.standard_normal(2)
    x = min_quadratic_under_constraints(Q, A, c)
    np.testing.assert_allclose(x, kkt_oracle(Q.matrix(), np.zeros(5), A, c), rtol=1e-8, atol=1e-10)
    assert kkt_residual(Q, A, c, x) < 1e-10


def test_energy_examples():
    assert energy(QuadraticForm.identity(2), [[1, 0]], [1]) == pytest.approx(1.0, abs=1e-12)
    assert energy(QuadraticForm.identity(2), [[1, 0]], [0]) == 0.0


def test_energy_equals_value_at_minimizer():
    rng = np.random.default_rng(6)
    Q = random_form(rng, 5)
    A = rng.standard_normal((2, 5))
    c = rng.standard_normal(2)
    x = kkt_oracle(Q.matrix(), np.zeros(5), A, c)
    assert energy(Q, A, c) == pytest.approx(float(x @ Q.matrix() @ x), rel=1e-9)


def test_preconditioned_solve_exact_preconditioner():
    rng = np.random.default_rng(7)
    F = rng.standard_normal((8, 4))
    Q = F.T @ F + np.eye(4)
    b = rng.standard_normal(4)
    Qinv = np.linalg.inv(Q)
    x, its = preconditioned_solve(lambda r: Qinv @ r, Q, b, 1e-10)
    assert its == 1
    np.testing.assert_allclose(Q @ x, b, atol=1e-9)


def test_preconditioned_solve_half_step_halves_error():
    rng = np.random.default_rng(8)
    F = rng.standard_normal((8, 4))
    Q = F.T @ F + np.eye(4)
    b = rng.standard_normal(4)
    Qinv = np.linalg.inv(Q)
    xs = np.linalg.solve(Q, b)
    errs = []
    x = np.zeros(4)
    for _ in range(5):
        x = x - 0.5 * Qinv @ (Q @ x - b)
        errs.append(np.linalg.norm(x - xs))
    ratios = np.array(errs[1:]) / np.array(errs[:-1])
    np.testing.assert_allclose(ratios, 0.5, rtol=1e-8)
    _, its = preconditioned_solve(lambda r: 0.5 * Qinv @ r, Q, b, 2.0**-20)
    assert its == 20


def test_preconditioned_solve_perturbed_preconditioner():
    rng = np.random.default_rng(9)
    F = rng.standard_normal((10, 5))
    Q = F.T @ F + np.eye(5)
    P = F.T @ np.diag(rng.uniform(1.0, 2.0, 10)) @ F + np.eye(5)
    b = rng.standard_normal(5)
    Pinv = np.linalg.inv(P)
    x, _ = preconditioned_solve(lambda r: Pinv @ r, Q, b, 1e-12)
    np.testing.assert_allclose(x, np.linalg.solve(Q, b), rtol=1e-8, atol=1e-10)


def test_preconditioned_solve_budget():
    Q = np.eye(2)
    with pytest.raises(NoConvergence):
        preconditioned_solve(lambda r: 1e-3 * r, Q, np.ones(2), 1e-10, contract=1.0)
    with pytest.raises(ValueError):
        preconditioned_solve(lambda r: r, Q, np.ones(2), 1.5)


def test_shape_errors():
    with pytest.raises(DimensionMismatch):
        QuadraticForm([(np.eye(2), 1.0), (np.eye(3), 1.0)])
    with pytest.raises(DimensionMismatch):
        AffineConstraint(np.ones((2, 3)), 4)
    with pytest.raises(ValueError):
        FactorBlock(np.eye(2), -1.0)


def test_direct_backend_matches_min_quadratic():
    rng = np.random.default_rng(11)
    A = rng.standard_normal((2, 6))
    M = rng.standard_normal((3, 6))
    N = rng.standard_normal((9, 6))
    r = rng.uniform(0.5, 4.0, 9)
    c = rng.standard_normal(2)
    sys_ = DirectBackend().prepare(A, M, N)
    sys_.begin(0.7, 1.3, r)
    x = sys_.solve(c, r)
    Q = QuadraticForm([FactorBlock(M, 0.7), FactorBlock(N, 1.3, r)], 6)
    np.testing.assert_allclose(x, kkt_oracle(Q.matrix(), np.zeros(6), A, c), rtol=1e-8, atol=1e-10)


@given(st.integers(0, 10_000))
def test_least_squares_beats_feasible_points(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((6, 4))
    b = rng.standard_normal(6)
    C = rng.standard_normal((2, 4))
    d = rng.standard_normal(2)
    x = constrained_least_squares(A, b, C, d)
    space = AffineConstraint(C, 4)
    for _ in range(10):
        y = space.particular(d) + space.Z @ rng.standard_normal(space.dim)
        assert np.linalg.norm(A @ x - b) <= np.linalg.norm(A @ y - b) + 1e-8 * (1 + np.linalg.norm(b))


@given(st.integers(0, 10_000))
def test_min_quadratic_is_feasible_and_minimal(seed):
    rng = np.random.default_rng(seed)
    Q = random_form(rng, 5)
    A = rng.standard_normal((2, 5))
    c = rng.standard_normal(2)
    x = min_quadratic_under_constraints(Q, A, c)
    assert np.linalg.norm(A @ x - c) <= 1e-9 * (1 + np.linalg.norm(c))
    space = AffineConstraint(A, 5)
    val = Q.value(x)
    for _ in range(100):
        y = x + space.Z @ rng.standard_normal(space.dim)
        assert val <= Q.value(y) + 1e-8


@given(st.integers(0, 10_000))
def test_energy_monotone_in_form(seed):
    rng = np.random.default_rng(seed)
    Q = random_form(rng, 5)
    extra = QuadraticForm(list(Q.blocks) + [FactorBlock(rng.standard_normal((3, 5)), 1.0)], 5)
    A = rng.standard_normal((2, 5))
    c = rng.standard_normal(2)
    assert energy(extra, A, c) >= energy(Q, A, c) - 1e-10


def test_energy_increase_identity_fuzz():
    """``E(r') >= E(r) + sum (1 - r/r') r (N x)^2`` for ``r' >= r``, 200 triples."""
    rng = np.random.default_rng(12)
    worst = np.inf
    for _ in range(200):
        n = int(rng.integers(3, 8))
        m = int(rng.integers(n, 3 * n))
        A = rng.standard_normal((int(rng.integers(1, n)), n))
        N = rng.standard_normal((m, n))
        M = rng.standard_normal((int(rng.integers(0, 3)), n))
        c = rng.standard_normal(A.shape[0])
        r = rng.uniform(0.1, 5.0, m)
        r2 = r * (1.0 + rng.exponential(1.0, m) * (rng.random(m) < 0.5))
        blocks = [FactorBlock(N, 1.0, r)] + ([FactorBlock(M, 1.0)] if M.shape[0] else [])
        Q = QuadraticForm(blocks, n)
        Q2 = QuadraticForm([FactorBlock(N, 1.0, r2)] + blocks[1:], n)
        x = min_quadratic_under_constraints(Q, A, c)
        Nx = N @ x
        bound = energy(Q, A, c) + float(np.sum((1 - r / r2) * r * Nx * Nx))
        e2 = energy(Q2, A, c)
        worst = min(worst, (e2 - bound) / max(1.0, abs(bound)))
    assert worst >= -1e-10
