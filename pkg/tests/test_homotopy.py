import numpy as np
import pytest

from lprefine.homotopy import homotopy_stages, stage_exponents, start_solution
from lprefine.refinement import ProblemInstance, warm_start_l2
from reference import reference_solve


def pure(seed, n=8, m=40):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((2, n))
    N = rng.standard_normal((m, n))
    return A, N, A @ rng.standard_normal(n)


def test_stage_exponents():
    assert stage_exponents(3.0) == [2]
    assert stage_exponents(4.0) == [2]
    assert stage_exponents(8.0) == [2, 4]
    assert stage_exponents(16.0) == [2, 4, 8]
    assert stage_exponents(12.0) == [2, 4]


def test_p4_returns_least_squares_point():
    A, N, b = pure(0)
    x = start_solution(A, N, b, 4.0)
    np.testing.assert_allclose(x, warm_start_l2(ProblemInstance.build(A, None, N, None, b, 2.0)))


@pytest.mark.parametrize("seed", range(3))
def test_cross_norm_chain(seed):
    A, N, b = pure(seed)
    m = N.shape[0]
    stages = homotopy_stages(A, N, b, 16.0)
    assert [s.k for s in stages] == [2, 4, 8]
    for stage in stages:
        assert np.linalg.norm(A @ stage.x - b) <= 1e-9 * (1 + np.linalg.norm(b))
        opt_k = reference_solve(A, None, N, None, b, stage.k).value
        assert stage.value <= 2 * opt_k * (1 + 1e-9)
        opt_2k = reference_solve(A, None, N, None, b, 2 * stage.k).value
        assert np.sum(np.abs(N @ stage.x) ** (2 * stage.k)) <= 4 * m * opt_2k
