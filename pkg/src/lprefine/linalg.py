"""Dense linear-algebra kernels.

Everything here works on small dense systems.  Quadratic forms are kept as
stacks of factors ``Q = sum_i c_i F_i^T Diag(w_i) F_i`` so that no matrix square
root is ever formed, and equality constraints are handled by an orthonormal
null-space basis of the constraint matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.linalg as sla

from .errors import DimensionMismatch, InfeasibleConstraint, NoConvergence, SingularSystem

TIKHONOV = 1e-12
FEASIBILITY_TOL = 1e-8
MAX_CONDITION = 1e14


def as_matrix(a, cols: int | None = None) -> np.ndarray:
    """Return ``a`` as a finite 2-D float array, allowing an empty row block."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        if cols is not None and arr.size == 0:
            arr = arr.reshape(0, cols)
        else:
            arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionMismatch(f"expected a matrix, got shape {arr.shape}")
    if cols is not None and arr.shape[1] != cols:
        raise DimensionMismatch(f"expected {cols} columns, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix has non-finite entries")
    return arr


def as_vector(v, size: int | None = None) -> np.ndarray:
    arr = np.asarray(v, dtype=float).reshape(-1)
    if size is not None and arr.size != size:
        raise DimensionMismatch(f"expected a vector of length {size}, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector has non-finite entries")
    return arr


@dataclass(frozen=True)
class FactorBlock:
    """One term ``coef * F^T Diag(weights) F`` of a quadratic form."""

    F: np.ndarray
    coef: float = 1.0
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.coef < 0:
            raise ValueError("factor multipliers must be nonnegative")
        if self.weights is not None:
            if self.weights.shape != (self.F.shape[0],):
                raise DimensionMismatch("row weights must match the factor's row count")
            if np.any(self.weights < 0):
                raise ValueError("row weights must be nonnegative")

    def row_scale(self) -> np.ndarray:
        w = np.ones(self.F.shape[0]) if self.weights is None else self.weights
        return self.coef * w


class QuadraticForm:
    """Positive semidefinite form stored as a stack of factor blocks."""

    def __init__(self, blocks: Iterable, n: int | None = None):
        parsed = []
        for blk in blocks:
            if not isinstance(blk, FactorBlock):
                F, coef, *rest = blk
                weights = rest[0] if rest else None
                blk = FactorBlock(
                    as_matrix(F, n),
                    float(coef),
                    None if weights is None else as_vector(weights),
                )
            parsed.append(blk)
        if n is None:
            if not parsed:
                raise DimensionMismatch("an empty quadratic form needs an explicit dimension")
            n = parsed[0].F.shape[1]
        for blk in parsed:
            if blk.F.shape[1] != n:
                raise DimensionMismatch("every factor block must have n columns")
        self.blocks: tuple[FactorBlock, ...] = tuple(parsed)
        self.n = n

    @classmethod
    def identity(cls, n: int, coef: float = 1.0) -> "QuadraticForm":
        return cls([(np.eye(n), coef)], n)

    @classmethod
    def diagonal(cls, diag: Sequence[float]) -> "QuadraticForm":
        diag = as_vector(diag)
        return cls([FactorBlock(np.eye(diag.size), 1.0, diag)], diag.size)

    def matrix(self) -> np.ndarray:
        Q = np.zeros((self.n, self.n))
        for blk in self.blocks:
            Q += blk.F.T @ (blk.row_scale()[:, None] * blk.F)
        return Q

    def apply(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros_like(x, dtype=float)
        for blk in self.blocks:
            Fx = blk.F @ x
            scale = blk.row_scale()
            out += blk.F.T @ (scale[:, None] * Fx if Fx.ndim == 2 else scale * Fx)
        return out

    def value(self, x: np.ndarray) -> float:
        total = 0.0
        for blk in self.blocks:
            Fx = blk.F @ x
            total += float(np.dot(blk.row_scale(), Fx * Fx))
        return total

    def trace(self) -> float:
        return float(sum(np.dot(blk.row_scale(), np.sum(blk.F**2, axis=1)) for blk in self.blocks))

    def stacked_factor(self) -> np.ndarray:
        """Single factor ``F`` with ``F^T F = Q`` built from the row scales."""
        rows = [np.sqrt(blk.row_scale())[:, None] * blk.F for blk in self.blocks]
        if not rows:
            return np.zeros((0, self.n))
        return np.vstack(rows)


def tikhonov_shift(trace: float, n: int) -> float:
    if n == 0:
        return 0.0
    return TIKHONOV * trace / n if trace > 0 else 1.0


def cholesky_solve(H: np.ndarray, rhs: np.ndarray, shift: float) -> np.ndarray:
    """Solve ``(H + shift I) u = rhs`` for symmetric PSD ``H``."""
    k = H.shape[0]
    if k == 0:
        return np.zeros(rhs.shape)
    Hs = H + shift * np.eye(k)
    try:
        L = np.linalg.cholesky(Hs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem("regularized normal matrix is not positive definite") from exc
    diag = np.diag(L)
    if diag.min() <= 0 or (diag.max() / diag.min()) ** 2 > MAX_CONDITION:
        raise SingularSystem("regularized normal matrix is numerically singular")
    y = sla.solve_triangular(L, rhs, lower=True, check_finite=False)
    return sla.solve_triangular(L.T, y, lower=False, check_finite=False)


class AffineConstraint:
    """Null-space parametrization ``x = x_c + Z u`` of ``{x : A x = c}``.

    ``Z`` has orthonormal columns spanning the null space of ``A``; rank
    deficiency (duplicated rows and the like) is absorbed by the SVD.
    """

    def __init__(self, A, n: int | None = None):
        A = as_matrix(A, n)
        self.A = A
        d, n = A.shape
        self.n = n
        if d == 0:
            self.rank = 0
            self.Z = np.eye(n)
            self._Vr = np.zeros((n, 0))
            self._Ur = np.zeros((0, 0))
            self._sr = np.zeros(0)
            return
        U, s, Vt = np.linalg.svd(A, full_matrices=True)
        tol = max(A.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
        rank = int(np.sum(s > tol))
        self.rank = rank
        self.Z = Vt[rank:].T.copy()
        self._Vr = Vt[:rank].T
        self._Ur = U[:, :rank]
        self._sr = s[:rank]

    @property
    def dim(self) -> int:
        return self.Z.shape[1]

    @property
    def row_basis(self) -> np.ndarray:
        """Orthonormal basis ``V`` (columns) of the row space of ``A``."""
        return self._Vr

    def row_rhs(self, c) -> np.ndarray:
        """``e`` with ``{x : A x = c} = {x : V^T x = e}``; raises if infeasible."""
        x = self.particular(c)
        return self._Vr.T @ x

    def particular(self, c) -> np.ndarray:
        """Minimum-norm solution of ``A x = c``; raises if none exists."""
        c = as_vector(c, self.A.shape[0])
        if self.A.shape[0] == 0:
            return np.zeros(self.n)
        x = self._Vr @ ((self._Ur.T @ c) / self._sr)
        resid = np.max(np.abs(self.A @ x - c)) if c.size else 0.0
        if resid > FEASIBILITY_TOL * (1.0 + np.max(np.abs(c))):
            raise InfeasibleConstraint(f"A x = c has no solution (residual {resid:.3e})")
        return x


def _reduced_minimizer(Q: QuadraticForm, space: AffineConstraint, c) -> np.ndarray:
    x0 = space.particular(c)
    Z = space.Z
    if Z.shape[1] == 0:
        return x0
    H = np.zeros((Z.shape[1], Z.shape[1]))
    rhs = np.zeros(Z.shape[1])
    for blk in Q.blocks:
        G = blk.F @ Z
        scale = blk.row_scale()
        H += G.T @ (scale[:, None] * G)
        rhs -= G.T @ (scale * (blk.F @ x0))
    u = cholesky_solve(H, rhs, tikhonov_shift(Q.trace(), Q.n))
    return x0 + Z @ u


def min_quadratic_under_constraints(Q: QuadraticForm, A, c) -> np.ndarray:
    """Minimize ``x^T Q x`` subject to ``A x = c``."""
    space = AffineConstraint(A, Q.n)
    return _reduced_minimizer(Q, space, c)


def energy(Q: QuadraticForm, A, c) -> float:
    """Optimal value of ``min x^T Q x`` over ``A x = c``."""
    c = as_vector(c)
    if not np.any(c):
        return 0.0
    return Q.value(min_quadratic_under_constraints(Q, A, c))


def constrained_least_squares(A, b, C, d) -> np.ndarray:
    """Minimize ``||A x - b||_2^2`` subject to ``C x = d``."""
    A = as_matrix(A)
    n = A.shape[1]
    b = as_vector(b, A.shape[0])
    space = AffineConstraint(as_matrix(C, n), n)
    x0 = space.particular(d)
    Z = space.Z
    if Z.shape[1] == 0:
        return x0
    AZ = A @ Z
    H = AZ.T @ AZ
    rhs = AZ.T @ (b - A @ x0)
    u = cholesky_solve(H, rhs, tikhonov_shift(float(np.sum(A * A)), n))
    return x0 + Z @ u


def kkt_residual(Q: QuadraticForm, A, c, x) -> float:
    """Relative first-order residual of ``min x^T Q x`` s.t. ``A x = c``."""
    space = AffineConstraint(A, Q.n)
    grad = 2.0 * Q.apply(x)
    proj = space.Z.T @ grad
    scale = 1.0 + np.linalg.norm(grad)
    return float(np.linalg.norm(proj) / scale)


def preconditioned_solve(
    Zhat_inverse_applier: Callable[[np.ndarray], np.ndarray],
    Q,
    b,
    tol: float,
    contract: float = 100.0,
    x0: np.ndarray | None = None,
) -> tuple[np.ndarray, int]:
    """Preconditioned Richardson iteration ``x <- x - P (Q x - b)``.

    ``Zhat_inverse_applier`` applies the approximate inverse ``P`` of ``Q``.
    ``Q`` may be a :class:`QuadraticForm`, a dense matrix, or a callable.
    ``b`` may hold several right-hand sides as columns; each must reach
    ``||Q x - b|| <= tol ||b||``.  Returns the solution and the number of
    iterations.  Raises :class:`NoConvergence` once the count passes
    ``contract * ln(1/tol)``.
    """
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    if isinstance(Q, QuadraticForm):
        apply_Q = Q.apply
    elif callable(Q):
        apply_Q = Q
    else:
        Qm = np.asarray(Q, dtype=float)
        apply_Q = lambda v: Qm @ v  # noqa: E731
    b = np.asarray(b, dtype=float)
    limit = max(1, math.ceil(contract * math.log(1.0 / tol)))
    bnorm = np.linalg.norm(b, axis=0)
    target = tol * bnorm
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    resid = apply_Q(x) - b if x0 is not None else -b
    if np.all(np.linalg.norm(resid, axis=0) <= target):
        return x, 0
    for it in range(1, limit + 1):
        x = x - Zhat_inverse_applier(resid)
        resid = apply_Q(x) - b
        if np.all(np.linalg.norm(resid, axis=0) <= target):
            return x, it
    raise NoConvergence(
        f"preconditioned iteration did not reach tol={tol:g} in {limit} steps", limit
    )


class SubspaceQuadratic:
    """Repeated solves of ``min cm |M x|^2 + cn sum_e r_e (N x)_e^2`` over ``A x = c``.

    ``A``, ``M`` and ``N`` stay fixed while the multipliers, the weights ``r``
    and the right-hand side change; the null-space products are computed once.
    """

    def __init__(self, A, M, N, space: AffineConstraint | None = None):
        N = as_matrix(N)
        n = N.shape[1]
        M = as_matrix(M, n) if M is not None and np.size(M) else np.zeros((0, n))
        self.space = space if space is not None else AffineConstraint(A, n)
        self.A = self.space.A
        self.M = M
        self.N = N
        self.n = n
        Z = self.space.Z
        self.GM = M @ Z
        self.GN = N @ Z
        self.PM = self.GM.T @ self.GM
        self._m_rows = np.sum(M * M, axis=1)
        self._n_rows = np.sum(N * N, axis=1)
        self._c_key: bytes | None = None
        self.coef_m = 1.0
        self.coef_n = 1.0
        self.linear_solves = 0

    def _load_rhs(self, c) -> None:
        c = np.asarray(c, dtype=float)
        key = c.tobytes()
        if key == self._c_key:
            return
        self.x0 = self.space.particular(c)
        self.hM = self.M @ self.x0
        self.hN = self.N @ self.x0
        self.qM = self.GM.T @ self.hM
        self._c_key = key

    def begin(self, coef_m: float, coef_n: float, r: np.ndarray) -> None:
        self.coef_m = float(coef_m)
        self.coef_n = float(coef_n)

    def solve(self, c, r: np.ndarray) -> np.ndarray:
        self._load_rhs(c)
        self.linear_solves += 1
        k = self.space.dim
        if k == 0:
            return self.x0.copy()
        cm, cn = self.coef_m, self.coef_n
        rG = r[:, None] * self.GN
        H = cm * self.PM + cn * (self.GN.T @ rG)
        rhs = -(cm * self.qM + cn * (rG.T @ self.hN))
        trace = cm * self._m_rows.sum() + cn * float(np.dot(r, self._n_rows))
        u = cholesky_solve(H, rhs, tikhonov_shift(trace, self.n))
        return self.x0 + self.space.Z @ u


class DirectBackend:
    """Factorize every weighted system from scratch."""

    name = "direct"

    def prepare(self, A, M, N, space: AffineConstraint | None = None) -> SubspaceQuadratic:
        return SubspaceQuadratic(A, M, N, space)
