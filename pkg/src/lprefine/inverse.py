"""Lazily maintained inverse of ``M^T M + N^T Diag(r) N`` used as a preconditioner.

Reference resistances ``r_hat`` follow the live resistances ``r`` only when an
entry has drifted enough.  Drift is tallied per entry in geometric buckets:
a relative increase in ``[2^-eta, 2^(1-eta))`` bumps ``counter[eta]``, and
bucket ``eta`` is inspected every ``2^eta`` updates.  Entries whose counter
reaches ``2^eta`` are moved to their live value and the cached inverse is
corrected with a Woodbury update.  Solves against the live matrix then run a
damped Richardson iteration preconditioned by the cached inverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import NoConvergence, SingularSystem, SingularUpdate
from .linalg import (
    MAX_CONDITION,
    AffineConstraint,
    as_matrix,
    as_vector,
    preconditioned_solve,
    tikhonov_shift,
)

RICHARDSON_TOL = 1e-11


def bucket_cap(m: int) -> int:
    """Largest tracked bucket index, ``ceil(log2 m)``."""
    return max(1, math.ceil(math.log2(max(m, 2))))


def ledger_ceiling(m: int) -> float:
    """Allowed ratio ``r / r_hat`` before an entry must be refreshed: ``5 ln m``."""
    return 5.0 * math.log(max(m, 3))


@dataclass
class InverseState:
    M: np.ndarray
    N: np.ndarray
    r_hat: np.ndarray
    counters: np.ndarray
    Z_hat: np.ndarray
    shift: float
    step_index: int = 0
    woodbury_updates: int = 0
    full_refreshes: int = 0
    changed_entries: int = 0
    ledger_repairs: int = 0
    richardson_iterations: int = 0
    bucket_changes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    last_changed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    cache: np.ndarray | None = None

    @property
    def m(self) -> int:
        return self.N.shape[0]

    def matrix(self, r=None) -> np.ndarray:
        """``M^T M + N^T Diag(r) N + shift I``, at ``r_hat`` by default."""
        r = self.r_hat if r is None else r
        n = self.N.shape[1]
        return self.M.T @ self.M + self.N.T @ (r[:, None] * self.N) + self.shift * np.eye(n)

    def apply(self, v: np.ndarray, r: np.ndarray) -> np.ndarray:
        Nv = self.N @ v
        Nv = r[:, None] * Nv if Nv.ndim == 2 else r * Nv
        return self.M.T @ (self.M @ v) + self.N.T @ Nv + self.shift * v


def _invert(H: np.ndarray) -> np.ndarray:
    try:
        c, low = sla.cho_factor(H, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem("maintained matrix is not positive definite") from exc
    diag = np.abs(np.diag(c))
    if diag.min() <= 0 or (diag.max() / diag.min()) ** 2 > MAX_CONDITION:
        raise SingularSystem("maintained matrix is numerically singular")
    Z = sla.cho_solve((c, low), np.eye(H.shape[0]), check_finite=False)
    return 0.5 * (Z + Z.T)


def inverse_init(M, N, r0, shift: float | None = None) -> InverseState:
    """Explicit inverse at ``r_hat = r0`` with all counters cleared."""
    N = as_matrix(N)
    m, n = N.shape
    M = as_matrix(M, n) if M is not None and np.size(M) else np.zeros((0, n))
    r0 = as_vector(r0, m).copy()
    if np.any(r0 < 0):
        raise ValueError("resistances must be nonnegative")
    if shift is None:
        trace = float(np.sum(M * M) + np.dot(r0, np.sum(N * N, axis=1)))
        shift = tikhonov_shift(trace, n)
    cap = bucket_cap(m)
    state = InverseState(
        M=M,
        N=N,
        r_hat=r0,
        counters=np.zeros((cap + 1, m), dtype=int),
        Z_hat=np.zeros((n, n)),
        shift=float(shift),
        bucket_changes=np.zeros(cap + 1, dtype=int),
    )
    state.Z_hat = _invert(state.matrix())
    return state


def full_refresh(state: InverseState, r=None) -> InverseState:
    """Reset ``r_hat`` (to ``r`` when given), clear counters and re-invert."""
    if r is not None:
        state.r_hat = np.array(r, dtype=float)
        state.counters[:] = 0
    state.Z_hat = _invert(state.matrix())
    state.full_refreshes += 1
    return state


def _woodbury(state: InverseState, rows: np.ndarray, gain: np.ndarray) -> None:
    """``Z_hat <- (Z_hat^-1 + U^T Diag(gain) U)^-1`` with ``U = N[rows]``."""
    U = state.N[rows]
    W = state.Z_hat @ U.T
    C = np.diag(1.0 / gain) + U @ W
    try:
        c, low = sla.cho_factor(C, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularUpdate("Woodbury middle matrix is not positive definite") from exc
    diag = np.abs(np.diag(c))
    if diag.min() <= 0 or (diag.max() / diag.min()) ** 2 > MAX_CONDITION:
        raise SingularUpdate("Woodbury middle matrix is numerically singular")
    Z = state.Z_hat - W @ sla.cho_solve((c, low), W.T, check_finite=False)
    state.Z_hat = 0.5 * (Z + Z.T)


def update_inverse(state: InverseState, r_prev, r_cur) -> InverseState:
    """Record the move ``r_prev -> r_cur`` and refresh the entries that are due."""
    m = state.m
    r_prev = as_vector(r_prev, m)
    r_cur = as_vector(r_cur, m)
    if np.any(r_cur < r_prev):
        raise ValueError("resistances may only increase")
    cap = state.counters.shape[0] - 1
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (r_cur - r_prev) / state.r_hat
    moved = np.flatnonzero(ratio > 0)
    eta = np.maximum(0, np.ceil(-np.log2(ratio[moved]))).astype(int) if moved.size else moved
    # inf ratio (r_hat = 0) lands in bucket 0
    keep = eta <= cap
    np.add.at(state.counters, (eta[keep], moved[keep]), 1)

    changed = np.zeros(m, dtype=bool)
    for level in range(cap + 1):
        if state.step_index % (1 << level) == 0:
            due = (state.counters[level] >= (1 << level)) & ~changed
            state.bucket_changes[level] += int(due.sum())
            changed |= due
    with np.errstate(divide="ignore", invalid="ignore"):
        over = r_cur > ledger_ceiling(m) * state.r_hat
    repair = over & ~changed
    state.ledger_repairs += int(repair.sum())
    changed |= repair

    idx = np.flatnonzero(changed)
    state.last_changed = idx
    state.step_index += 1
    if idx.size == 0:
        return state
    gain = r_cur[idx] - state.r_hat[idx]
    state.r_hat[idx] = r_cur[idx]
    state.counters[:, idx] = 0
    state.changed_entries += int(idx.size)
    grow = gain > 0
    idx, gain = idx[grow], gain[grow]
    if idx.size == 0:
        return state
    if idx.size >= state.N.shape[1]:
        # a rank-k correction with k >= n costs more than re-inverting
        return full_refresh(state)
    try:
        _woodbury(state, idx, gain)
        state.woodbury_updates += 1
    except SingularUpdate:
        full_refresh(state)
    return state


def ledger_ratio(state: InverseState, r) -> float:
    """Largest ``r / r_hat`` (1 when ``r = r_hat``); ``inf`` if ``r_hat`` has a zero under positive ``r``."""
    r = as_vector(r, state.m)
    if np.any(r < state.r_hat * (1.0 - 1e-12)):
        return -math.inf
    pos = r > 0
    if np.any(pos & (state.r_hat <= 0)):
        return math.inf
    return float(np.max(r[pos] / state.r_hat[pos], initial=1.0))


def maintained_oracle_solve(
    state: InverseState,
    A,
    M,
    N,
    c,
    r_cur,
    tol: float = RICHARDSON_TOL,
    space: AffineConstraint | None = None,
) -> np.ndarray:
    """Minimize ``|M x|^2 + sum r_cur (N x)^2`` over ``A x = c`` using the cached inverse.

    ``M`` and ``N`` must be the matrices ``state`` was built from.  A stale
    preconditioner (Richardson budget exhausted) forces one full refresh at
    ``r_cur`` and a retry.
    """
    r_cur = as_vector(r_cur, state.m)
    n = state.N.shape[1]
    space = space if space is not None else AffineConstraint(A, n)
    V = space.row_basis
    e = space.row_rhs(c)
    if V.shape[1] == 0:
        return np.zeros(n)
    ratio = ledger_ratio(state, r_cur)
    if not math.isfinite(ratio) or ratio < 1.0:
        full_refresh(state, r_cur)
        ratio = 1.0
    Y = _richardson(state, V, r_cur, ratio, tol)
    S = V.T @ Y
    lam = np.linalg.solve(0.5 * (S + S.T), e)
    return Y @ lam


def _richardson(state: InverseState, V, r_cur, ratio, tol) -> np.ndarray:
    start = state.cache if state.cache is not None and state.cache.shape == V.shape else None
    for attempt in range(2):
        # Q(r_hat) <= Q(r) <= ratio Q(r_hat), so damping 2/(1+ratio) contracts
        omega = 2.0 / (1.0 + ratio)
        Z = state.Z_hat
        try:
            Y, its = preconditioned_solve(
                lambda R: omega * (Z @ R), lambda v: state.apply(v, r_cur), V, tol, x0=start
            )
        except NoConvergence as exc:
            state.richardson_iterations += exc.iterations
            if attempt:
                raise
            full_refresh(state, r_cur)
            ratio = 1.0
            continue
        state.richardson_iterations += its
        state.cache = Y
        return Y
    raise AssertionError("unreachable")


class MaintainedSystem:
    """Drop-in replacement for the direct weighted solver with a cached inverse."""

    def __init__(self, A, M, N, space: AffineConstraint | None = None, tol: float = RICHARDSON_TOL):
        N = as_matrix(N)
        n = N.shape[1]
        self.M = as_matrix(M, n) if M is not None and np.size(M) else np.zeros((0, n))
        self.N = N
        self.space = space if space is not None else AffineConstraint(A, n)
        self.A = self.space.A
        self.tol = tol
        self.coef_m = 1.0
        self.coef_n = 1.0
        self.state: InverseState | None = None
        self._r: np.ndarray | None = None
        self.linear_solves = 0
        self.max_ledger_ratio = 1.0
        self.ledger_violations = 0
        self._totals = dict.fromkeys(
            ("woodbury_updates", "full_refreshes", "richardson_iterations", "changed_entries",
             "ledger_repairs"),
            0,
        )

    def _retire(self) -> None:
        if self.state is not None:
            for key in self._totals:
                self._totals[key] += getattr(self.state, key)

    def _total(self, key: str) -> int:
        live = getattr(self.state, key) if self.state is not None else 0
        return self._totals[key] + live

    woodbury_updates = property(lambda self: self._total("woodbury_updates"))
    full_refreshes = property(lambda self: self._total("full_refreshes"))
    richardson_iterations = property(lambda self: self._total("richardson_iterations"))
    changed_entries = property(lambda self: self._total("changed_entries"))
    ledger_repairs = property(lambda self: self._total("ledger_repairs"))

    def begin(self, coef_m: float, coef_n: float, r) -> None:
        self._retire()
        self.coef_m = float(coef_m)
        self.coef_n = float(coef_n)
        r = np.ones(self.N.shape[0]) if r is None else as_vector(r, self.N.shape[0])
        self.state = inverse_init(math.sqrt(self.coef_m) * self.M, math.sqrt(self.coef_n) * self.N, r)
        self._r = r.copy()

    def solve(self, c, r) -> np.ndarray:
        if self.state is None:
            self.begin(self.coef_m, self.coef_n, r)
        r = as_vector(r, self.N.shape[0])
        if not np.array_equal(r, self._r):
            update_inverse(self.state, self._r, r)
            self._r = r.copy()
        ratio = ledger_ratio(self.state, r)
        self.max_ledger_ratio = max(self.max_ledger_ratio, ratio)
        if ratio > ledger_ceiling(self.state.m) * (1.0 + 1e-12) or ratio < 1.0:
            self.ledger_violations += 1
        self.linear_solves += 1
        return maintained_oracle_solve(
            self.state, self.A, self.state.M, self.state.N, c, r, self.tol, self.space
        )


class MaintenanceBackend:
    """Backend whose weighted solves reuse a lazily updated inverse."""

    name = "inverse-maintenance"

    def __init__(self, tol: float = RICHARDSON_TOL):
        self.tol = tol

    def prepare(self, A, M, N, space: AffineConstraint | None = None) -> MaintainedSystem:
        return MaintainedSystem(A, M, N, space, self.tol)
