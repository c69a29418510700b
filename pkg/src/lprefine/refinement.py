"""Objective, residual problem and the iterative-refinement driver."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    AllProbesFailed,
    DimensionMismatch,
    InfeasiblePoint,
    SolverContractViolation,
    UnsupportedExponent,
)
from .linalg import AffineConstraint, FactorBlock, QuadraticForm, as_matrix, as_vector

log = logging.getLogger(__name__)

FEASIBLE_TOL = 1e-7


@dataclass(frozen=True)
class ProblemInstance:
    """``min d^T x + ||M x||_2^2 + ||N x||_p^p`` subject to ``A x = b``."""

    A: np.ndarray
    M: np.ndarray
    N: np.ndarray
    d_vec: np.ndarray
    b: np.ndarray
    p: float

    @classmethod
    def build(cls, A=None, M=None, N=None, d=None, b=None, p: float = 2.0) -> "ProblemInstance":
        if N is None:
            raise DimensionMismatch("the p-norm matrix N is required")
        N = as_matrix(N)
        n = N.shape[1]
        A = np.zeros((0, n)) if A is None else as_matrix(A, n)
        M = np.zeros((0, n)) if M is None or np.size(M) == 0 else as_matrix(M, n)
        d = np.zeros(n) if d is None else as_vector(d, n)
        b = np.zeros(A.shape[0]) if b is None else as_vector(b, A.shape[0])
        if p < 2:
            raise UnsupportedExponent(f"solver paths need p >= 2, got {p}")
        A, M, N, d, b = (np.array(arr) for arr in (A, M, N, d, b))
        for arr in (A, M, N, d, b):
            arr.setflags(write=False)
        inst = cls(A, M, N, d, b, float(p))
        AffineConstraint(A, n).particular(b)
        return inst

    @property
    def n(self) -> int:
        return self.N.shape[1]

    @property
    def m1(self) -> int:
        return self.M.shape[0]

    @property
    def m2(self) -> int:
        return self.N.shape[0]

    @property
    def m(self) -> int:
        return max(self.m1, self.m2)

    @property
    def is_pure(self) -> bool:
        return not np.any(self.d_vec) and not np.any(self.M)

    def with_p(self, p: float) -> "ProblemInstance":
        return ProblemInstance(self.A, self.M, self.N, self.d_vec, self.b, float(p))

    def feasibility_error(self, x: np.ndarray) -> float:
        if self.A.shape[0] == 0:
            return 0.0
        return float(np.max(np.abs(self.A @ x - self.b)))

    def check_feasible(self, x: np.ndarray) -> None:
        err = self.feasibility_error(x)
        scale = 1.0 + (np.max(np.abs(self.b)) if self.b.size else 0.0)
        if err > FEASIBLE_TOL * scale:
            raise InfeasiblePoint(f"||Ax - b||_inf = {err:.3e} exceeds tolerance")


def pnorm_p(v: np.ndarray, p: float) -> float:
    """``||v||_p^p``."""
    return float(np.sum(np.abs(v) ** p))


def objective(inst: ProblemInstance, x) -> float:
    x = as_vector(x, inst.n)
    Mx = inst.M @ x
    return float(inst.d_vec @ x + Mx @ Mx + pnorm_p(inst.N @ x, inst.p))


def p_weights(Nx: np.ndarray, p: float) -> np.ndarray:
    """``|Nx|^(p-2)`` with exact zeros where ``Nx`` vanishes (for ``p > 2``)."""
    a = np.abs(Nx)
    if p == 2:
        return np.ones_like(a)
    out = np.zeros_like(a)
    nz = a > 0
    out[nz] = a[nz] ** (p - 2)
    return out


@dataclass(frozen=True)
class ResidualProblem:
    """``res(D) = g^T D - D^T R D - ||N D||_p^p`` restricted to ``A D = 0``.

    ``x`` and ``inst`` record where the problem was built so that solvers can
    score candidate steps on the true objective.
    """

    g: np.ndarray
    R: QuadraticForm
    N: np.ndarray
    A: np.ndarray
    p: float
    x: np.ndarray | None = None
    inst: ProblemInstance | None = None
    back_scale: float | None = None

    @property
    def n(self) -> int:
        return self.N.shape[1]

    @property
    def step_p(self) -> float:
        """Divisor used for the update ``x - D / p`` on the original problem."""
        return self.inst.p if self.inst is not None else self.p

    def r_factor(self) -> np.ndarray:
        """Stacked factor ``F`` with ``F^T F = R``."""
        return self.R.stacked_factor()

    def step_objective(self, delta: np.ndarray) -> float:
        if self.inst is None or self.x is None:
            raise ValueError("residual problem carries no base point")
        return objective(self.inst, self.x - delta / self.step_p)


def build_residual(inst: ProblemInstance, x) -> ResidualProblem:
    x = as_vector(x, inst.n)
    inst.check_feasible(x)
    p = inst.p
    Nx = inst.N @ x
    wts = p_weights(Nx, p)
    g = inst.d_vec / p + (2.0 / p) * (inst.M.T @ (inst.M @ x)) + inst.N.T @ (wts * Nx)
    blocks = [FactorBlock(inst.M, 2.0 / p**2), FactorBlock(inst.N, 2.0, wts)]
    R = QuadraticForm(blocks, inst.n)
    return ResidualProblem(g, R, inst.N, inst.A, p, x.copy(), inst)


def eval_residual(rp: ResidualProblem, delta) -> float:
    delta = as_vector(delta, rp.n)
    return float(rp.g @ delta - rp.R.value(delta) - pnorm_p(rp.N @ delta, rp.p))


def gamma_p(t, x, p: float):
    """Quadratic near zero, ``|x|^p`` in the tail; continuous at ``|x| = t``."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    ax = np.abs(x)
    inner = ax <= t
    with np.errstate(divide="ignore", invalid="ignore"):
        quad = np.where(inner, (p / 2.0) * np.where(t > 0, t, 1.0) ** (p - 2) * x * x, 0.0)
    tail = ax**p - (1.0 - p / 2.0) * t**p
    out = np.where(inner, quad, tail)
    return out if out.ndim else float(out)


def precondition_terms(x, delta, p: float):
    """Lower bound, middle term and upper bound of the ``p >= 2`` scalar sandwich."""
    x = np.asarray(x, dtype=float)
    delta = np.asarray(delta, dtype=float)
    ax = np.abs(x)
    ad = np.abs(delta)
    w = ax ** (p - 2)
    mid = np.abs(x + delta) ** p - ax**p - p * w * x * delta
    lower = (p / 8.0) * w * delta**2 + 2.0 ** (-(p + 1)) * ad**p
    upper = 2.0 * p**2 * w * delta**2 + p**p * ad**p
    return lower, mid, upper


def precondition_small_terms(x, delta, p: float):
    """Lower bound, value and upper bound of the ``1 < p < 2`` sandwich on ``|x + delta|^p``."""
    x = np.asarray(x, dtype=float)
    delta = np.asarray(delta, dtype=float)
    ax = np.abs(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        lin = np.where(ax > 0, p * ax ** (p - 2) * x * delta, 0.0)
    gam = gamma_p(ax, delta, p)
    base = ax**p + lin
    value = np.abs(x + delta) ** p
    lower = base + ((p - 1.0) / (p * 2.0**p)) * gam
    upper = base + 2.0**p * gam
    return lower, value, upper


def quadratic_lower_bound(inst: ProblemInstance, n_coef: float = 0.0, shift: float = 0.0):
    """Minimize ``d^T x + ||Mx||^2 + n_coef ||Nx||^2 - shift`` over ``A x = b``.

    Returns ``(value, x)`` or ``None`` when the quadratic is unbounded below.
    """
    space = AffineConstraint(inst.A, inst.n)
    x0 = space.particular(inst.b)
    Z = space.Z
    H = inst.M.T @ inst.M + n_coef * (inst.N.T @ inst.N)
    base = float(inst.d_vec @ x0 + x0 @ H @ x0) - shift
    if Z.shape[1] == 0:
        return base, x0
    G = Z.T @ H @ Z
    h = Z.T @ (inst.d_vec + 2.0 * H @ x0)
    lam, V = np.linalg.eigh(G)
    top = max(lam.max(initial=0.0), 1e-300)
    small = lam <= 1e-10 * top
    hv = V.T @ h
    if np.any(np.abs(hv[small]) > 1e-9 * (1.0 + np.linalg.norm(h))):
        return None
    coef = np.zeros_like(hv)
    coef[~small] = -hv[~small] / (2.0 * lam[~small])
    u = V @ coef
    x = x0 + Z @ u
    value = float(inst.d_vec @ x + x @ H @ x) - shift
    return value, x


def objective_lower_bound(inst: ProblemInstance, x0: np.ndarray) -> float:
    """A certified lower bound on the optimal value.

    Two bounds are combined: dropping the p-norm term, and replacing each
    ``|t|^p`` by the tangent-type minorant ``(p/2) s^(p-2) t^2 - ((p-2)/2) s^p``
    with ``s`` the rms magnitude of ``N x0``.
    """
    p = inst.p
    cands = []
    dropped = quadratic_lower_bound(inst)
    if dropped is not None:
        cands.append(dropped[0])
    m2 = inst.m2
    s = (pnorm_p(inst.N @ x0, p) / m2) ** (1.0 / p) if m2 else 0.0
    if s <= 0:
        s = 1.0
    young = quadratic_lower_bound(
        inst, n_coef=(p / 2.0) * s ** (p - 2), shift=m2 * (p - 2.0) / 2.0 * s**p
    )
    if young is not None:
        cands.append(young[0])
    if not cands:
        raise ValueError("could not certify a finite lower bound on the objective")
    return max(cands)


def warm_start_l2(inst: ProblemInstance) -> np.ndarray:
    """Feasible start minimizing ``d^T x + ||Mx||^2 + ||Nx||^2`` (minimum norm if unbounded)."""
    res = quadratic_lower_bound(inst, n_coef=1.0)
    if res is not None:
        return res[1]
    return AffineConstraint(inst.A, inst.n).particular(inst.b)


def default_nu0(inst: ProblemInstance, x0: np.ndarray) -> float:
    return objective(inst, x0) - objective_lower_bound(inst, x0)


@dataclass
class ResidualOutcome:
    """What a residual solver hands back to the refinement driver."""

    delta: np.ndarray
    kappa: float | None = None
    linear_solves: int = 0
    primal_steps: int = 0
    width_steps: int = 0
    probes: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)


@dataclass
class SolverReport:
    """Run statistics.

    ``events`` holds one ``(kind, kappa)`` pair per driver round, with kind
    ``accept``, ``halve`` or ``failed``; it lines up with ``objective_trace[1:]``.
    """

    objective_trace: list = field(default_factory=list)
    nu_trace: list = field(default_factory=list)
    linear_solves: int = 0
    primal_steps: int = 0
    width_steps: int = 0
    wall_seconds: float = 0.0
    accepted_steps: int = 0
    halvings: int = 0
    failed_rounds: int = 0
    iterations: int = 0
    kappa_trace: list = field(default_factory=list)
    events: list = field(default_factory=list)
    nu0: float = 0.0
    status: str = "converged"
    extras: dict = field(default_factory=dict)

    def absorb(self, out: ResidualOutcome) -> None:
        self.linear_solves += out.linear_solves
        self.primal_steps += out.primal_steps
        self.width_steps += out.width_steps
        for key, val in out.extras.items():
            if isinstance(val, (int, float)):
                self.extras[key] = self.extras.get(key, 0) + val


ResidualSolver = Callable[[ResidualProblem, float], "ResidualOutcome | np.ndarray"]


def iterative_refinement(
    inst: ProblemInstance,
    x0,
    residual_solver: ResidualSolver,
    kappa: float | None,
    eps: float,
    nu0: float | None = None,
    *,
    rule: str = "decrease",
    max_solves: int | None = None,
    rel_eps: float | None = None,
) -> tuple[np.ndarray, SolverReport]:
    """Halving-bound refinement loop.

    Each round solves the residual problem at the current point.  With
    ``rule="residual"`` the step is accepted when ``res(D) >= nu / (32 p kappa)``;
    with the default ``rule="decrease"`` the certified objective decrease
    ``f(x) - f(x - D/p)``, which never falls below ``res(D)``, is compared
    against the same threshold.  Otherwise ``nu`` is halved.  ``kappa=None``
    uses the quality reported by the residual solver on each call.  With
    ``rel_eps`` the loop also stops once ``nu <= rel_eps * f(x)``.
    """
    if rule not in ("decrease", "residual"):
        raise ValueError("rule must be 'decrease' or 'residual'")
    if eps <= 0:
        raise ValueError("eps must be positive")
    start = time.perf_counter()
    x = as_vector(x0, inst.n).copy()
    inst.check_feasible(x)
    p = inst.p
    fx = objective(inst, x)
    if nu0 is None:
        nu0 = default_nu0(inst, x)
    nu = float(nu0)
    report = SolverReport(nu0=nu)
    report.objective_trace.append(fx)
    report.nu_trace.append(nu)
    while nu > eps and (rel_eps is None or nu > rel_eps * fx):
        if max_solves is not None and report.linear_solves >= max_solves:
            report.status = "max_solves_reached"
            break
        rp = build_residual(inst, x)
        try:
            out = residual_solver(rp, nu)
        except AllProbesFailed as exc:
            # every probe overshot: nu is far above the true gap
            report.linear_solves += exc.linear_solves
            report.width_steps += exc.width_steps
            report.iterations += 1
            report.failed_rounds += 1
            report.events.append(("failed", None))
            nu /= 2.0
            report.halvings += 1
            report.objective_trace.append(fx)
            report.nu_trace.append(nu)
            continue
        if not isinstance(out, ResidualOutcome):
            out = ResidualOutcome(np.asarray(out, dtype=float))
        report.absorb(out)
        k = kappa if kappa is not None else out.kappa
        if k is None:
            raise ValueError("no kappa given and the residual solver reported none")
        report.kappa_trace.append(float(k))
        report.iterations += 1
        threshold = nu / (32.0 * p * k)
        x_new = x - out.delta / p
        f_new = objective(inst, x_new)
        progress = fx - f_new if rule == "decrease" else eval_residual(rp, out.delta)
        if progress >= threshold and np.any(out.delta):
            if f_new > fx + 1e-12 * (1.0 + abs(fx)):
                raise SolverContractViolation(
                    f"accepted step raised the objective from {fx!r} to {f_new!r}"
                )
            x, fx = x_new, f_new
            report.accepted_steps += 1
            report.events.append(("accept", float(k)))
            log.debug("accept: f=%.17g nu=%.3e", fx, nu)
        else:
            nu /= 2.0
            report.halvings += 1
            report.events.append(("halve", float(k)))
            log.debug("halve: nu=%.3e", nu)
        report.objective_trace.append(fx)
        report.nu_trace.append(nu)
    report.wall_seconds = time.perf_counter() - start
    return x, report
