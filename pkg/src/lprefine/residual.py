"""Approximate residual solvers and the complete high-accuracy solver.

The residual problem is attacked by fixing the linear term ``g^T D = zeta/2``
for a halving sequence of ``zeta`` values and handing each resulting
decision problem to the MWU solver.  For large ``p`` the p-norm term is
swapped for a q-norm with ``q`` close to ``ln m``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import AllProbesFailed, InfeasibleConstraint, UnsupportedExponent, WidthBudgetExceeded
from .linalg import AffineConstraint, DirectBackend, cholesky_solve, tikhonov_shift
from .mwu import mwu_solve
from .refinement import (
    ProblemInstance,
    ResidualOutcome,
    ResidualProblem,
    SolverReport,
    iterative_refinement,
    pnorm_p,
    warm_start_l2,
)

log = logging.getLogger(__name__)


@dataclass
class ZetaProbe:
    zeta: float
    delta: np.ndarray | None
    mwu_outcome: str
    picked_objective: float = math.inf
    kappa: float = math.inf
    a: float = math.nan
    primal_steps: int = 0
    width_steps: int = 0
    states: list | None = None


def log_m_exponent(m: int) -> int:
    """``ceil(ln m)``, at least 3 so that the MWU exponent stays above 2."""
    return max(math.ceil(math.log(max(m, 2)) - 1e-12), 3)


def uses_logm_path(p: float, m: int) -> bool:
    return p > 2 and p >= math.log(max(m, 2))


def zeta_schedule(nu: float, p: float) -> list[float]:
    """``nu, nu/2, ...`` while strictly above ``nu / (32 p)``."""
    out = []
    zeta = nu
    floor = nu / (32.0 * p)
    while zeta > floor:
        out.append(zeta)
        zeta /= 2.0
    return out


def rescale_probe(delta, rp: ResidualProblem, zeta: float) -> tuple[np.ndarray, float]:
    """Shrink a probe output by ``5 a^2`` where ``a`` measures how far it overshoots ``zeta``."""
    delta = np.asarray(delta, dtype=float)
    quad = rp.R.value(delta)
    lp = pnorm_p(rp.N @ delta, rp.p)
    a = max(math.sqrt(max(quad, 0.0) / zeta), (lp / zeta) ** (1.0 / rp.p), 1.0)
    return delta / (5.0 * a * a), 100.0 * a * a


def ray_maximizer(rp: ResidualProblem, delta) -> float:
    """Largest-residual multiple ``t >= 0`` of ``delta``: argmax of ``res(t delta)``."""
    delta = np.asarray(delta, dtype=float)
    a = float(rp.g @ delta)
    quad = rp.R.value(delta)
    lp = pnorm_p(rp.N @ delta, rp.p)
    if a <= 0.0:
        return 0.0
    bounds = [a / (2.0 * quad)] if quad > 0 else []
    if lp > 0:
        bounds.append((a / (rp.p * lp)) ** (1.0 / (rp.p - 1.0)))
    if not bounds:
        return 0.0
    hi = min(bounds)

    def slope(t):
        return a - 2.0 * quad * t - rp.p * lp * t ** (rp.p - 1.0)

    if slope(hi) >= 0.0:
        return hi
    return brentq(slope, 0.0, hi, xtol=1e-15 * hi, rtol=1e-13)


def p2q_exponents(p: float, q: float, m: int) -> tuple[float, float]:
    """Powers of ``zeta`` and ``m`` multiplying the q-norm term (before the 1/4)."""
    return 1.0 - q / p, min(q / p - 1.0, 0.0)


def p2q_back_scale(p: float, q: float, m: int, beta: float) -> float:
    return m ** (-(p / (p - 1.0)) * abs(1.0 / p - 1.0 / q)) / (256.0 * beta)


def p2q_kappa(p: float, q: float, m: int, beta: float) -> float:
    return 2.0**14 * beta**2 * m ** ((p / (p - 1.0)) * abs(1.0 / p - 1.0 / q))


def p_to_q_residual(rp: ResidualProblem, q: float, zeta: float, beta: float = 1.0) -> ResidualProblem:
    """Residual problem with the p-norm term replaced by a scaled q-norm term.

    The q-norm term carries ``(1/4) zeta^(1-q/p) m^min(q/p-1, 0)``, folded into
    ``N``.  ``back_scale`` holds the factor that maps a ``beta``-approximate
    q-solution back to the p-problem.
    """
    p = rp.p
    if p < 2 or q < 2:
        raise UnsupportedExponent("both exponents must be at least 2")
    m = rp.N.shape[0]
    ez, em = p2q_exponents(p, q, m)
    coef = 0.25 * zeta**ez * m**em
    Nq = coef ** (1.0 / q) * rp.N
    return ResidualProblem(
        rp.g, rp.R, Nq, rp.A, float(q), rp.x, rp.inst, p2q_back_scale(p, q, m, beta)
    )


def _probe_matrix(rp: ResidualProblem) -> np.ndarray:
    return np.vstack([rp.A, rp.g[None, :]])


def _probe_rhs(rp: ResidualProblem, zeta: float) -> np.ndarray:
    c = np.zeros(rp.A.shape[0] + 1)
    c[-1] = zeta / 2.0
    return c


def _zero_outcome(rp: ResidualProblem, reason: str) -> ResidualOutcome:
    return ResidualOutcome(np.zeros(rp.n), kappa=1.0, extras={"zero_reason": reason})


def _select(rp: ResidualProblem, cands: list) -> tuple[np.ndarray, float, float]:
    """Pick the candidate with the smallest objective after ``x - D/p``; earliest wins ties."""
    best = None
    for zeta, delta in cands:
        val = rp.step_objective(delta)
        if not math.isfinite(val):
            continue
        if best is None or val < best[2]:
            best = (delta, zeta, val)
    if best is None:
        raise AllProbesFailed("every candidate step produced a non-finite objective")
    return best


def _run_probe(rp_probe: ResidualProblem, Aug, F, c, zeta, system, instrument, probes):
    try:
        delta, state = mwu_solve(
            Aug, F, rp_probe.N, c, zeta, rp_probe.p, system=system, instrument=instrument
        )
    except WidthBudgetExceeded as exc:
        st = exc.state
        probes.append(
            ZetaProbe(zeta, None, "width_budget_exceeded",
                      primal_steps=st.i if st else 0, width_steps=st.k if st else 0)
        )
        return None, st
    probe = ZetaProbe(zeta, delta, "ok", primal_steps=state.i, width_steps=state.k)
    if instrument:
        probe.states = [state]
    probes.append(probe)
    return delta, state


def _quadratic_probe(system, c) -> np.ndarray:
    system.begin(1.0, 1.0, None)
    return system.solve(c, np.ones(system.N.shape[0]))


def residual_solve(rp: ResidualProblem, nu: float, backend=None, *, info: bool = False,
                   instrument: bool = False, ray: bool = False):
    """Approximately maximize the residual by probing ``zeta = nu, nu/2, ...``.

    Each probe solves ``min D^T R D + ||N D||_p^p`` with ``A D = 0`` and
    ``g^T D = zeta/2``.  Both the raw probe output and its rescaled version
    are scored by the objective after the step ``x - D/p``; the best one is
    returned.  The reported quality is the largest ``100 a^2`` over probes.
    ``ray=True`` also scores each probe direction at its residual-maximizing
    length; this can only improve the selected step.  With ``info=True`` a
    :class:`ResidualOutcome` is returned instead of the bare vector.
    """
    out = _residual_solve(rp, nu, backend, instrument, ray)
    return out if info else out.delta


def _residual_solve(rp, nu, backend, instrument, ray=False) -> ResidualOutcome:
    if nu <= 0:
        raise ValueError("nu must be positive")
    backend = backend or DirectBackend()
    if not np.any(rp.g):
        return _zero_outcome(rp, "zero gradient")
    Aug = _probe_matrix(rp)
    space = AffineConstraint(Aug, rp.n)
    try:
        space.particular(_probe_rhs(rp, 1.0))
    except InfeasibleConstraint:
        return _zero_outcome(rp, "linear term constant on the feasible subspace")
    F = rp.r_factor()
    p = rp.p
    if p == 2:
        system = DirectBackend().prepare(Aug, F, rp.N, space)
    else:
        system = backend.prepare(Aug, F, rp.N, space)
    probes: list[ZetaProbe] = []
    cands = []
    kappas = []
    for zeta in zeta_schedule(nu, p):
        c = _probe_rhs(rp, zeta)
        if p == 2:
            delta = _quadratic_probe(system, c)
            probes.append(ZetaProbe(zeta, delta, "ok"))
        else:
            delta, _ = _run_probe(rp, Aug, F, c, zeta, system, instrument, probes)
            if delta is None:
                continue
        scaled, kap = rescale_probe(delta, rp, zeta)
        probes[-1].kappa = kap
        probes[-1].a = math.sqrt(kap / 100.0)
        kappas.append(kap)
        cands.append((zeta, delta))
        cands.append((zeta, scaled))
        if ray:
            cands.append((zeta, ray_maximizer(rp, delta) * delta))
    if not cands:
        raise AllProbesFailed(
            "every zeta probe exceeded its width budget",
            system.linear_solves,
            sum(pr.width_steps for pr in probes),
        )
    delta, zeta, val = _select(rp, cands)
    for probe in probes:
        if probe.zeta == zeta:
            probe.picked_objective = val
    return ResidualOutcome(
        delta=delta,
        kappa=max(kappas),
        linear_solves=system.linear_solves,
        primal_steps=sum(pr.primal_steps for pr in probes),
        width_steps=sum(pr.width_steps for pr in probes),
        probes=probes,
        extras=_backend_extras(system),
    )


def _backend_extras(system) -> dict:
    extras = {}
    for key in ("woodbury_updates", "full_refreshes", "richardson_iterations", "changed_entries",
                "ledger_repairs"):
        if hasattr(system, key):
            extras[key] = getattr(system, key)
    return extras


def logm_residual_solve(rp: ResidualProblem, nu: float, backend=None, *, info: bool = False,
                        instrument: bool = False, ray: bool = False):
    """Residual solver that runs MWU with exponent ``q = log_m_exponent(m)``.

    For each probe the p-norm term is replaced by the scaled q-norm term.
    Two candidates per probe are scored: the raw output times
    ``m^(-1/(p-1))``, and the binary-search-rescaled output times the
    q-to-p back-scaling with quality ``beta = a^2``.
    """
    out = _logm_residual_solve(rp, nu, backend, instrument, ray)
    return out if info else out.delta


def _logm_residual_solve(rp, nu, backend, instrument, ray=False) -> ResidualOutcome:
    if nu <= 0:
        raise ValueError("nu must be positive")
    backend = backend or DirectBackend()
    p = rp.p
    m = rp.N.shape[0]
    q = log_m_exponent(m)
    if not np.any(rp.g):
        return _zero_outcome(rp, "zero gradient")
    Aug = _probe_matrix(rp)
    space = AffineConstraint(Aug, rp.n)
    try:
        space.particular(_probe_rhs(rp, 1.0))
    except InfeasibleConstraint:
        return _zero_outcome(rp, "linear term constant on the feasible subspace")
    F = rp.r_factor()
    alpha_raw = m ** (-1.0 / (p - 1.0))
    probes: list[ZetaProbe] = []
    cands = []
    kappas = []
    solves = 0
    extras: dict = {}
    for zeta in zeta_schedule(nu, p):
        rq = p_to_q_residual(rp, q, zeta)
        system = backend.prepare(Aug, F, rq.N, space)
        c = _probe_rhs(rp, zeta)
        delta, _ = _run_probe(rq, Aug, F, c, zeta, system, instrument, probes)
        solves += system.linear_solves
        for key, val in _backend_extras(system).items():
            extras[key] = extras.get(key, 0) + val
        if delta is None:
            continue
        scaled, kap = rescale_probe(delta, rq, zeta)
        beta = kap / 100.0
        probes[-1].a = math.sqrt(beta)
        probes[-1].kappa = p2q_kappa(p, q, m, beta)
        kappas.append(probes[-1].kappa)
        cands.append((zeta, alpha_raw * delta))
        cands.append((zeta, p2q_back_scale(p, q, m, beta) * scaled))
        if ray:
            cands.append((zeta, ray_maximizer(rp, delta) * delta))
    if not cands:
        raise AllProbesFailed(
            "every zeta probe exceeded its width budget",
            solves,
            sum(pr.width_steps for pr in probes),
        )
    delta, zeta, val = _select(rp, cands)
    for probe in probes:
        if probe.zeta == zeta:
            probe.picked_objective = val
    return ResidualOutcome(
        delta=delta,
        kappa=max(kappas),
        linear_solves=solves,
        primal_steps=sum(pr.primal_steps for pr in probes),
        width_steps=sum(pr.width_steps for pr in probes),
        probes=probes,
        extras=extras,
    )


def exact_quadratic_step(rp: ResidualProblem) -> ResidualOutcome:
    """For ``p = 2``: the ``D`` with ``A D = 0`` minimizing the objective at ``x - D/2``."""
    inst = rp.inst
    if inst is None or rp.p != 2:
        raise ValueError("exact steps need a p = 2 residual problem with its instance")
    space = AffineConstraint(inst.A, inst.n)
    Z = space.Z
    grad = inst.d_vec + 2.0 * inst.M.T @ (inst.M @ rp.x) + 2.0 * inst.N.T @ (inst.N @ rp.x)
    if Z.shape[1] == 0:
        return ResidualOutcome(np.zeros(inst.n), kappa=1.0, linear_solves=0)
    GM = inst.M @ Z
    GN = inst.N @ Z
    H = GM.T @ GM + GN.T @ GN
    u = cholesky_solve(H, 0.5 * (Z.T @ grad), tikhonov_shift(float(np.trace(H)), Z.shape[1]))
    return ResidualOutcome(2.0 * (Z @ u), kappa=1.0, linear_solves=1)


def select_residual_solver(inst: ProblemInstance) -> str:
    if inst.p == 2:
        return "exact"
    if uses_logm_path(inst.p, inst.m2):
        return "logm"
    return "mwu"


def complete_solve(
    inst: ProblemInstance,
    x0=None,
    eps: float = 1e-8,
    backend=None,
    *,
    kappa: float | None = None,
    nu0: float | None = None,
    rule: str = "decrease",
    max_solves: int | None = None,
    path: str | None = None,
    ray: bool = True,
    rel_eps: float | None = None,
) -> tuple[np.ndarray, SolverReport]:
    """High-accuracy solve: refinement driven by the residual solver chosen for ``p``.

    ``p = 2`` uses an exact quadratic step; ``p >= ln m`` uses the q-norm
    path; everything else uses the binary-search MWU residual solver.
    ``ray`` is forwarded to the residual solver (see :func:`residual_solve`).
    """
    warm = x0 is None
    if warm:
        x0 = warm_start_l2(inst)
    path = path or select_residual_solver(inst)
    if path == "exact":
        solver = lambda rp, nu: exact_quadratic_step(rp)  # noqa: E731
    elif path == "logm":
        solver = lambda rp, nu: _logm_residual_solve(rp, nu, backend, False, ray)  # noqa: E731
    elif path == "mwu":
        solver = lambda rp, nu: _residual_solve(rp, nu, backend, False, ray)  # noqa: E731
    else:
        raise ValueError(f"unknown residual path {path!r}")
    x, report = iterative_refinement(
        inst, x0, solver, kappa, eps, nu0, rule=rule, max_solves=max_solves, rel_eps=rel_eps
    )
    if warm:
        report.linear_solves += 1
    report.extras["path"] = path
    if path == "logm":
        report.extras["q"] = log_m_exponent(inst.m2)
    return x, report
