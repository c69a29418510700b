"""Iteratively reweighted least squares for ``min ||N x||_p^p`` over ``A x = b``.

:func:`irls_solve` is the convergent variant: every weighted least-squares
problem carries a padding ``s`` tied to the current error bound ``nu``, the step
length comes from a line search, and ``nu`` is halved whenever the step makes
too little residual progress.  :func:`classic_irls` is the textbook fixed-point
iteration, kept as a baseline; for ``p`` well above 3 it can oscillate.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DegenerateStep
from .linalg import AffineConstraint, as_matrix, as_vector, cholesky_solve, tikhonov_shift
from .refinement import (
    ProblemInstance,
    SolverReport,
    build_residual,
    eval_residual,
    p_weights,
    pnorm_p,
    warm_start_l2,
)


@dataclass
class IrlsStep:
    delta: np.ndarray
    k_ratio: float
    alpha0: float
    kappa: float
    s: float = 0.0


def irls_padding(nu: float, m: int, p: float) -> float:
    """``s = (nu / m)^((p-2)/p)``."""
    return (nu / m) ** ((p - 2.0) / p)


def irls_residual(x, N, A, nu: float, p: float, space: AffineConstraint | None = None) -> IrlsStep:
    """Maximize ``g^T N D - D^T N^T (R + s I) N D`` over ``A D = 0``.

    Here ``g = |Nx|^(p-2) Nx`` and ``R = 2 Diag(|Nx|^(p-2))``.  Raises
    :class:`DegenerateStep` when the maximizer is zero.
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    N = as_matrix(N)
    m, n = N.shape
    x = as_vector(x, n)
    space = space if space is not None else AffineConstraint(A, n)
    Nx = N @ x
    wts = p_weights(Nx, p)
    g = wts * Nx
    s = irls_padding(nu, m, p)
    pad = 2.0 * wts + s
    Z = space.Z
    if Z.shape[1] == 0:
        raise DegenerateStep("the constraint leaves no room to move")
    G = N @ Z
    H = G.T @ (pad[:, None] * G)
    u = cholesky_solve(H, 0.5 * (G.T @ g), tikhonov_shift(float(np.trace(H)), Z.shape[1]))
    delta = Z @ u
    ND = N @ delta
    quad = float(np.dot(pad, ND * ND))
    if quad <= 0.0 or not np.any(ND):
        raise DegenerateStep("weighted least-squares step vanished")
    k_ratio = pnorm_p(ND, p) / quad
    alpha0 = min(0.5, 1.0 / (2.0 * k_ratio ** (1.0 / (p - 1.0))))
    return IrlsStep(delta, k_ratio, alpha0, 2.0**13 * p * p / alpha0, s)


def line_search(N, x, delta, p: float) -> float:
    """``argmin_{beta >= 0} ||N (x - beta delta)||_p^p``.

    The bracket starts at ``[0, 1]`` and doubles while the objective still
    falls at its right end, up to ``4 p``.
    """
    N = as_matrix(N)
    y = N @ as_vector(x, N.shape[1])
    v = N @ as_vector(delta, N.shape[1])
    if not np.any(v):
        return 0.0

    def f(beta):
        return float(np.sum(np.abs(y - beta * v) ** p))

    cap = 4.0 * p
    hi = 1.0
    while hi < cap and f(hi) < f(0.5 * hi):
        hi = min(2.0 * hi, cap)
    res = minimize_scalar(
        f, bounds=(0.0, hi), method="bounded", options={"xatol": 1e-12 * hi, "maxiter": 500}
    )
    beta = float(res.x)
    # bounded search never lands exactly on the ends
    for end in (0.0, hi):
        if f(end) < f(beta):
            beta = end
    return beta


def irls_solve(
    A,
    N,
    b,
    p: float,
    eps: float = 1e-8,
    backend=None,
    *,
    max_iters: int | None = None,
) -> tuple[np.ndarray, SolverReport]:
    """Convergent IRLS; returns ``x`` with ``||Nx||_p^p <= (1 + eps) OPT``.

    ``backend`` is accepted for interface symmetry; each weighted problem is a
    single dense factorization.
    """
    start = time.perf_counter()
    inst = ProblemInstance.build(A, None, N, None, b, p)
    space = AffineConstraint(inst.A, inst.n)
    x = warm_start_l2(inst)
    fx = pnorm_p(inst.N @ x, p)
    nu = fx
    report = SolverReport(nu0=nu, linear_solves=1)
    report.objective_trace.append(fx)
    report.nu_trace.append(nu)
    report.extras["alpha_trace"] = []
    if p == 2:
        report.iterations = 1
        report.wall_seconds = time.perf_counter() - start
        return x, report
    while nu > 0.5 * eps * fx:
        if max_iters is not None and report.iterations >= max_iters:
            report.status = "max_iters_reached"
            break
        report.iterations += 1
        report.linear_solves += 1
        try:
            step = irls_residual(x, inst.N, inst.A, nu, p, space)
        except DegenerateStep:
            nu /= 2.0
            report.halvings += 1
            report.objective_trace.append(fx)
            report.nu_trace.append(nu)
            continue
        alpha = line_search(inst.N, x, step.delta, p)
        rp = build_residual(inst, x)
        progress = eval_residual(rp, alpha * step.delta)
        x = x - alpha * step.delta / p
        fx = pnorm_p(inst.N @ x, p)
        report.kappa_trace.append(step.kappa)
        report.extras["alpha_trace"].append(alpha)
        if progress < nu / (32.0 * p * step.kappa):
            nu /= 2.0
            report.halvings += 1
        else:
            report.accepted_steps += 1
        report.objective_trace.append(fx)
        report.nu_trace.append(nu)
    report.wall_seconds = time.perf_counter() - start
    return x, report


def iteration_ceiling(f0: float, m: int, p: float, eps: float) -> float:
    """``32 p kappa_max log2(f0 m / eps)`` with the worst-case ``kappa`` of a padded step."""
    kappa_max = 2.0**13 * p * p * max(2.0, 2.0 * m ** ((p - 2.0) / (2.0 * (p - 1.0))))
    return 32.0 * p * kappa_max * math.log2(max(f0 * m / eps, 2.0))


def classic_irls(A, N, b, p: float, max_iters: int = 100) -> tuple[np.ndarray, list]:
    """Fixed-point IRLS ``x <- argmin_{Ax=b} sum |N x_t|^(p-2) (N x)^2``.

    Weights are floored at ``1e-12`` times their maximum.  Returns the last
    iterate and the objective trace, starting with the least-squares point.
    """
    inst = ProblemInstance.build(A, None, N, None, b, p)
    space = AffineConstraint(inst.A, inst.n)
    x0 = space.particular(inst.b)
    Z = space.Z
    G = inst.N @ Z
    h = inst.N @ x0
    x = warm_start_l2(inst)
    trace = [pnorm_p(inst.N @ x, p)]
    for _ in range(max_iters):
        w = np.abs(inst.N @ x) ** (p - 2.0)
        top = w.max(initial=0.0)
        w = np.maximum(w, 1e-12 * top) if top > 0 else np.ones_like(w)
        if Z.shape[1]:
            H = G.T @ (w[:, None] * G)
            u = cholesky_solve(H, -(G.T @ (w * h)), tikhonov_shift(float(np.trace(H)), Z.shape[1]))
            x = x0 + Z @ u
        else:
            x = x0
        trace.append(pnorm_p(inst.N @ x, p))
    return x, trace
