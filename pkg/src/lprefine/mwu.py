"""Width-reduced multiplicative-weights solver for ``min D^T M^T M D + ||N D||_p^p``.

The solver only ever answers the decision version: given ``zeta`` that
upper-bounds the optimum over ``A D = c``, it returns a feasible ``D`` whose
quadratic part is at most ``4 zeta`` and whose p-norm part is at most
``e 3^p zeta``.  Each iteration solves one weighted least-squares problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import UnsupportedExponent, WidthBudgetExceeded
from .linalg import DirectBackend, as_matrix, as_vector


def _ceil(value: float) -> int:
    # guard against 48.000000000001 style rounding above an exact integer
    return int(math.ceil(value * (1.0 - 1e-12)))


@dataclass(frozen=True)
class MwuParams:
    rho: float
    beta: float
    alpha: float
    tau: float
    T: int
    m1: int
    p: float

    @property
    def width_budget(self) -> int:
        """Largest number of width-reduction steps allowed before giving up."""
        p, m1 = self.p, self.m1
        val = 2.0 ** (-p / (p - 2)) * self.rho**2 * m1 ** (2.0 / p) * self.beta ** (-2.0 / (p - 2))
        return _ceil(val)

    @property
    def width_growth(self) -> float:
        """Per-width-step growth factor in the weight-potential cap."""
        p, m1 = self.p, self.m1
        return 1.0 + 2.0 ** (p / (p - 2)) / (
            self.rho**2 * m1 ** (2.0 / p) * self.beta ** (-2.0 / (p - 2))
        )

    def phi_cap(self, i: int, k: int) -> float:
        return (2.0 * self.alpha * i + self.m1 ** (1.0 / self.p)) ** self.p * self.width_growth**k

    def psi_ceiling(self, phi_value: float, zeta: float) -> float:
        p = self.p
        return zeta ** (2.0 / p) * (
            self.m1 ** ((p - 2) / p) + 3.0 ** (-(p - 2)) * phi_value ** ((p - 2) / p)
        )

    def psi_gain(self, zeta: float) -> float:
        return self.tau ** (2.0 / self.p) * zeta ** (2.0 / self.p) / 4.0


def compute_params(m1: int, p: float) -> MwuParams:
    if p <= 2:
        raise UnsupportedExponent("the MWU solver needs p > 2; solve p = 2 directly")
    if m1 < 2:
        raise ValueError("the MWU solver needs at least two rows in N")
    denom = p * (3 * p - 2)
    rho = m1 ** ((p * p - 4 * p + 2) / denom)
    beta = 3.0 ** (p - 1) * m1 ** ((p - 2) / (3 * p - 2))
    alpha = 3.0 ** (-(p - 1) / p) / p * m1 ** (-(p * p - 5 * p + 2) / denom)
    tau = 3.0**p * m1 ** ((p - 1) * (p - 2) / (3 * p - 2))
    T = _ceil(m1 ** (1.0 / p) / alpha)
    return MwuParams(rho, beta, alpha, tau, T, int(m1), float(p))


def oracle_coefficients(m1: int, zeta: float, p: float) -> tuple[float, float]:
    """Multipliers of ``|M D|^2`` and of ``sum r (N D)^2`` in the weighted oracle."""
    return m1 ** ((p - 2) / p) * zeta ** (-(p - 2) / p), 3.0 ** (-(p - 2))


def phi(w, p: float) -> float:
    """Weight potential ``||w||_p^p``."""
    return float(np.sum(np.asarray(w, dtype=float) ** p))


def oracle_step(A, M, N, c, w, zeta: float, p: float, backend=None) -> np.ndarray:
    """One weighted least-squares solve with resistances ``w^(p-2)``."""
    if zeta <= 0:
        raise ValueError("zeta must be positive")
    N = as_matrix(N)
    w = as_vector(w, N.shape[0])
    system = (backend or DirectBackend()).prepare(A, M, N)
    r = w ** (p - 2)
    system.begin(*oracle_coefficients(N.shape[0], zeta, p), r)
    return system.solve(c, r)


def _oracle_value(system, delta: np.ndarray, NDelta: np.ndarray, r: np.ndarray) -> float:
    MD = system.M @ delta
    return system.coef_m * float(MD @ MD) + system.coef_n * float(np.dot(r, NDelta * NDelta))


def psi(r, A, M, N, c, zeta: float, p: float, backend=None) -> float:
    """Energy potential: the oracle objective at its minimizer for resistances ``r``."""
    N = as_matrix(N)
    r = as_vector(r, N.shape[0])
    if not np.any(c):
        return 0.0
    system = (backend or DirectBackend()).prepare(A, M, N)
    system.begin(*oracle_coefficients(N.shape[0], zeta, p), r)
    delta = system.solve(c, r)
    return _oracle_value(system, delta, N @ delta, r)


@dataclass
class MwuStep:
    """Instrumentation for one loop iteration, taken at state ``(i, k)``."""

    kind: str
    i: int
    k: int
    phi: float
    psi: float
    width: float
    oracle_sum: float
    precondition_gain: bool = False
    energy_increment: float = 0.0
    resistance_excess: float = 0.0
    reduced: int = 0


@dataclass
class MwuState:
    w: np.ndarray
    x_accum: np.ndarray
    params: MwuParams
    i: int = 0
    k: int = 0
    linear_solves: int = 0
    final_phi: float = 0.0
    steps: list = field(default_factory=list)


def mwu_solve(
    A,
    M,
    N,
    c,
    zeta: float,
    p: float,
    backend=None,
    *,
    system=None,
    instrument: bool = False,
    width_reduction: bool = True,
) -> tuple[np.ndarray, MwuState]:
    """Run the width-reduced MWU loop and return ``x / T`` with its state.

    ``system`` lets callers reuse a prepared weighted solver across calls with
    the same ``A, M, N``.  ``width_reduction=False`` gives the slow variant that
    always takes the primal step (a diagnostic mode).
    """
    if zeta <= 0:
        raise ValueError("zeta must be positive")
    N = as_matrix(N)
    m1, n = N.shape
    params = compute_params(m1, p)
    if system is None:
        system = (backend or DirectBackend()).prepare(A, M, N)
    c = as_vector(c)
    state = MwuState(np.ones(m1), np.zeros(n), params)
    if not np.any(c):
        state.final_phi = phi(state.w, p)
        return np.zeros(n), state

    coef_m, coef_n = oracle_coefficients(m1, zeta, p)
    zeta_root = zeta ** (1.0 / p)
    width_cut = params.rho * zeta_root
    boost = 2.0 ** (1.0 / (p - 2))
    budget = params.width_budget
    w = state.w
    r = np.ones(m1)
    system.begin(coef_m, coef_n, r)
    solves_before = system.linear_solves
    while state.i < params.T:
        delta = system.solve(c, r)
        ND = N @ delta
        aND = np.abs(ND)
        width = float(np.sum(aND**p))
        record = None
        if instrument:
            oracle_sum = float(np.dot(r, ND * ND))
            psi_now = _oracle_value(system, delta, ND, r)
            record = MwuStep("primal", state.i, state.k, phi(w, p), psi_now, width, oracle_sum)
            record.precondition_gain = bool(
                params.tau ** (2.0 / p) * zeta ** (2.0 / p) >= 4.0 * 3.0 ** (p - 2) * psi_now / params.beta
                and params.tau * zeta ** (2.0 / p) >= 2.0 * 3.0 ** (p - 2) * psi_now * params.rho ** (p - 2)
            )
        if width <= params.tau * zeta or not width_reduction:
            step = params.alpha * aND / zeta_root
            w_new = w + step
            r_new = w_new ** (p - 2)
            if record is not None:
                lhs = (r_new - r) / r
                rhs = (1.0 + step) ** (p - 2) - 1.0
                record.resistance_excess = float(np.max((lhs - rhs) / (1.0 + rhs)))
                record.energy_increment = coef_n * float(np.dot(1.0 - r / r_new, r * ND * ND))
            w = w_new
            r = r_new
            state.x_accum += delta
            state.i += 1
        else:
            hit = (aND >= width_cut) & (r <= params.beta)
            if record is not None:
                record.kind = "width"
                record.reduced = int(hit.sum())
            if not hit.any():
                state.w = w
                state.linear_solves = system.linear_solves - solves_before
                raise WidthBudgetExceeded(
                    "width reduction found no coordinate to boost", state
                )
            w = w.copy()
            w[hit] *= boost
            r_new = w ** (p - 2)
            if record is not None:
                record.energy_increment = coef_n * float(np.dot(1.0 - r / r_new, r * ND * ND))
            r = r_new
            state.k += 1
            if state.k > budget:
                state.w = w
                state.linear_solves = system.linear_solves - solves_before
                if record is not None:
                    state.steps.append(record)
                raise WidthBudgetExceeded(
                    f"width steps exceeded the budget of {budget}", state
                )
        if record is not None:
            state.steps.append(record)
    state.w = w
    state.final_phi = phi(w, p)
    state.linear_solves = system.linear_solves - solves_before
    return state.x_accum / params.T, state
