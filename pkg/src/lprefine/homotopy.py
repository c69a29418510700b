"""Warm starts for pure p-norm problems by climbing through even exponents.

For ``min ||N x||_p^p`` over ``A x = b`` the least-squares point is solved
first, then the 4-, 8-, ... norm problems up to ``2^floor(log2 p - 1)``, each
to within a factor 2 and each started from the previous answer.  A factor-2
answer for exponent ``k`` is within ``4 m`` of optimal for exponent ``2k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .refinement import ProblemInstance, objective, warm_start_l2
from .residual import complete_solve


@dataclass
class HomotopyStage:
    k: int
    x: np.ndarray
    value: float
    linear_solves: int


def stage_exponents(p: float) -> list[int]:
    """Exponents ``2, 4, ..., 2^floor(log2 p - 1)``; just ``[2]`` when ``p < 4``."""
    if p < 4:
        return [2]
    top = 2 ** math.floor(math.log2(p) - 1.0 + 1e-12)
    out = [2]
    while out[-1] * 2 <= top:
        out.append(out[-1] * 2)
    return out


def homotopy_stages(A, N, b, p: float, backend=None) -> list[HomotopyStage]:
    """Run every stage and return them in order."""
    base = ProblemInstance.build(A, None, N, None, b, 2.0)
    x = warm_start_l2(base)
    stages = [HomotopyStage(2, x, objective(base, x), 1)]
    for k in stage_exponents(p)[1:]:
        inst = base.with_p(float(k))
        # stop once nu <= f/2, which certifies f <= 2 OPT
        floor = 1e-12 * max(objective(inst, x), np.finfo(float).tiny)
        x, report = complete_solve(inst, x, eps=floor, backend=backend, rel_eps=0.5)
        stages.append(HomotopyStage(k, x, objective(inst, x), report.linear_solves))
    return stages


def start_solution(A, N, b, p: float, backend=None) -> np.ndarray:
    """Feasible start whose ``||N x||_p^p`` is within ``O(m)`` of optimal."""
    return homotopy_stages(A, N, b, p, backend)[-1].x
