"""Labeled graphs and the p-Laplacian as a regression problem.

Minimizing ``sum_e w_e |x_u - x_v|^p`` over the unlabeled vertices, with the
labeled ones fixed, is ``min ||A x - b||_p^p`` for ``A = W^(1/p) B_u`` and
``b = -W^(1/p) B_l g``, where ``B_u`` and ``B_l`` are the incidence columns of
the unlabeled and labeled vertices.  The solvers take the equality-constrained
form, so ``y = A x - b`` is added as a variable block.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MalformedGraph


@dataclass(frozen=True)
class LabeledGraph:
    n_total: int
    edges: tuple
    labeled: tuple

    def __post_init__(self):
        if self.n_total < 1:
            raise MalformedGraph("graph needs at least one vertex")
        for u, v, w in self.edges:
            if not (0 <= u < self.n_total and 0 <= v < self.n_total):
                raise MalformedGraph(f"edge ({u}, {v}) references a missing vertex")
            if u == v:
                raise MalformedGraph(f"self-loop at vertex {u}")
            if not np.isfinite(w) or w < 0:
                raise MalformedGraph(f"edge ({u}, {v}) has invalid weight {w}")
        seen = set()
        for vert, val in self.labeled:
            if not 0 <= vert < self.n_total:
                raise MalformedGraph(f"label for missing vertex {vert}")
            if vert in seen:
                raise MalformedGraph(f"vertex {vert} is labeled twice")
            if not np.isfinite(val):
                raise MalformedGraph(f"vertex {vert} has a non-finite label")
            seen.add(vert)

    @classmethod
    def build(cls, edges, labeled, n_total: int | None = None) -> "LabeledGraph":
        edges = tuple((int(u), int(v), float(w)) for u, v, w in edges)
        labeled = tuple((int(k), float(val)) for k, val in labeled)
        if n_total is None:
            verts = [u for u, _, _ in edges] + [v for _, v, _ in edges] + [k for k, _ in labeled]
            n_total = max(verts) + 1 if verts else 0
        return cls(int(n_total), edges, labeled)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, _, w in self.edges], dtype=float)


def _rows(text: str, width: int, what: str):
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != width:
            raise MalformedGraph(f"{what} line {lineno}: expected {width} fields, got {len(parts)}")
        yield lineno, parts


def parse_edges(text: str) -> list[tuple[int, int, float]]:
    """``u v weight`` per line; ``#`` starts a comment."""
    out = []
    for lineno, (u, v, w) in _rows(text, 3, "edge"):
        try:
            out.append((int(u), int(v), float(w)))
        except ValueError as exc:
            raise MalformedGraph(f"edge line {lineno}: {exc}") from exc
    return out


def parse_labels(text: str) -> list[tuple[int, float]]:
    """``vertex value`` per line; ``#`` starts a comment."""
    out = []
    for lineno, (k, val) in _rows(text, 2, "label"):
        try:
            out.append((int(k), float(val)))
        except ValueError as exc:
            raise MalformedGraph(f"label line {lineno}: {exc}") from exc
    return out


def read_graph(edge_path, label_path) -> LabeledGraph:
    edges = parse_edges(Path(edge_path).read_text(encoding="utf-8"))
    labels = parse_labels(Path(label_path).read_text(encoding="utf-8"))
    return LabeledGraph.build(edges, labels)


def build_incidence(graph: LabeledGraph) -> np.ndarray:
    """Edge-vertex incidence: ``+1`` at the lower-indexed end, ``-1`` at the other."""
    B = np.zeros((len(graph.edges), graph.n_total))
    for row, (u, v, _) in enumerate(graph.edges):
        lo, hi = min(u, v), max(u, v)
        B[row, lo] = 1.0
        B[row, hi] = -1.0
    return B


@dataclass
class GraphRegression:
    """``min ||A x - b||_p^p`` over the unlabeled values ``x``.

    ``order`` lists vertices as the columns appear after moving the labeled
    ones to the end: ``order[:len(unlabeled)]`` are the columns of ``A``.
    """

    A: np.ndarray
    b: np.ndarray
    unlabeled: np.ndarray
    labeled: np.ndarray
    labels: np.ndarray
    order: np.ndarray
    p: float

    def assemble(self, x) -> np.ndarray:
        """Full vertex assignment from the unlabeled values."""
        out = np.zeros(len(self.order))
        out[self.unlabeled] = x
        out[self.labeled] = self.labels
        return out

    def constrained_form(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(C, N, b)`` for ``min ||N z||_p^p`` s.t. ``C z = b`` with ``z = (x, y)``, ``y = A x - b``."""
        e, k = self.A.shape
        C = np.hstack([self.A, -np.eye(e)])
        N = np.hstack([np.zeros((e, k)), np.eye(e)])
        return C, N, self.b.copy()


def laplacian_to_regression(graph: LabeledGraph, p: float) -> GraphRegression:
    if not graph.labeled:
        raise MalformedGraph("at least one vertex must be labeled")
    if not graph.edges:
        raise MalformedGraph("graph has no edges")
    B = build_incidence(graph)
    labeled = np.array([k for k, _ in graph.labeled], dtype=int)
    labels = np.array([val for _, val in graph.labeled], dtype=float)
    mask = np.ones(graph.n_total, dtype=bool)
    mask[labeled] = False
    unlabeled = np.flatnonzero(mask)
    scale = graph.weights ** (1.0 / p)
    A = scale[:, None] * B[:, unlabeled]
    b = -scale * (B[:, labeled] @ labels)
    order = np.concatenate([unlabeled, labeled])
    return GraphRegression(A, b, unlabeled, labeled, labels, order, float(p))


def laplacian_value(graph: LabeledGraph, values, p: float) -> float:
    """``sum_e w_e |x_u - x_v|^p`` evaluated edge by edge."""
    values = np.asarray(values, dtype=float)
    return float(sum(w * abs(values[u] - values[v]) ** p for u, v, w in graph.edges))


def solve_graph(graph: LabeledGraph, p: float, eps: float = 1e-10, algo: str = "auto", backend=None):
    """Minimize the p-Laplacian; returns ``(values for all vertices, report)``."""
    from .irls import classic_irls, irls_solve
    from .refinement import ProblemInstance, SolverReport
    from .residual import complete_solve

    reg = laplacian_to_regression(graph, p)
    if reg.unlabeled.size == 0:
        return reg.assemble(np.zeros(0)), SolverReport()
    C, N, b = reg.constrained_form()
    k = reg.unlabeled.size
    if algo == "irls":
        z, report = irls_solve(C, N, b, p, eps, backend)
    elif algo == "classic-irls":
        z, trace = classic_irls(C, N, b, p)
        report = SolverReport(objective_trace=list(trace), iterations=len(trace) - 1)
    else:
        inst = ProblemInstance.build(C, None, N, None, b, p)
        z, report = complete_solve(inst, eps=eps, backend=backend, path=None if algo == "auto" else algo)
    return reg.assemble(z[:k]), report
