"""Classical heuristics used as reference points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .csp import CspInstance
from .cvgraph import ConstraintValueGraph
from .instances import Graph, normalize_cnf


# SAT --------------------------------------------------------------------


@dataclass
class WalkResult:
    assignment: np.ndarray  # 0/1 per variable
    unsat: int
    flips: int
    best_flip: int
    tries: int

    @property
    def solved(self) -> bool:
        return self.unsat == 0


class CnfIndex:
    """Flat clause and occurrence arrays for the WalkSAT kernel."""

    def __init__(self, clauses, n_vars: int | None = None):
        clauses = normalize_cnf(clauses)
        self.n_vars = max((abs(l) for cl in clauses for l in cl), default=0) if n_vars is None else n_vars
        self.n_clauses = len(clauses)
        self.clause_ptr = np.zeros(len(clauses) + 1, dtype=np.int64)
        self.clause_ptr[1:] = np.cumsum([len(cl) for cl in clauses])
        flat = [l for cl in clauses for l in cl]
        self.lits = np.array([2 * (abs(l) - 1) + (l < 0) for l in flat], dtype=np.int64)
        owner = np.repeat(np.arange(len(clauses)), np.diff(self.clause_ptr))
        var = self.lits >> 1
        order = np.argsort(var, kind="stable")
        self.occ_clause = owner[order].astype(np.int64)
        self.occ_ptr = np.zeros(self.n_vars + 1, dtype=np.int64)
        self.occ_ptr[1:] = np.cumsum(np.bincount(var, minlength=self.n_vars))

    def unsat_count(self, assignment) -> int:
        a = np.asarray(assignment, dtype=np.int64)
        sat = (a[self.lits >> 1] ^ (self.lits & 1)).astype(np.int64)
        per = np.add.reduceat(sat, self.clause_ptr[:-1]) if self.n_clauses else np.zeros(0)
        return int(np.sum(per == 0))


def _walk(index: CnfIndex, max_flips: int, noise: float, rng: np.random.Generator, restarts: int,
          maxsat: bool) -> WalkResult:
    best = None
    for r in range(max(restarts, 1)):
        seed = int(rng.integers(0, 2**63 - 1))
        a, unsat, flips, best_flip = _kernels.walksat_run(
            index.clause_ptr, index.lits, index.n_vars, index.occ_ptr, index.occ_clause,
            int(max_flips), float(noise), seed, maxsat)
        if best is None or unsat < best.unsat:
            best = WalkResult(np.asarray(a, dtype=np.int64), int(unsat), int(flips), int(best_flip), r + 1)
        if unsat == 0:
            best.tries = r + 1
            break
    return best


def walksat(clauses, max_flips: int = 10_000, noise: float = 0.5, rng=None, restarts: int = 1,
            n_vars: int | None = None) -> WalkResult:
    """WalkSAT with break-count greedy moves; stops on the first model."""
    rng = np.random.default_rng(rng)
    return _walk(CnfIndex(clauses, n_vars), max_flips, noise, rng, restarts, maxsat=False)


def max_walksat(clauses, max_flips: int = 10_000, noise: float = 1e-3, rng=None, restarts: int = 1,
                n_vars: int | None = None) -> WalkResult:
    """MaxWalkSAT: greedy moves score ``break - make``; returns the best assignment seen."""
    rng = np.random.default_rng(rng)
    return _walk(CnfIndex(clauses, n_vars), max_flips, noise, rng, restarts, maxsat=True)


# coloring ---------------------------------------------------------------


def count_conflicts(graph: Graph, colors) -> int:
    return sum(1 for u, v in graph.edges if colors[u] == colors[v])


def greedy_coloring(graph: Graph, order=None) -> tuple[np.ndarray, int]:
    """First-fit coloring; the default order is by decreasing degree."""
    adj = graph.adjacency()
    if order is None:
        deg = graph.degrees()
        order = sorted(range(graph.n), key=lambda v: (-deg[v], v))
    colors = np.full(graph.n, -1, dtype=np.int64)
    for v in order:
        used = {colors[u] for u in adj[v]}
        c = 0
        while c in used:
            c += 1
        colors[v] = c
    return colors, int(colors.max() + 1) if graph.n else 0


def dsatur(graph: Graph) -> tuple[np.ndarray, int]:
    """Color the most saturated vertex next (ties: higher degree, then lower id)."""
    adj = graph.adjacency()
    deg = graph.degrees()
    colors = np.full(graph.n, -1, dtype=np.int64)
    seen = [set() for _ in range(graph.n)]
    for _ in range(graph.n):
        v = max((u for u in range(graph.n) if colors[u] < 0), key=lambda u: (len(seen[u]), deg[u], -u))
        c = 0
        while c in seen[v]:
            c += 1
        colors[v] = c
        for u in adj[v]:
            seen[u].add(c)
    return colors, int(colors.max() + 1) if graph.n else 0


# max cut ----------------------------------------------------------------


def greedy_maxcut(graph: Graph) -> np.ndarray:
    """Place vertices in id order on the side cutting more placed neighbours."""
    adj = graph.adjacency()
    side = np.full(graph.n, -1, dtype=np.int64)
    for v in range(graph.n):
        on = [0, 0]
        for u in adj[v]:
            if side[u] >= 0:
                on[side[u]] += 1
        side[v] = 1 if on[0] > on[1] else 0
    return side


# random search ----------------------------------------------------------


@dataclass
class RandomSearchResult:
    best_quality: float
    best_assignment: np.ndarray
    steps_to_best: int
    curve: np.ndarray  # best quality after each sample


def random_search(instance: CspInstance, steps: int, rng=None, stop_on_solution: bool = False) -> RandomSearchResult:
    """Independent uniform assignments; keeps the best."""
    rng = np.random.default_rng(rng)
    g = ConstraintValueGraph([instance])
    sizes = g.domain_sizes
    m = len(instance.constraints)
    best, best_a, at = -1.0, None, 0
    curve = []
    for t in range(1, steps + 1):
        a = np.floor(rng.random(g.n_vars) * sizes).astype(np.int64)
        g.relabel(a)
        q = int(g.satisfied().sum()) / m
        if q > best:
            best, best_a, at = q, a, t
        curve.append(best)
        if stop_on_solution and best >= 1.0:
            break
    return RandomSearchResult(best, best_a, at, np.array(curve))
