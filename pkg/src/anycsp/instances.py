"""Instance generators, problem reductions and file formats."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .csp import ALLDIFFERENT, ALLOWED, FORBIDDEN, LINEAR, Constraint, CspError, CspInstance


# graphs ------------------------------------------------------------------


@dataclass(frozen=True)
class Graph:
    """Simple undirected graph on vertices ``0..n-1``; edges stored as ``u < v``."""

    n: int
    edges: tuple[tuple[int, int], ...]

    @classmethod
    def from_edges(cls, n: int, edges) -> Graph:
        seen = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                warnings.warn(f"dropping self-loop on vertex {u}")
                continue
            if not (0 <= u < n and 0 <= v < n):
                raise CspError(f"edge ({u}, {v}) references a vertex outside 0..{n - 1}")
            seen.add((min(u, v), max(u, v)))
        return cls(n, tuple(sorted(seen)))

    @property
    def m(self) -> int:
        return len(self.edges)

    def adjacency(self) -> list[list[int]]:
        adj = [[] for _ in range(self.n)]
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        return adj

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        return deg


def gen_erdos_renyi(n: int, p: float, rng: np.random.Generator) -> Graph:
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    return Graph(n, tuple(zip(iu[keep].tolist(), ju[keep].tolist())))


def gen_barabasi_albert(n: int, m: int, rng: np.random.Generator) -> Graph:
    import networkx as nx

    g = nx.barabasi_albert_graph(n, m, seed=int(rng.integers(2**31)))
    return Graph.from_edges(n, g.edges())


def gen_geometric(n: int, radius: float, rng: np.random.Generator) -> Graph:
    """Random points in the unit square, joined when closer than ``radius``."""
    pts = rng.random((n, 2))
    dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    iu, ju = np.triu_indices(n, k=1)
    keep = dist[iu, ju] < radius
    return Graph(n, tuple(zip(iu[keep].tolist(), ju[keep].tolist())))


def gen_coloring_graph(rng: np.random.Generator, n: int = 50) -> Graph:
    """Mixture of the three random graph models used for coloring."""
    model = int(rng.integers(3))
    if model == 0:
        return gen_erdos_renyi(n, rng.uniform(0.1, 0.3), rng)
    if model == 1:
        return gen_barabasi_albert(n, int(rng.integers(2, 11)), rng)
    return gen_geometric(n, rng.uniform(0.15, 0.3), rng)


def queen_graph(rows: int, cols: int | None = None) -> Graph:
    """Queen's move graph on a chessboard (vertex ``r * cols + c``)."""
    cols = rows if cols is None else cols
    edges = []
    for a in range(rows * cols):
        r1, c1 = divmod(a, cols)
        for b in range(a + 1, rows * cols):
            r2, c2 = divmod(b, cols)
            if r1 == r2 or c1 == c2 or abs(r1 - r2) == abs(c1 - c2):
                edges.append((a, b))
    return Graph(rows * cols, tuple(edges))


# reductions --------------------------------------------------------------


def reduce_coloring(graph: Graph, k: int) -> CspInstance:
    """One variable per vertex with ``k`` colors and one inequality per edge."""
    if k < 2:
        raise CspError("coloring needs at least 2 colors")
    equal = tuple((c, c) for c in range(k))
    cons = [Constraint(scope=(u, v), kind=FORBIDDEN, tuples=equal) for u, v in graph.edges]
    return CspInstance([tuple(range(k))] * graph.n, cons)


def choose_training_k(graph: Graph) -> int:
    """One color fewer than greedy coloring needs, clamped to [3, 10]."""
    from .baselines import greedy_coloring

    _, k_greedy = greedy_coloring(graph)
    return max(3, min(10, k_greedy - 1))


def reduce_maxcut(graph: Graph) -> CspInstance:
    return reduce_coloring(graph, 2)


def cut_size(graph: Graph, side) -> int:
    return sum(1 for u, v in graph.edges if side[u] != side[v])


def normalize_cnf(clauses) -> list[tuple[int, ...]]:
    """Drop duplicate literals and tautological clauses; reject empty clauses."""
    out = []
    for i, cl in enumerate(clauses):
        lits = tuple(dict.fromkeys(int(l) for l in cl))
        if not lits:
            raise CspError(f"trivially unsatisfiable clause at index {i}")
        if any(l == 0 for l in lits):
            raise CspError(f"clause {i} contains literal 0")
        if any(-l in lits for l in lits):
            warnings.warn(f"dropping tautological clause {i}")
            continue
        out.append(lits)
    return out


def cnf_n_vars(clauses) -> int:
    return max((abs(l) for cl in clauses for l in cl), default=0)


def reduce_cnf(clauses, n_vars: int | None = None) -> CspInstance:
    """Boolean CSP with one constraint per clause forbidding its falsifying tuple.

    Literals are DIMACS style: ``+i`` / ``-i`` for variable ``i`` (1-based).
    Domain index 0 is false and 1 is true.
    """
    clauses = normalize_cnf(clauses)
    n = cnf_n_vars(clauses) if n_vars is None else n_vars
    if cnf_n_vars(clauses) > n:
        raise CspError("literal references a variable beyond n_vars")
    cons = []
    for cl in clauses:
        scope = tuple(abs(l) - 1 for l in cl)
        falsifying = tuple(0 if l > 0 else 1 for l in cl)
        cons.append(Constraint(scope=scope, kind=FORBIDDEN, tuples=(falsifying,)))
    return CspInstance([(0, 1)] * n, cons)


def gen_uniform_ksat_clauses(n: int, k: int, ratio, rng: np.random.Generator) -> list[tuple[int, ...]]:
    """Uniform random k-CNF; ``ratio`` is a float or a ``(lo, hi)`` range."""
    if n < k:
        raise CspError("need at least k variables")
    r = rng.uniform(*ratio) if isinstance(ratio, (tuple, list)) else float(ratio)
    m = int(round(r * n))
    clauses = []
    for _ in range(m):
        vs = rng.choice(n, size=k, replace=False) + 1
        signs = np.where(rng.random(k) < 0.5, -1, 1)
        clauses.append(tuple(int(v) for v in vs * signs))
    return clauses


def gen_uniform_ksat(n: int, k: int, ratio, rng: np.random.Generator) -> CspInstance:
    return reduce_cnf(gen_uniform_ksat_clauses(n, k, ratio, rng), n)


# Model RB ---------------------------------------------------------------


@dataclass(frozen=True)
class RbParams:
    k: int
    n: int
    alpha: float
    r: float
    p: float

    @property
    def d(self) -> int:
        return int(round(self.n ** self.alpha))

    @property
    def m(self) -> int:
        return int(round(self.r * self.n * math.log(self.n)))

    @property
    def t(self) -> int:
        return int(round(self.p * self.d ** self.k))

    def validate(self):
        if self.k < 2 or self.n < 2:
            raise CspError("Model RB needs k >= 2 and n >= 2")
        if self.alpha <= 0 or self.r <= 0 or not 0 < self.p < 1:
            raise CspError("Model RB needs alpha > 0, r > 0 and 0 < p < 1")
        if self.d < 2 or self.m < 1 or self.t < 1:
            raise CspError(f"degenerate Model RB sizes d={self.d}, m={self.m}, t={self.t}")
        if self.t >= self.d ** self.k:
            raise CspError("tightness too high")


def p_cr(alpha: float, r: float) -> float:
    """Critical tightness of Model RB."""
    return 1.0 - math.exp(-alpha / r)


def gen_model_rb(params: RbParams, rng: np.random.Generator) -> CspInstance:
    params.validate()
    k, n, d, m, t = params.k, params.n, params.d, params.m, params.t
    cons = []
    for _ in range(m):
        scope = tuple(int(x) for x in rng.choice(n, size=k, replace=False))
        flat = rng.choice(d ** k, size=t, replace=False)
        tuples = tuple(tuple(int(a) for a in np.unravel_index(f, (d,) * k)) for f in np.sort(flat))
        cons.append(Constraint(scope=scope, kind=FORBIDDEN, tuples=tuples))
    return CspInstance([tuple(range(d))] * n, cons)


def sample_rb_params(rng: np.random.Generator, n_range=(30, 50), k_choices=(2, 3, 4)) -> RbParams:
    """Draw parameters slightly below the critical tightness.

    ``d`` is drawn from ``(n^(1/k), 2 n^(1/k)]`` and ``m`` from
    ``[n log_k d, 2 n log_k d]``; ``alpha`` and ``r`` are backed out of them.
    """
    k = int(rng.choice(k_choices))
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    base = n ** (1.0 / k)
    d = int(rng.integers(math.floor(base) + 1, max(math.floor(2 * base), math.floor(base) + 1) + 1))
    d = max(d, 2)
    lo = n * math.log(d) / math.log(k)
    m = int(rng.integers(math.ceil(lo), math.floor(2 * lo) + 1))
    alpha = math.log(d) / math.log(n)
    r = m / (n * math.log(n))
    return RbParams(k, n, alpha, r, 0.9 * p_cr(alpha, r))


# DIMACS -----------------------------------------------------------------


def parse_dimacs_cnf(text: str) -> tuple[int, list[tuple[int, ...]]]:
    """Return ``(n_vars, clauses)``."""
    n_vars = None
    clauses, cur = [], []
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("c") or line.startswith("%"):
            continue
        if line.startswith("p"):
            parts = line.split()
            if len(parts) != 4 or parts[1] != "cnf":
                raise CspError(f"line {ln}: malformed header {line!r}")
            try:
                n_vars, _ = int(parts[2]), int(parts[3])
            except ValueError:
                raise CspError(f"line {ln}: malformed header {line!r}") from None
            continue
        if n_vars is None:
            raise CspError(f"line {ln}: clause before header")
        for tok in line.split():
            try:
                lit = int(tok)
            except ValueError:
                raise CspError(f"line {ln}: bad literal {tok!r}") from None
            if lit == 0:
                clauses.append(tuple(cur))
                cur = []
            elif abs(lit) > n_vars:
                raise CspError(f"line {ln}: literal {lit} out of range")
            else:
                cur.append(lit)
    if n_vars is None:
        raise CspError("missing 'p cnf' header")
    if cur:
        clauses.append(tuple(cur))
    return n_vars, clauses


def write_dimacs_cnf(n_vars: int, clauses) -> str:
    lines = [f"p cnf {n_vars} {len(clauses)}"]
    lines += [" ".join(str(l) for l in cl) + " 0" for cl in clauses]
    return "\n".join(lines) + "\n"


def parse_dimacs_col(text: str) -> Graph:
    n = None
    edges = []
    for ln, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0] == "c":
            continue
        if parts[0] == "p":
            if len(parts) != 4 or parts[1] not in ("edge", "col"):
                raise CspError(f"line {ln}: malformed header {line!r}")
            n = int(parts[2])
        elif parts[0] == "e":
            if n is None:
                raise CspError(f"line {ln}: edge before header")
            if len(parts) != 3:
                raise CspError(f"line {ln}: malformed edge {line!r}")
            edges.append((int(parts[1]) - 1, int(parts[2]) - 1))
    if n is None:
        raise CspError("missing 'p edge' header")
    return Graph.from_edges(n, edges)


def write_dimacs_col(graph: Graph) -> str:
    lines = [f"p edge {graph.n} {graph.m}"] + [f"e {u + 1} {v + 1}" for u, v in graph.edges]
    return "\n".join(lines) + "\n"


# JSON -------------------------------------------------------------------


def parse_csp_json(text: str) -> CspInstance:
    try:
        doc = json.loads(text)
        variables = doc["variables"]
        ids = [v["id"] for v in variables]
        domains = [list(v["domain"]) for v in variables]
        pos = {vid: i for i, vid in enumerate(ids)}
        cons = []
        for c in doc["constraints"]:
            scope = tuple(pos[v] for v in c["scope"])
            kind = c["type"]
            if kind in (ALLOWED, FORBIDDEN):
                # tuples list tokens; map to domain indices
                tuples = tuple(tuple(domains[x].index(tok) for x, tok in zip(scope, t)) for t in c["tuples"])
                cons.append(Constraint(scope=scope, kind=kind, tuples=tuples))
            elif kind == LINEAR:
                lin = c["linear"]
                cons.append(Constraint.linear(scope, lin["coeffs"], lin["cmp"], lin["const"]))
            elif kind == ALLDIFFERENT:
                cons.append(Constraint.alldifferent(scope))
            else:
                raise CspError(f"unknown constraint type {kind!r}")
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, CspError):
            raise
        raise CspError(f"malformed CSP JSON: {e!r}") from None
    return CspInstance(domains, cons, ids)


def write_csp_json(instance: CspInstance, meta: dict | None = None) -> str:
    doms = instance.domains
    ids = instance.variables
    out_cons = []
    for c in instance.constraints:
        row = {"scope": [ids[x] for x in c.scope], "type": c.kind}
        if c.kind in (ALLOWED, FORBIDDEN):
            row["tuples"] = [[doms[x][a] for x, a in zip(c.scope, t)] for t in c.tuples]
        elif c.kind == LINEAR:
            row["linear"] = {"coeffs": list(c.coeffs), "cmp": c.cmp, "const": c.const}
        out_cons.append(row)
    doc = {
        "variables": [{"id": vid, "domain": list(d)} for vid, d in zip(ids, doms)],
        "constraints": out_cons,
    }
    if meta:
        doc["meta"] = meta
    return json.dumps(doc, ensure_ascii=False) + "\n"


# distributions ----------------------------------------------------------

DISTRIBUTIONS = ("rb", "col", "maxcut", "3sat", "maxksat")


@dataclass
class Problem:
    """A sampled instance together with its native form, if any."""

    instance: CspInstance
    meta: dict
    clauses: list | None = None
    n_vars: int | None = None
    graph: Graph | None = None


def _span(value, default):
    if value is None:
        return default
    if isinstance(value, (tuple, list)):
        return (float(value[0]), float(value[-1]))
    return (float(value), float(value))


MAX_REDRAWS = 1000


def sample_problem(dist: str, rng: np.random.Generator, n: int | None = None, k: int | None = None,
                   ratio=None, p=None) -> Problem:
    """Draw one instance of a named distribution.

    ``ratio`` and ``p`` accept a number or a ``(lo, hi)`` range sampled
    uniformly. Unset options fall back to the training defaults. Draws
    without any constraint (an edgeless graph, say) are redrawn.
    """
    for _ in range(MAX_REDRAWS):
        prob = _sample_once(dist, rng, n, k, ratio, p)
        if prob.instance.constraints:
            return prob
    raise CspError(f"{dist}: no draw with at least one constraint in {MAX_REDRAWS} tries")


def _sample_once(dist, rng, n, k, ratio, p) -> Problem:
    if dist == "rb":
        lo_hi = (n, n) if n is not None else (30, 50)
        params = sample_rb_params(rng, n_range=lo_hi, k_choices=(k,) if k else (2, 3, 4))
        inst = gen_model_rb(params, rng)
        meta = {"k": params.k, "n": params.n, "alpha": params.alpha, "r": params.r, "p": params.p,
                "d": params.d, "m": params.m, "t": params.t}
        return Problem(inst, meta)
    if dist == "col":
        g = gen_coloring_graph(rng, n or 50)
        colors = k if k else choose_training_k(g)
        return Problem(reduce_coloring(g, colors), {"n": g.n, "edges": g.m, "colors": colors}, graph=g)
    if dist == "maxcut":
        lo, hi = _span(p, (0.05, 0.3))
        pp = rng.uniform(lo, hi) if hi > lo else lo
        g = gen_erdos_renyi(n or 100, pp, rng)
        return Problem(reduce_maxcut(g), {"n": g.n, "edges": g.m, "p": pp}, graph=g)
    if dist in ("3sat", "maxksat"):
        kk = k or 3
        if dist == "3sat":
            default = (4.0, 5.0)
        else:
            default = (5.0, 8.0) if kk == 3 else (10.0, 16.0)
        nv = n or 100
        clauses = gen_uniform_ksat_clauses(nv, kk, _span(ratio, default), rng)
        meta = {"n": nv, "k": kk, "clauses": len(clauses)}
        return Problem(reduce_cnf(clauses, nv), meta, clauses=clauses, n_vars=nv)
    raise CspError(f"unknown distribution {dist!r}; expected one of {DISTRIBUTIONS}")


def make_sampler(dist: str, **options):
    """Callable ``rng -> CspInstance`` for training."""
    if dist not in DISTRIBUTIONS:
        raise CspError(f"unknown distribution {dist!r}; expected one of {DISTRIBUTIONS}")
    return lambda rng: sample_problem(dist, rng, **options).instance
