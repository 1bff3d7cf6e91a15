"""Pure numpy / pure Python versions of the kernels in ``_core.pyx``.

Results match the compiled kernels exactly for integer outputs and up to
summation rounding for float outputs. The WalkSAT RNG is bit-identical.
"""

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF


def segment_sum(x, order, indptr):
    S = len(indptr) - 1
    out = np.zeros((S, x.shape[1]), dtype=np.float64)
    sizes = np.diff(indptr)
    nonempty = np.flatnonzero(sizes)
    if len(nonempty):
        out[nonempty] = np.add.reduceat(x[order], indptr[nonempty], axis=0)
    return out


def segment_max(x, order, indptr):
    S = len(indptr) - 1
    d = x.shape[1]
    out = np.zeros((S, d), dtype=np.float64)
    arg = np.full((S, d), -1, dtype=np.int64)
    sizes = np.diff(indptr)
    nonempty = np.flatnonzero(sizes)
    if len(nonempty) == 0:
        return out, arg
    xs = x[order]
    starts = indptr[nonempty]
    mx = np.maximum.reduceat(xs, starts, axis=0)
    out[nonempty] = mx
    seg_of_pos = np.repeat(np.arange(len(nonempty)), sizes[nonempty])
    hit = xs == mx[seg_of_pos]
    pos = np.where(hit, np.arange(len(xs))[:, None], len(xs))
    first = np.minimum.reduceat(pos, starts, axis=0)
    arg[nonempty] = order[first]
    return out, arg


def scatter_add_rows(out, idx, g):
    if len(idx) == 0:
        return
    order = np.argsort(idx, kind="stable")
    sidx = idx[order]
    starts = np.flatnonzero(np.r_[True, sidx[1:] != sidx[:-1]])
    out[sidx[starts]] += np.add.reduceat(g[order], starts, axis=0)


def extension_labels(lv, slot_val, slot_edge, tuple_ptr, ext_edges, edge_val,
                     edge_arity, edge_forbidden, le):
    m = np.full(len(le), -1, dtype=np.int64)
    n_tuples = len(tuple_ptr) - 1
    if n_tuples:
        sizes = np.diff(tuple_ptr)
        score = np.add.reduceat(lv[slot_val].astype(np.int64), tuple_ptr[:-1])
        np.maximum.at(m, slot_edge, np.repeat(score, sizes))
    e = ext_edges
    hit = (m[e] - lv[edge_val[e]] + 1 == edge_arity[e]).astype(np.int8)
    le[e] = hit ^ edge_forbidden[e].astype(np.int8)


class _SplitMix:
    __slots__ = ("state",)

    def __init__(self, seed):
        self.state = seed & _MASK

    def next(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def uniform(self):
        return (self.next() >> 11) * (1.0 / 9007199254740992.0)

    def randint(self, n):
        return int(self.uniform() * n)


def layernorm_forward(x, gamma, beta, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * inv
    return xhat * gamma + beta, xhat, inv


def layernorm_backward(g, xhat, inv, gamma):
    gx = g * gamma
    gx = inv * (gx - gx.mean(axis=1, keepdims=True) - xhat * (gx * xhat).mean(axis=1, keepdims=True))
    return gx, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True)


def walksat_run(clause_ptr, lits, n_vars, occ_ptr, occ_clause, max_flips, noise, seed, maxsat):
    rng = _SplitMix(int(seed))
    clause_ptr = clause_ptr.tolist()
    lits = lits.tolist()
    occ_ptr = occ_ptr.tolist()
    occ_clause = occ_clause.tolist()
    m = len(clause_ptr) - 1
    assign = [rng.randint(2) for _ in range(n_vars)]
    clause_lits = [lits[clause_ptr[c]:clause_ptr[c + 1]] for c in range(m)]

    def lit_true(c, v):
        for lit in clause_lits[c]:
            if lit >> 1 == v:
                return (assign[v] ^ (lit & 1)) != 0
        return False

    num_true = [0] * m
    unsat = []
    pos = [-1] * m
    for c in range(m):
        num_true[c] = sum(1 for lit in clause_lits[c] if assign[lit >> 1] ^ (lit & 1))
        if num_true[c] == 0:
            pos[c] = len(unsat)
            unsat.append(c)
    best = list(assign)
    best_unsat = len(unsat)
    flips = best_flip = 0
    while flips < max_flips and unsat:
        c = unsat[rng.randint(len(unsat))]
        if rng.uniform() < noise:
            chosen = clause_lits[c][rng.randint(len(clause_lits[c]))] >> 1
        else:
            chosen = -1
            best_score = 0
            ties = 0
            for lit in clause_lits[c]:
                v = lit >> 1
                score = 0
                for cc in occ_clause[occ_ptr[v]:occ_ptr[v + 1]]:
                    if lit_true(cc, v) and num_true[cc] == 1:
                        score += 1
                    elif maxsat and num_true[cc] == 0:
                        score -= 1
                if chosen < 0 or score < best_score:
                    chosen, best_score, ties = v, score, 1
                elif score == best_score:
                    ties += 1
                    if rng.randint(ties) == 0:
                        chosen = v
        for cc in occ_clause[occ_ptr[chosen]:occ_ptr[chosen + 1]]:
            if lit_true(cc, chosen):
                num_true[cc] -= 1
                if num_true[cc] == 0:
                    pos[cc] = len(unsat)
                    unsat.append(cc)
            else:
                num_true[cc] += 1
                if num_true[cc] == 1:
                    i = pos[cc]
                    last = unsat.pop()
                    if last != cc:
                        unsat[i] = last
                        pos[last] = i
                    pos[cc] = -1
        assign[chosen] ^= 1
        flips += 1
        if len(unsat) < best_unsat:
            best_unsat = len(unsat)
            best_flip = flips
            best = list(assign)
    return np.array(best, dtype=np.int8), best_unsat, flips, best_flip
