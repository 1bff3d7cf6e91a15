"""Shared random instance builders and independent oracles for tests."""

import itertools

import numpy as np

from anycsp import cvgraph, nn, policy
from anycsp.csp import COMPARATORS, Constraint, CspInstance


def random_domain(rng, size):
    return tuple(int(v) for v in rng.choice(np.arange(-3, 6), size=size, replace=False))


def random_constraint(rng, domains, kinds=("allowed", "forbidden", "linear", "alldifferent"), max_arity=3):
    n = len(domains)
    k = int(rng.integers(1, min(max_arity, n) + 1))
    scope = tuple(int(x) for x in rng.choice(n, size=k, replace=False))
    kind = kinds[int(rng.integers(len(kinds)))]
    if kind in ("allowed", "forbidden"):
        all_t = list(itertools.product(*[range(len(domains[x])) for x in scope]))
        cnt = int(rng.integers(0, len(all_t) + 1))
        pick = sorted(rng.choice(len(all_t), size=cnt, replace=False).tolist())
        tuples = [all_t[i] for i in pick]
        return Constraint.allowed(scope, tuples) if kind == "allowed" else Constraint.forbidden(scope, tuples)
    if kind == "linear":
        coeffs = [int(rng.integers(-3, 4)) for _ in scope]
        cmp = list(COMPARATORS)[int(rng.integers(len(COMPARATORS)))]
        return Constraint.linear(scope, coeffs, cmp, int(rng.integers(-5, 6)))
    return Constraint.alldifferent(scope)


def random_instance(rng, max_vars=5, max_dom=4, max_cons=5, kinds=("allowed", "forbidden", "linear", "alldifferent"),
                    max_arity=3, min_cons=1):
    n = int(rng.integers(1, max_vars + 1))
    domains = [random_domain(rng, int(rng.integers(1, max_dom + 1))) for _ in range(n)]
    m = int(rng.integers(min_cons, max_cons + 1))
    cons = [random_constraint(rng, domains, kinds, max_arity) for _ in range(m)]
    return CspInstance(domains, cons)


def random_assignment(rng, instance):
    return np.array([int(rng.integers(len(d))) for d in instance.domains])


def oracle_satisfied(instance, c, a):
    """Direct evaluation from the constraint definition."""
    vals = [instance.domains[x][a[x]] for x in c.scope]
    idx = tuple(int(a[x]) for x in c.scope)
    if c.kind == "allowed":
        return idx in c.tuples
    if c.kind == "forbidden":
        return idx not in c.tuples
    if c.kind == "linear":
        s = sum(w * v for w, v in zip(c.coeffs, vals))
        return {"<=": s <= c.const, "<": s < c.const, "=": s == c.const, "!=": s != c.const,
                ">": s > c.const, ">=": s >= c.const}[c.cmp]
    return len(set(vals)) == len(vals)


def oracle_labels(instance, a):
    """Vertex labels and edge labels by substitution, in the documented edge order."""
    lv = []
    for x, dom in enumerate(instance.domains):
        lv.extend(1 if d == a[x] else 0 for d in range(len(dom)))
    le = []
    for c in instance.constraints:
        for x in c.scope:
            for d in range(len(instance.domains[x])):
                b = np.array(a, copy=True)
                b[x] = d
                le.append(1 if oracle_satisfied(instance, c, b) else 0)
    return np.array(lv), np.array(le)


def cnf_satisfied_fraction(clauses, bits):
    """Fraction of clauses with a true literal; ``bits`` are 0/1 per variable."""
    sat = sum(1 for cl in clauses if any((bits[abs(l) - 1] == 1) == (l > 0) for l in cl))
    return sat / len(clauses)


def fd_check(build, inputs, h=1e-6, rng=None):
    """Compare tape gradients of sum(w * f(inputs)) with central differences."""
    rng = rng or np.random.default_rng(0)
    out = build(None)
    w = rng.normal(size=out.data.shape)

    tape = nn.Tape()
    y = build(tape)
    loss = nn.weighted_sum(y, w, tape)
    for t in inputs:
        t.grad = None
    nn.backward(tape, loss)
    worst = 0.0
    for t in inputs:
        g = np.zeros_like(t.data) if t.grad is None else t.grad
        it = np.nditer(t.data, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = t.data[i]
            t.data[i] = orig + h
            fp = np.sum(w * build(None).data)
            t.data[i] = orig - h
            fm = np.sum(w * build(None).data)
            t.data[i] = orig
            num = (fp - fm) / (2 * h)
            err = abs(num - g[i]) / max(abs(num), abs(g[i]), 1e-6)
            worst = max(worst, err)
    return worst


def replay_surrogate(params, inst, init, assigns, G, eps):
    """sum_t G_t sum_X log(phi_t(alpha_t(X)) + eps), replaying frozen actions."""
    g = cvgraph.build(inst)
    state = policy.init_state(params, g)
    prev, total = init, 0.0
    for t, a in enumerate(assigns):
        g.relabel(prev)
        phi, state = policy.step(params, g, state)
        total += G[t] * np.sum(np.log(phi.data[g.var_offsets[:-1] + a, 0] + eps))
        prev = a
    return total
