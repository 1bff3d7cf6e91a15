"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Prints one row per kernel with the best-of-``repeat`` time of each backend
and the speedup of the compiled one. Inputs mirror what a training step on
a batch of 3-SAT or MaxCut instances feeds each kernel.
"""

import argparse
import timeit

import numpy as np

from anycsp import _kernels, cvgraph
from anycsp.baselines import CnfIndex
from anycsp.instances import gen_erdos_renyi, gen_uniform_ksat, gen_uniform_ksat_clauses, reduce_maxcut


def _segments(rng, n, S):
    ids = rng.integers(0, S, size=n)
    order = np.argsort(ids, kind="stable").astype(np.int64)
    indptr = np.zeros(S + 1, dtype=np.int64)
    indptr[1:] = np.cumsum(np.bincount(ids, minlength=S))
    return ids.astype(np.int64), order, indptr


def cases(scale: float):
    """Map of kernel name to a function ``backend -> callable``."""
    rng = np.random.default_rng(0)
    n_rows, n_seg, d = int(40_000 * scale), int(4_000 * scale), 32
    x = rng.normal(size=(n_rows, d))
    ids, order, indptr = _segments(rng, n_rows, n_seg)
    g = rng.normal(size=(n_rows, d))
    gamma, beta = rng.normal(size=(1, d)), rng.normal(size=(1, d))
    ln_x = rng.normal(size=(int(8_000 * scale), d))
    ln_g = rng.normal(size=ln_x.shape)

    sat = cvgraph.build_batch([gen_uniform_ksat(50, 3, 4.2, rng) for _ in range(max(1, int(8 * scale)))])
    sat_a = np.floor(rng.random(sat.n_vars) * sat.domain_sizes).astype(np.int64)
    cut = cvgraph.build_batch([reduce_maxcut(gen_erdos_renyi(100, 0.1, rng)) for _ in range(max(1, int(8 * scale)))])
    cut_a = np.floor(rng.random(cut.n_vars) * cut.domain_sizes).astype(np.int64)
    cnf = CnfIndex(gen_uniform_ksat_clauses(200, 3, 4.26, rng), 200)
    flips = int(20_000 * scale)

    def relabel_with(k, graph, a):
        def run():
            lv = np.zeros(graph.n_values, dtype=np.int8)
            lv[graph.var_offsets[:-1] + a] = 1
            le = np.zeros(graph.n_edges, dtype=np.int8)
            k.extension_labels(lv, graph.ext_slot_val, graph.ext_slot_edge, graph.ext_tuple_ptr, graph.ext_edges,
                               graph.edge_val, graph.edge_arity, graph.edge_forbidden, le)
        return run

    def layernorm_both(k):
        def run():
            out, xhat, inv = k.layernorm_forward(ln_x, gamma, beta, 1e-5)
            k.layernorm_backward(ln_g, xhat, inv, gamma)
        return run

    return {
        "segment_sum": lambda k: (lambda: k.segment_sum(x, order, indptr)),
        "segment_max": lambda k: (lambda: k.segment_max(x, order, indptr)),
        "scatter_add_rows": lambda k: (lambda: k.scatter_add_rows(np.zeros((n_seg, d)), ids, g)),
        "layernorm fwd+bwd": layernorm_both,
        "extension_labels 3-SAT": lambda k: relabel_with(k, sat, sat_a),
        "extension_labels MaxCut": lambda k: relabel_with(k, cut, cut_a),
        f"walksat {flips} flips": lambda k: (lambda: k.walksat_run(cnf.clause_ptr, cnf.lits, cnf.n_vars, cnf.occ_ptr,
                                                                     cnf.occ_clause, flips, 0.5, 1, False)),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0, help="multiplies every problem size")
    args = ap.parse_args(argv)

    backends = _kernels.backends()
    names = [b for b in ("python", "compiled") if b in backends]
    print(f"active backend: {_kernels.BACKEND}")
    print(f"{'kernel':28s}" + "".join(f"{n + ' ms':>14s}" for n in names) + ("   speedup" if len(names) == 2 else ""))
    for kernel, make in cases(args.scale).items():
        times = []
        for n in names:
            fn = make(backends[n])
            fn()  # warm up
            number = 1 if n == "python" and kernel.startswith("walksat") else 3
            best = min(timeit.repeat(fn, number=number, repeat=args.repeat)) / number
            times.append(best * 1000)
        row = f"{kernel:28s}" + "".join(f"{t:14.3f}" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
