# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Must stay call-compatible with ``_fallback``."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t, int8_t, uint64_t, uint8_t

from libc.math cimport sqrt

cnp.import_array()


def segment_sum(double[:, ::1] x, int64_t[::1] order, int64_t[::1] indptr):
    cdef Py_ssize_t S = indptr.shape[0] - 1
    cdef Py_ssize_t d = x.shape[1]
    out_arr = np.zeros((S, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t s, p, j
    cdef int64_t row
    with nogil:
        for s in range(S):
            for p in range(indptr[s], indptr[s + 1]):
                row = order[p]
                for j in range(d):
                    out[s, j] += x[row, j]
    return out_arr


def segment_max(double[:, ::1] x, int64_t[::1] order, int64_t[::1] indptr):
    cdef Py_ssize_t S = indptr.shape[0] - 1
    cdef Py_ssize_t d = x.shape[1]
    out_arr = np.zeros((S, d), dtype=np.float64)
    arg_arr = np.full((S, d), -1, dtype=np.int64)
    cdef double[:, ::1] out = out_arr
    cdef int64_t[:, ::1] arg = arg_arr
    cdef Py_ssize_t s, p, j
    cdef int64_t row
    cdef double v
    with nogil:
        for s in range(S):
            if indptr[s] == indptr[s + 1]:
                continue
            row = order[indptr[s]]
            for j in range(d):
                out[s, j] = x[row, j]
                arg[s, j] = row
            for p in range(indptr[s] + 1, indptr[s + 1]):
                row = order[p]
                for j in range(d):
                    v = x[row, j]
                    # strict: keeps the earliest row on ties (order is stable)
                    if v > out[s, j]:
                        out[s, j] = v
                        arg[s, j] = row
    return out_arr, arg_arr


def scatter_add_rows(double[:, ::1] out, int64_t[::1] idx, double[:, ::1] g):
    cdef Py_ssize_t n = idx.shape[0]
    cdef Py_ssize_t d = g.shape[1]
    cdef Py_ssize_t i, j
    cdef int64_t r
    with nogil:
        for i in range(n):
            r = idx[i]
            for j in range(d):
                out[r, j] += g[i, j]


def extension_labels(int8_t[::1] lv, int64_t[::1] slot_val, int64_t[::1] slot_edge,
                     int64_t[::1] tuple_ptr, int64_t[::1] ext_edges, int64_t[::1] edge_val,
                     int64_t[::1] edge_arity, uint8_t[::1] edge_forbidden, int8_t[::1] le):
    cdef Py_ssize_t n_tuples = tuple_ptr.shape[0] - 1
    cdef Py_ssize_t E = le.shape[0]
    m_arr = np.full(E, -1, dtype=np.int64)
    cdef int64_t[::1] m = m_arr
    cdef Py_ssize_t t, p, i
    cdef int64_t score, e
    cdef int8_t hit
    with nogil:
        for t in range(n_tuples):
            score = 0
            for p in range(tuple_ptr[t], tuple_ptr[t + 1]):
                score += lv[slot_val[p]]
            for p in range(tuple_ptr[t], tuple_ptr[t + 1]):
                e = slot_edge[p]
                if score > m[e]:
                    m[e] = score
        for i in range(ext_edges.shape[0]):
            e = ext_edges[i]
            hit = 1 if m[e] - lv[edge_val[e]] + 1 == edge_arity[e] else 0
            le[e] = hit ^ <int8_t>edge_forbidden[e]


def layernorm_forward(double[:, ::1] x, double[:, ::1] gamma, double[:, ::1] beta, double eps):
    """Row-wise normalisation; returns ``(out, xhat, inv_std)``."""
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    out_arr = np.empty((n, d), dtype=np.float64)
    xhat_arr = np.empty((n, d), dtype=np.float64)
    inv_arr = np.empty((n, 1), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[:, ::1] inv = inv_arr
    cdef double mu, var, c, s
    with nogil:
        for i in range(n):
            mu = 0.0
            for j in range(d):
                mu += x[i, j]
            mu /= d
            var = 0.0
            for j in range(d):
                c = x[i, j] - mu
                var += c * c
            s = 1.0 / sqrt(var / d + eps)
            inv[i, 0] = s
            for j in range(d):
                c = (x[i, j] - mu) * s
                xhat[i, j] = c
                out[i, j] = c * gamma[0, j] + beta[0, j]
    return out_arr, xhat_arr, inv_arr


def layernorm_backward(double[:, ::1] g, double[:, ::1] xhat, double[:, ::1] inv, double[:, ::1] gamma):
    """Returns ``(grad_x, grad_gamma, grad_beta)``."""
    cdef Py_ssize_t n = g.shape[0], d = g.shape[1], i, j
    gx_arr = np.empty((n, d), dtype=np.float64)
    gg_arr = np.zeros((1, d), dtype=np.float64)
    gb_arr = np.zeros((1, d), dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef double[:, ::1] gg = gg_arr
    cdef double[:, ::1] gb = gb_arr
    cdef double m1, m2, v
    with nogil:
        for i in range(n):
            m1 = 0.0
            m2 = 0.0
            for j in range(d):
                gg[0, j] += g[i, j] * xhat[i, j]
                gb[0, j] += g[i, j]
                v = g[i, j] * gamma[0, j]
                m1 += v
                m2 += v * xhat[i, j]
            m1 /= d
            m2 /= d
            for j in range(d):
                gx[i, j] = inv[i, 0] * (g[i, j] * gamma[0, j] - m1 - xhat[i, j] * m2)
    return gx_arr, gg_arr, gb_arr


cdef inline uint64_t _next(uint64_t* state) nogil:
    cdef uint64_t z
    state[0] += <uint64_t>0x9E3779B97F4A7C15
    z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t* state) nogil:
    return (_next(state) >> 11) * (1.0 / 9007199254740992.0)


cdef inline Py_ssize_t _randint(uint64_t* state, Py_ssize_t n) nogil:
    return <Py_ssize_t>(_uniform(state) * n)


def walksat_run(int64_t[::1] clause_ptr, int64_t[::1] lits, Py_ssize_t n_vars,
                int64_t[::1] occ_ptr, int64_t[::1] occ_clause, int64_t max_flips,
                double noise, uint64_t seed, bint maxsat):
    """One WalkSAT/MaxWalkSAT try from a random start.

    Literals are encoded ``2*var + negated``. Returns
    ``(best_assignment, best_unsat, flips_done, best_flip)``.
    """
    cdef Py_ssize_t m = clause_ptr.shape[0] - 1
    cdef uint64_t state = seed
    assign_arr = np.zeros(n_vars, dtype=np.int8)
    best_arr = np.zeros(n_vars, dtype=np.int8)
    num_true_arr = np.zeros(m, dtype=np.int64)
    unsat_arr = np.zeros(m, dtype=np.int64)
    pos_arr = np.full(m, -1, dtype=np.int64)
    cdef int8_t[::1] assign = assign_arr
    cdef int8_t[::1] best = best_arr
    cdef int64_t[::1] num_true = num_true_arr
    cdef int64_t[::1] unsat = unsat_arr
    cdef int64_t[::1] pos = pos_arr
    cdef Py_ssize_t n_unsat = 0, best_unsat, i, p, q, c, cc, v, chosen, ties
    cdef int64_t lit, flips = 0, best_flip = 0, score, best_score
    cdef bint was_true
    with nogil:
        for i in range(n_vars):
            assign[i] = <int8_t>_randint(&state, 2)
        for c in range(m):
            for p in range(clause_ptr[c], clause_ptr[c + 1]):
                lit = lits[p]
                if assign[lit >> 1] ^ (lit & 1):
                    num_true[c] += 1
            if num_true[c] == 0:
                pos[c] = n_unsat
                unsat[n_unsat] = c
                n_unsat += 1
        best_unsat = n_unsat
        for i in range(n_vars):
            best[i] = assign[i]
        while flips < max_flips and n_unsat > 0:
            c = unsat[_randint(&state, n_unsat)]
            if _uniform(&state) < noise:
                p = clause_ptr[c] + _randint(&state, clause_ptr[c + 1] - clause_ptr[c])
                chosen = lits[p] >> 1
            else:
                chosen = -1
                best_score = 0
                ties = 0
                for p in range(clause_ptr[c], clause_ptr[c + 1]):
                    v = lits[p] >> 1
                    score = 0
                    for q in range(occ_ptr[v], occ_ptr[v + 1]):
                        cc = occ_clause[q]
                        was_true = _lit_true(lits, clause_ptr, cc, v, assign)
                        if was_true and num_true[cc] == 1:
                            score += 1
                        elif maxsat and num_true[cc] == 0:
                            score -= 1
                    if chosen < 0 or score < best_score:
                        chosen = v
                        best_score = score
                        ties = 1
                    elif score == best_score:
                        ties += 1
                        if _randint(&state, ties) == 0:
                            chosen = v
            # flip
            for q in range(occ_ptr[chosen], occ_ptr[chosen + 1]):
                cc = occ_clause[q]
                if _lit_true(lits, clause_ptr, cc, chosen, assign):
                    num_true[cc] -= 1
                    if num_true[cc] == 0:
                        pos[cc] = n_unsat
                        unsat[n_unsat] = cc
                        n_unsat += 1
                else:
                    num_true[cc] += 1
                    if num_true[cc] == 1:
                        i = pos[cc]
                        n_unsat -= 1
                        unsat[i] = unsat[n_unsat]
                        pos[unsat[i]] = i
                        pos[cc] = -1
            assign[chosen] ^= 1
            flips += 1
            if n_unsat < best_unsat:
                best_unsat = n_unsat
                best_flip = flips
                for i in range(n_vars):
                    best[i] = assign[i]
    return best_arr, best_unsat, flips, best_flip


cdef inline bint _lit_true(int64_t[::1] lits, int64_t[::1] clause_ptr, Py_ssize_t c,
                           Py_ssize_t v, int8_t[::1] assign) nogil:
    cdef Py_ssize_t p
    cdef int64_t lit
    for p in range(clause_ptr[c], clause_ptr[c + 1]):
        lit = lits[p]
        if (lit >> 1) == v:
            return (assign[v] ^ (lit & 1)) != 0
    return False
