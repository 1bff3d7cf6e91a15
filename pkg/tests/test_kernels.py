import numpy as np
import pytest

from anycsp import _fallback, _kernels, cvgraph
from anycsp.baselines import CnfIndex
from anycsp.instances import gen_uniform_ksat_clauses

from helpers import random_assignment, random_instance

BACKENDS = _kernels.backends()
needs_compiled = pytest.mark.skipif("compiled" not in BACKENDS, reason="compiled extension not built")


def _segments(rng, n, S):
    ids = rng.integers(0, S, size=n)
    order = np.argsort(ids, kind="stable").astype(np.int64)
    indptr = np.zeros(S + 1, dtype=np.int64)
    indptr[1:] = np.cumsum(np.bincount(ids, minlength=S))
    return ids, order, indptr


def test_backend_selection_reports_name():
    assert _kernels.BACKEND in BACKENDS
    assert "python" in BACKENDS


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_segment_sum_against_bincount(name):
    k = BACKENDS[name]
    rng = np.random.default_rng(0)
    ids, order, indptr = _segments(rng, 50, 12)
    x = rng.normal(size=(50, 3))
    out = k.segment_sum(x, order, indptr)
    ref = np.stack([np.bincount(ids, weights=x[:, j], minlength=12) for j in range(3)], 1)
    assert np.allclose(out, ref)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_segment_max_against_loop(name):
    k = BACKENDS[name]
    rng = np.random.default_rng(1)
    ids, order, indptr = _segments(rng, 40, 15)
    x = rng.integers(-3, 3, size=(40, 2)).astype(float)  # many ties
    out, arg = k.segment_max(x, order, indptr)
    for s in range(15):
        rows = np.flatnonzero(ids == s)
        if len(rows) == 0:
            assert np.all(out[s] == 0) and np.all(arg[s] == -1)
            continue
        for j in range(2):
            assert out[s, j] == x[rows, j].max()
            # ties resolve to the first row in segment order
            assert arg[s, j] == rows[np.argmax(x[rows, j])]


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_scatter_add_rows_against_add_at(name):
    k = BACKENDS[name]
    rng = np.random.default_rng(2)
    idx = rng.integers(0, 7, size=30).astype(np.int64)
    g = rng.normal(size=(30, 4))
    out = np.zeros((7, 4))
    k.scatter_add_rows(out, idx, g)
    ref = np.zeros((7, 4))
    np.add.at(ref, idx, g)
    assert np.allclose(out, ref)


@needs_compiled
def test_layernorm_backends_agree():
    rng = np.random.default_rng(3)
    x, g = rng.normal(size=(9, 6)), rng.normal(size=(9, 6))
    gamma, beta = rng.normal(size=(1, 6)), rng.normal(size=(1, 6))
    a = BACKENDS["compiled"].layernorm_forward(x, gamma, beta, 1e-5)
    b = _fallback.layernorm_forward(x, gamma, beta, 1e-5)
    for u, v in zip(a, b):
        assert np.allclose(u, np.reshape(v, np.shape(u)), atol=1e-12)
    ga = BACKENDS["compiled"].layernorm_backward(g, a[1], a[2], gamma)
    gb = _fallback.layernorm_backward(g, b[1], b[2], gamma)
    for u, v in zip(ga, gb):
        assert np.allclose(u, np.reshape(v, np.shape(u)), atol=1e-12)


@needs_compiled
@pytest.mark.parametrize("maxsat", [False, True])
def test_walksat_bit_identical(maxsat):
    rng = np.random.default_rng(4)
    clauses = gen_uniform_ksat_clauses(25, 3, 4.3, rng)
    idx = CnfIndex(clauses, 25)
    args = (idx.clause_ptr, idx.lits, idx.n_vars, idx.occ_ptr, idx.occ_clause, 2000, 0.4, 123, maxsat)
    a = BACKENDS["compiled"].walksat_run(*args)
    b = _fallback.walksat_run(*args)
    assert np.array_equal(np.asarray(a[0]), b[0])
    assert tuple(a[1:]) == tuple(b[1:])


@needs_compiled
def test_extension_labels_backends_agree(monkeypatch):
    rng = np.random.default_rng(5)
    for _ in range(40):
        inst = random_instance(rng)
        a = random_assignment(rng, inst)
        g = cvgraph.build(inst)
        monkeypatch.setattr(_kernels, "extension_labels", BACKENDS["compiled"].extension_labels)
        g.relabel(a)
        le_c = g.le.copy()
        monkeypatch.setattr(_kernels, "extension_labels", _fallback.extension_labels)
        g.relabel(a)
        assert np.array_equal(le_c, g.le)
