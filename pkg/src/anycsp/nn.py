"""Small reverse-mode tensor library for the policy network.

Values are 2-D float64 numpy arrays. Every op takes an optional ``tape``;
when it is given and an input requires a gradient, the op appends a
closure that pushes ``out.grad`` back to its inputs. Replaying the tape in
reverse is a valid topological order because ops are recorded in
execution order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import _kernels

SUM, MEAN, MAX = "sum", "mean", "max"
AGGREGATIONS = (SUM, MEAN, MAX)
LN_EPS = 1e-5


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def const(x) -> Tensor:
    return Tensor(np.asarray(x, dtype=np.float64))


def param(x) -> Tensor:
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


class Tape:
    def __init__(self):
        self.ops = []

    def record(self, fn):
        self.ops.append(fn)

    def __len__(self):
        return len(self.ops)


def _acc(t: Tensor, g):
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _tracking(tape, *inputs) -> bool:
    return tape is not None and any(t.requires_grad for t in inputs)


def backward(tape: Tape, loss: Tensor, grad=None) -> None:
    """Accumulate gradients of ``loss`` into every tensor on the tape."""
    if tape is None or len(tape) == 0:
        raise RuntimeError("backward called on an empty tape; run a forward pass first")
    loss.grad = np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=np.float64)
    for fn in reversed(tape.ops):
        fn()
    tape.ops.clear()


# elementary ops ---------------------------------------------------------


def add(a: Tensor, b: Tensor, tape=None) -> Tensor:
    out = Tensor(a.data + b.data)
    if _tracking(tape, a, b):
        out.requires_grad = True

        def bw():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _acc(a, _unbroadcast(g, a.data.shape))
            if b.requires_grad:
                _acc(b, _unbroadcast(g, b.data.shape))

        tape.record(bw)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def relu(x: Tensor, tape=None) -> Tensor:
    mask = x.data > 0
    out = Tensor(x.data * mask)
    if _tracking(tape, x):
        out.requires_grad = True

        def bw():
            if out.grad is not None:
                _acc(x, out.grad * mask)

        tape.record(bw)
    return out


def matmul_bias(x: Tensor, W: Tensor, b: Tensor | None, tape=None) -> Tensor:
    y = x.data @ W.data
    if b is not None:
        y += b.data
    out = Tensor(y)
    ins = (x, W) if b is None else (x, W, b)
    if _tracking(tape, *ins):
        out.requires_grad = True

        def bw():
            g = out.grad
            if g is None:
                return
            if x.requires_grad:
                _acc(x, g @ W.data.T)
            if W.requires_grad:
                _acc(W, x.data.T @ g)
            if b is not None and b.requires_grad:
                _acc(b, g.sum(axis=0, keepdims=True))

        tape.record(bw)
    return out


def concat_cols(a: Tensor, b: Tensor, tape=None) -> Tensor:
    out = Tensor(np.concatenate([a.data, b.data], axis=1))
    if _tracking(tape, a, b):
        out.requires_grad = True
        k = a.data.shape[1]

        def bw():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _acc(a, g[:, :k])
            if b.requires_grad:
                _acc(b, g[:, k:])

        tape.record(bw)
    return out


def reshape(x: Tensor, shape, tape=None) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    if _tracking(tape, x):
        out.requires_grad = True
        orig = x.data.shape

        def bw():
            if out.grad is not None:
                _acc(x, out.grad.reshape(orig))

        tape.record(bw)
    return out


def gather_rows(x: Tensor, idx: np.ndarray, tape=None) -> Tensor:
    out = Tensor(x.data[idx])
    if _tracking(tape, x):
        out.requires_grad = True
        n = x.data.shape[0]

        def bw():
            g = out.grad
            if g is None:
                return
            gx = np.zeros((n, g.shape[1]))
            _kernels.scatter_add_rows(gx, idx, np.ascontiguousarray(g))
            _acc(x, gx)

        tape.record(bw)
    return out


def sum_all(x: Tensor, tape=None) -> Tensor:
    out = Tensor(np.array([[x.data.sum()]]))
    if _tracking(tape, x):
        out.requires_grad = True

        def bw():
            if out.grad is not None:
                _acc(x, np.full_like(x.data, out.grad[0, 0]))

        tape.record(bw)
    return out


def weighted_sum(x: Tensor, w: np.ndarray, tape=None) -> Tensor:
    """Scalar ``sum(w * x)`` with constant weights."""
    out = Tensor(np.array([[np.sum(w * x.data)]]))
    if _tracking(tape, x):
        out.requires_grad = True

        def bw():
            if out.grad is not None:
                _acc(x, out.grad[0, 0] * np.broadcast_to(w, x.data.shape))

        tape.record(bw)
    return out


# segments ---------------------------------------------------------------


class Segments:
    """Row-to-segment map with a precomputed stable grouping."""

    def __init__(self, ids, count: int):
        ids = np.asarray(ids, dtype=np.int64)
        if len(ids) and (ids.min() < 0 or ids.max() >= count):
            raise ValueError("segment id out of range")
        self.ids = ids
        self.count = int(count)
        if len(ids) == 0 or np.all(ids[1:] >= ids[:-1]):
            self.order = np.arange(len(ids), dtype=np.int64)
        else:
            self.order = np.argsort(ids, kind="stable").astype(np.int64)
        self.sizes = np.bincount(ids, minlength=self.count).astype(np.int64)
        self.indptr = np.zeros(self.count + 1, dtype=np.int64)
        self.indptr[1:] = np.cumsum(self.sizes)
        self.nonempty = np.flatnonzero(self.sizes)
        self.all_nonempty = len(self.nonempty) == self.count


def segment_aggregate(x: Tensor, seg: Segments, mode: str, tape=None) -> Tensor:
    """Per-segment SUM / MEAN / MAX over rows. Empty segments give 0."""
    if mode not in AGGREGATIONS:
        raise ValueError(f"unknown aggregation {mode!r}")
    if x.data.shape[0] != len(seg.ids):
        raise ValueError("row count does not match segment ids")
    xd = np.ascontiguousarray(x.data)
    arg = None
    if mode == MAX:
        y, arg = _kernels.segment_max(xd, seg.order, seg.indptr)
    else:
        y = _kernels.segment_sum(xd, seg.order, seg.indptr)
        if mode == MEAN:
            y /= np.maximum(seg.sizes, 1)[:, None]
    out = Tensor(y)
    if _tracking(tape, x):
        out.requires_grad = True
        n, d = xd.shape

        def bw():
            g = out.grad
            if g is None:
                return
            if mode == SUM:
                gx = g[seg.ids]
            elif mode == MEAN:
                gx = (g / np.maximum(seg.sizes, 1)[:, None])[seg.ids]
            else:
                gx = np.zeros((n, d))
                ne = seg.nonempty
                rows = arg[ne]
                cols = np.broadcast_to(np.arange(d), rows.shape)
                gx[rows, cols] = g[ne]
            _acc(x, gx)

        tape.record(bw)
    return out


def segment_softmax(scores: Tensor, seg: Segments, tape=None) -> Tensor:
    """Softmax within each segment of a column of scores (shape (n, 1))."""
    if not seg.all_nonempty:
        raise ValueError("segment_softmax needs every segment to be nonempty")
    s = np.ascontiguousarray(scores.data)
    mx, _ = _kernels.segment_max(s, seg.order, seg.indptr)
    e = np.exp(s - mx[seg.ids])
    tot = _kernels.segment_sum(e, seg.order, seg.indptr)
    p = e / tot[seg.ids]
    out = Tensor(p)
    if _tracking(tape, scores):
        out.requires_grad = True

        def bw():
            g = out.grad
            if g is None:
                return
            gp = np.ascontiguousarray(g * p)
            sg = _kernels.segment_sum(gp, seg.order, seg.indptr)
            _acc(scores, gp - p * sg[seg.ids])

        tape.record(bw)
    return out


def log_pick_sum(probs: Tensor, idx: np.ndarray, weights: np.ndarray, eps: float, tape=None) -> Tensor:
    """Scalar ``sum_i weights[i] * log(probs[idx[i]] + eps)``."""
    p = probs.data[idx, 0]
    out = Tensor(np.array([[np.sum(weights * np.log(p + eps))]]))
    if _tracking(tape, probs):
        out.requires_grad = True
        n = probs.data.shape[0]

        def bw():
            g = out.grad
            if g is None:
                return
            gp = np.zeros(n)
            np.add.at(gp, idx, g[0, 0] * weights / (p + eps))
            _acc(probs, gp[:, None])

        tape.record(bw)
    return out


# layers -----------------------------------------------------------------


@dataclass
class Linear:
    W: Tensor
    b: Tensor

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator) -> Linear:
        """Glorot-uniform weights and zero bias."""
        bound = np.sqrt(6.0 / (n_in + n_out))
        return cls(param(rng.uniform(-bound, bound, (n_in, n_out))), param(np.zeros((1, n_out))))

    def named(self, prefix: str):
        yield f"{prefix}.W", self.W
        yield f"{prefix}.b", self.b


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor

    @classmethod
    def init(cls, width: int) -> LayerNormParams:
        return cls(param(np.ones((1, width))), param(np.zeros((1, width))))

    def named(self, prefix: str):
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta


@dataclass
class MlpParams:
    """One ReLU hidden layer (or none, for a linear perceptron) and optional LayerNorm."""

    layers: list
    norm: LayerNormParams | None = None

    @classmethod
    def init(cls, n_in: int, n_out: int, rng, hidden: int | None = None, norm: bool = False) -> MlpParams:
        if hidden is None:
            layers = [Linear.init(n_in, n_out, rng)]
        else:
            layers = [Linear.init(n_in, hidden, rng), Linear.init(hidden, n_out, rng)]
        return cls(layers, LayerNormParams.init(n_out) if norm else None)

    @property
    def n_in(self) -> int:
        return self.layers[0].W.data.shape[0]

    @property
    def n_out(self) -> int:
        return self.layers[-1].W.data.shape[1]

    def named(self, prefix: str):
        for i, lin in enumerate(self.layers):
            yield from lin.named(f"{prefix}.{i}")
        if self.norm is not None:
            yield from self.norm.named(f"{prefix}.ln")


@dataclass
class GruParams:
    Wr: Linear
    Wz: Linear
    Wn: Linear

    @classmethod
    def init(cls, d: int, rng) -> GruParams:
        return cls(Linear.init(2 * d, d, rng), Linear.init(2 * d, d, rng), Linear.init(2 * d, d, rng))

    def named(self, prefix: str):
        yield from self.Wr.named(f"{prefix}.r")
        yield from self.Wz.named(f"{prefix}.z")
        yield from self.Wn.named(f"{prefix}.n")


def layernorm_forward(ln: LayerNormParams, x: Tensor, tape=None) -> Tensor:
    xd = x.data
    if xd.shape[1] != ln.gamma.data.shape[1]:
        raise ValueError(f"layernorm width {ln.gamma.data.shape[1]} does not match input {xd.shape[1]}")
    out, xhat, inv = _kernels.layernorm_forward(np.ascontiguousarray(xd), ln.gamma.data, ln.beta.data, LN_EPS)
    out = Tensor(out)
    if _tracking(tape, x, ln.gamma, ln.beta):
        out.requires_grad = True

        def bw():
            g = out.grad
            if g is None:
                return
            gx, gg, gb = _kernels.layernorm_backward(np.ascontiguousarray(g), xhat, inv, ln.gamma.data)
            if ln.gamma.requires_grad:
                _acc(ln.gamma, gg)
            if ln.beta.requires_grad:
                _acc(ln.beta, gb)
            if x.requires_grad:
                _acc(x, gx)

        tape.record(bw)
    return out


def mlp_forward(params: MlpParams, x: Tensor, tape=None) -> Tensor:
    if x.data.shape[1] != params.n_in:
        raise ValueError(f"mlp expects {params.n_in} input columns, got {x.data.shape[1]}")
    h = x
    last = len(params.layers) - 1
    for i, lin in enumerate(params.layers):
        h = matmul_bias(h, lin.W, lin.b, tape)
        if i < last:
            h = relu(h, tape)
    if params.norm is not None:
        h = layernorm_forward(params.norm, h, tape)
    return h


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_forward(params: GruParams, state: Tensor, inp: Tensor, tape=None) -> Tensor:
    """``h' = (1 - z) * n + z * h`` with the reset gate applied to ``h`` inside ``n``."""
    h, x = state.data, inp.data
    if h.shape != x.shape:
        raise ValueError(f"gru state {h.shape} and input {x.shape} differ")
    d = h.shape[1]
    hx = np.concatenate([h, x], axis=1)
    Wr, Wz, Wn = params.Wr, params.Wz, params.Wn
    r = _sigmoid(hx @ Wr.W.data + Wr.b.data)
    z = _sigmoid(hx @ Wz.W.data + Wz.b.data)
    rh = r * h
    rhx = np.concatenate([rh, x], axis=1)
    n = np.tanh(rhx @ Wn.W.data + Wn.b.data)
    out = Tensor((1.0 - z) * n + z * h)
    lins = (Wr.W, Wr.b, Wz.W, Wz.b, Wn.W, Wn.b)
    if _tracking(tape, state, inp, *lins):
        out.requires_grad = True

        def bw():
            g = out.grad
            if g is None:
                return
            dn = g * (1.0 - z) * (1.0 - n * n)
            dz = g * (h - n) * z * (1.0 - z)
            drhx = dn @ Wn.W.data.T
            dr = drhx[:, :d] * h * r * (1.0 - r)
            dhx = dz @ Wz.W.data.T + dr @ Wr.W.data.T
            for lin, pre, src in ((Wn, dn, rhx), (Wz, dz, hx), (Wr, dr, hx)):
                if lin.W.requires_grad:
                    _acc(lin.W, src.T @ pre)
                if lin.b.requires_grad:
                    _acc(lin.b, pre.sum(axis=0, keepdims=True))
            if state.requires_grad:
                _acc(state, g * z + drhx[:, :d] * r + dhx[:, :d])
            if inp.requires_grad:
                _acc(inp, drhx[:, d:] + dhx[:, d:])

        tape.record(bw)
    return out


def named_tensors(*groups) -> Iterator[tuple[str, Tensor]]:
    for prefix, group in groups:
        yield from group.named(prefix)
