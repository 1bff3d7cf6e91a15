"""Recurrent GNN policy over constraint value graphs.

One call to :func:`step` runs a single round of the four directed message
passes (values to constraints, constraints to values, values to variables,
variables to values), updates the per-value GRU state and emits per-domain
softmax probabilities.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .cvgraph import ConstraintValueGraph
from .nn import MlpParams, GruParams, Segments, Tensor

PARAM_GROUPS = ("E", "M_V", "M_C", "U_V", "U_C", "U_X", "O", "G")


class PolicyParameters:
    """All trainable weights of the policy, in a fixed declared order."""

    def __init__(self, d: int = 128, aggregation: str = nn.MAX, use_uc: bool = True, seed: int = 0):
        if aggregation not in nn.AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {nn.AGGREGATIONS}, got {aggregation!r}")
        rng = np.random.default_rng(seed)
        self.d = d
        self.aggregation = aggregation
        self.use_uc = use_uc
        self.E = MlpParams.init(d + 1, d, rng, hidden=d, norm=True)
        self.M_V = MlpParams.init(d, 2 * d, rng, norm=True)
        self.M_C = MlpParams.init(d, 2 * d, rng, norm=True)
        self.U_V = MlpParams.init(d, d, rng, hidden=d, norm=True)
        self.U_C = MlpParams.init(d, d, rng, hidden=d, norm=True)
        self.U_X = MlpParams.init(d, d, rng, hidden=d, norm=True)
        self.O = MlpParams.init(d, 1, rng, hidden=d)
        self.G = GruParams.init(d, rng)
        self.h = nn.param(np.zeros((1, d)))

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = list(nn.named_tensors(*((g, getattr(self, g)) for g in PARAM_GROUPS)))
        out.append(("h", self.h))
        return out

    def hyperparameters(self) -> dict:
        return {"d": self.d, "aggregation": self.aggregation, "use_uc": self.use_uc}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, t in self.named_parameters():
            if state[k].shape != t.data.shape:
                raise ValueError(f"shape mismatch for {k}: {state[k].shape} vs {t.data.shape}")
            t.data = np.array(state[k], dtype=np.float64)

    def zero_grad(self) -> None:
        for _, t in self.named_parameters():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (np.zeros_like(t.data) if t.grad is None else t.grad) for k, t in self.named_parameters()}

    def copy(self) -> PolicyParameters:
        other = PolicyParameters.__new__(PolicyParameters)
        other.__dict__.update(PolicyParameters(self.d, self.aggregation, self.use_uc).__dict__)
        other.load_state_dict(self.state_dict())
        return other

    def n_parameters(self) -> int:
        return sum(t.data.size for _, t in self.named_parameters())


class MessageIndex:
    """Segment maps of a graph that stay fixed while labels change."""

    def __init__(self, graph: ConstraintValueGraph):
        self.cons = Segments(graph.edge_cons, graph.n_cons)
        self.vals = Segments(graph.edge_val, graph.n_values)
        self.vars = Segments(graph.value_var, graph.n_vars)
        self.inst = Segments(graph.value_inst, graph.n_inst)
        self.two_val = 2 * graph.edge_val
        self.two_cons = 2 * graph.edge_cons


def message_index(graph: ConstraintValueGraph) -> MessageIndex:
    idx = getattr(graph, "_message_index", None)
    if idx is None:
        idx = MessageIndex(graph)
        graph._message_index = idx
    return idx


def init_state(params: PolicyParameters, graph: ConstraintValueGraph, tape=None) -> Tensor:
    """Every value starts from the learned initial state."""
    return nn.gather_rows(params.h, np.zeros(graph.n_values, dtype=np.int64), tape)


def step(params: PolicyParameters, graph: ConstraintValueGraph, state: Tensor, tape=None,
         softmax_over: str = "domain") -> tuple[Tensor, Tensor]:
    """One policy iteration on the current labels of ``graph``.

    Returns ``(phi, new_state)`` where ``phi`` has shape ``(n_values, 1)``.
    ``softmax_over="instance"`` normalises over all values of each instance
    instead of per domain (the local-search variant).
    """
    d = params.d
    V, C = graph.n_values, graph.n_cons
    if state.data.shape != (V, d):
        raise ValueError(f"state has shape {state.data.shape}, expected {(V, d)}")
    agg = params.aggregation
    mi = message_index(graph)
    le = graph.le.astype(np.int64)

    lv = nn.const(graph.lv[:, None].astype(np.float64))
    x = nn.mlp_forward(params.E, nn.concat_cols(state, lv, tape), tape)

    # values -> constraints: column block 0 of M_V is the label-0 message, block 1 the label-1 message
    mv = nn.reshape(nn.mlp_forward(params.M_V, x, tape), (2 * V, d), tape)
    y_c = nn.segment_aggregate(nn.gather_rows(mv, mi.two_val + le, tape), mi.cons, agg, tape)
    if params.use_uc:
        y_c = nn.mlp_forward(params.U_C, y_c, tape)

    # constraints -> values
    mc = nn.reshape(nn.mlp_forward(params.M_C, y_c, tape), (2 * C, d), tape)
    y_v = nn.segment_aggregate(nn.gather_rows(mc, mi.two_cons + le, tape), mi.vals, agg, tape)
    z_v = nn.add(nn.mlp_forward(params.U_V, nn.add(x, y_v, tape), tape), x, tape)

    # values -> variables -> values
    z_x = nn.mlp_forward(params.U_X, nn.segment_aggregate(z_v, mi.vars, agg, tape), tape)
    inp = nn.add(z_v, nn.gather_rows(z_x, graph.value_var, tape), tape)
    h_new = nn.gru_forward(params.G, state, inp, tape)

    scores = nn.mlp_forward(params.O, h_new, tape)
    seg = mi.vars if softmax_over == "domain" else mi.inst
    phi = nn.segment_softmax(scores, seg, tape)
    if not (np.all(np.isfinite(phi.data)) and np.all(np.isfinite(h_new.data))):
        raise FloatingPointError(
            f"non-finite policy output: {np.sum(~np.isfinite(scores.data))} bad scores, "
            f"{np.sum(~np.isfinite(h_new.data))} bad state entries"
        )
    return phi, h_new
