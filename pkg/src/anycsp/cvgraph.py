"""Constraint value graphs and their per-assignment labels.

A graph may cover several instances at once (a disjoint union), which is
how batched rollouts run one message pass for a whole batch. Arrays are
flat and indexed globally; ``*_inst`` arrays map back to the instance.

Constraint edges are laid out constraint-major, then scope position, then
domain index, so the edge of ``(C, X_i, d)`` is
``cons_edge_ptr[C] + scope_offset_i + d``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import _kernels
from .csp import ALLDIFFERENT, ALLOWED, CMP_CODES, FORBIDDEN, LINEAR, CspInstance, Constraint

_I64 = np.int64


class ConstraintValueGraph:
    """Static topology plus the mutable labels ``lv`` and ``le``."""

    def __init__(self, instances: Sequence[CspInstance]):
        self.instances = list(instances)
        self.n_inst = len(self.instances)
        self._build()
        self.lv = np.zeros(self.n_values, dtype=np.int8)
        self.le = np.zeros(self.n_edges, dtype=np.int8)
        self.assignment = None

    # construction -----------------------------------------------------

    def _build(self):
        var_sizes, var_inst = [], []
        cons_inst, cons_arity, cons_kind = [], [], []
        var_base = 0
        self.var_ptr = [0]  # per instance
        self.cons_ptr = [0]
        for i, inst in enumerate(self.instances):
            var_sizes.extend(len(d) for d in inst.domains)
            var_inst.extend([i] * inst.n_vars)
            cons_inst.extend([i] * len(inst.constraints))
            var_base += inst.n_vars
            self.var_ptr.append(var_base)
            self.cons_ptr.append(self.cons_ptr[-1] + len(inst.constraints))
        self.var_ptr = np.asarray(self.var_ptr, _I64)
        self.cons_ptr = np.asarray(self.cons_ptr, _I64)
        self.n_vars = int(self.var_ptr[-1])
        self.n_cons = int(self.cons_ptr[-1])
        self.domain_sizes = np.asarray(var_sizes, _I64)
        self.var_offsets = np.zeros(self.n_vars + 1, _I64)
        self.var_offsets[1:] = np.cumsum(self.domain_sizes)
        self.n_values = int(self.var_offsets[-1])
        self.value_var = np.repeat(np.arange(self.n_vars, dtype=_I64), self.domain_sizes)
        self.var_inst = np.asarray(var_inst, _I64)
        self.value_inst = self.var_inst[self.value_var]
        self.cons_inst = np.asarray(cons_inst, _I64)
        self.value_ptr = self.var_offsets[self.var_ptr]  # per instance value range

        edge_val, edge_cons = [], []
        slot_cons, slot_var, slot_edge_base = [], [], []
        cons_edge_ptr = [0]
        cons_arity = []
        # extension incidence
        ext_slot_val, ext_slot_edge, ext_tuple_len = [], [], []
        ext_cons = []
        forbidden_cons = []
        lin_cons, alld_cons = [], []
        value_token = []
        for inst in self.instances:
            for dom in inst.domains:
                value_token.extend(dom)
        self.value_token = value_token

        c_global = 0
        for i, inst in enumerate(self.instances):
            vbase = int(self.var_ptr[i])
            for c in inst.constraints:
                e0 = cons_edge_ptr[-1]
                offs = []
                e = e0
                for x in c.scope:
                    gx = vbase + x
                    offs.append(e)
                    vo = self.var_offsets[gx]
                    size = self.domain_sizes[gx]
                    edge_val.extend(range(vo, vo + size))
                    edge_cons.extend([c_global] * size)
                    slot_cons.append(c_global)
                    slot_var.append(gx)
                    slot_edge_base.append(e)
                    e += size
                cons_edge_ptr.append(e)
                cons_arity.append(c.arity)
                if c.kind in (ALLOWED, FORBIDDEN):
                    ext_cons.append(c_global)
                    if c.kind == FORBIDDEN:
                        forbidden_cons.append(c_global)
                    for t in c.tuples:
                        for pos, d in enumerate(t):
                            gx = vbase + c.scope[pos]
                            ext_slot_val.append(self.var_offsets[gx] + d)
                            ext_slot_edge.append(offs[pos] + d)
                        ext_tuple_len.append(len(t))
                elif c.kind == LINEAR:
                    lin_cons.append((c_global, c, vbase, offs))
                else:
                    alld_cons.append((c_global, c, vbase, offs))
                c_global += 1

        self.edge_val = np.asarray(edge_val, _I64)
        self.edge_cons = np.asarray(edge_cons, _I64)
        self.n_edges = len(self.edge_val)
        self.cons_edge_ptr = np.asarray(cons_edge_ptr, _I64)
        self.cons_arity = np.asarray(cons_arity, _I64)
        self.edge_arity = self.cons_arity[self.edge_cons] if self.n_edges else np.zeros(0, _I64)
        self.slot_cons = np.asarray(slot_cons, _I64)
        self.slot_var = np.asarray(slot_var, _I64)
        self.slot_edge_base = np.asarray(slot_edge_base, _I64)
        self.cons_slot_ptr = np.zeros(self.n_cons + 1, _I64)
        self.cons_slot_ptr[1:] = np.cumsum(self.cons_arity)

        forb = np.zeros(self.n_cons, np.uint8)
        forb[forbidden_cons] = 1
        self.edge_forbidden = np.ascontiguousarray(forb[self.edge_cons]) if self.n_edges else np.zeros(0, np.uint8)
        is_ext = np.zeros(self.n_cons, bool)
        is_ext[ext_cons] = True
        self.ext_edges = np.flatnonzero(is_ext[self.edge_cons]).astype(_I64) if self.n_edges else np.zeros(0, _I64)
        self.ext_slot_val = np.asarray(ext_slot_val, _I64)
        self.ext_slot_edge = np.asarray(ext_slot_edge, _I64)
        self.ext_tuple_ptr = np.zeros(len(ext_tuple_len) + 1, _I64)
        self.ext_tuple_ptr[1:] = np.cumsum(ext_tuple_len)

        self._build_linear(lin_cons)
        self._build_alldiff(alld_cons)

    def _build_linear(self, lin_cons):
        e_idx, e_cons, e_coef, e_var, e_num = [], [], [], [], []
        s_cons, s_var, s_coef = [], [], []
        const, cmp = [], []
        for j, (cg, c, vbase, offs) in enumerate(lin_cons):
            const.append(c.const)
            cmp.append(CMP_CODES[c.cmp])
            for pos, x in enumerate(c.scope):
                gx = vbase + x
                a = c.coeffs[pos]
                s_cons.append(j)
                s_var.append(gx)
                s_coef.append(a)
                size = self.domain_sizes[gx]
                for d in range(size):
                    e_idx.append(offs[pos] + d)
                    e_cons.append(j)
                    e_coef.append(a)
                    e_var.append(gx)
                    e_num.append(int(self.value_token[self.var_offsets[gx] + d]))
        self.n_lin = len(lin_cons)
        self.lin_edge = np.asarray(e_idx, _I64)
        self.lin_edge_cons = np.asarray(e_cons, _I64)
        self.lin_edge_coef = np.asarray(e_coef, _I64)
        self.lin_edge_var = np.asarray(e_var, _I64)
        self.lin_edge_num = np.asarray(e_num, _I64)
        self.lin_slot_cons = np.asarray(s_cons, _I64)
        self.lin_slot_var = np.asarray(s_var, _I64)
        self.lin_slot_coef = np.asarray(s_coef, _I64)
        self.lin_const = np.asarray(const, _I64)
        self.lin_cmp = np.asarray(cmp, _I64)
        num = np.zeros(self.n_values, _I64)
        if self.n_lin:
            for v, tok in enumerate(self.value_token):
                if isinstance(tok, (int, np.integer)):
                    num[v] = int(tok)
        self.value_num = num

    def _build_alldiff(self, alld_cons):
        elem_ids: dict = {}
        e_idx, e_cons, e_var, e_elem = [], [], [], []
        s_cons, s_var = [], []
        for j, (cg, c, vbase, offs) in enumerate(alld_cons):
            for pos, x in enumerate(c.scope):
                gx = vbase + x
                s_cons.append(j)
                s_var.append(gx)
                for d in range(self.domain_sizes[gx]):
                    tok = self.value_token[self.var_offsets[gx] + d]
                    e_idx.append(offs[pos] + d)
                    e_cons.append(j)
                    e_var.append(gx)
                    e_elem.append(elem_ids.setdefault(tok, len(elem_ids)))
        self.n_alld = len(alld_cons)
        self.n_elems = max(len(elem_ids), 1)
        self.ad_edge = np.asarray(e_idx, _I64)
        self.ad_edge_cons = np.asarray(e_cons, _I64)
        self.ad_edge_var = np.asarray(e_var, _I64)
        self.ad_edge_elem = np.asarray(e_elem, _I64)
        self.ad_slot_cons = np.asarray(s_cons, _I64)
        self.ad_slot_var = np.asarray(s_var, _I64)
        value_elem = np.full(self.n_values, -1, _I64)
        value_elem[self.edge_val[self.ad_edge]] = self.ad_edge_elem
        self.value_elem = value_elem

    # labels -----------------------------------------------------------

    def relabel(self, assignment) -> None:
        """Recompute ``lv`` and ``le`` for ``assignment`` (domain index per variable)."""
        a = np.asarray(assignment, dtype=_I64)
        if a.shape != (self.n_vars,):
            raise ValueError(f"assignment has shape {a.shape}, expected ({self.n_vars},)")
        self.assignment = a
        chosen = self.var_offsets[:-1] + a
        lv = np.zeros(self.n_values, dtype=np.int8)
        lv[chosen] = 1
        le = np.zeros(self.n_edges, dtype=np.int8)
        if len(self.ext_edges):
            _kernels.extension_labels(
                lv, self.ext_slot_val, self.ext_slot_edge, self.ext_tuple_ptr, self.ext_edges,
                self.edge_val, self.edge_arity, self.edge_forbidden, le,
            )
        if self.n_lin:
            le[self.lin_edge] = self._linear_labels(chosen)
        if self.n_alld:
            le[self.ad_edge] = self._alldiff_labels(chosen)
        self.lv = lv
        self.le = le

    def _linear_labels(self, chosen):
        num_assigned = self.value_num[chosen]  # per variable
        total = np.zeros(self.n_lin, _I64)
        np.add.at(total, self.lin_slot_cons, self.lin_slot_coef * num_assigned[self.lin_slot_var])
        j = self.lin_edge_cons
        partial = total[j] - self.lin_edge_coef * num_assigned[self.lin_edge_var] + self.lin_edge_coef * self.lin_edge_num
        diff = partial - self.lin_const[j]
        code = self.lin_cmp[j]
        out = np.select(
            [code == 0, code == 1, code == 2, code == 3, code == 4, code == 5],
            [diff <= 0, diff < 0, diff == 0, diff != 0, diff > 0, diff >= 0],
        )
        return out.astype(np.int8)

    def _alldiff_labels(self, chosen):
        elem_assigned = self.value_elem[chosen[self.ad_slot_var]]
        keys = np.sort(self.ad_slot_cons * self.n_elems + elem_assigned)
        q = self.ad_edge_cons * self.n_elems + self.ad_edge_elem
        count = np.searchsorted(keys, q, side="right") - np.searchsorted(keys, q, side="left")
        own_elem = self.value_elem[chosen[self.ad_edge_var]]
        own = own_elem == self.ad_edge_elem
        # duplicates among the scope slots, and whether this slot's own value is one of them
        distinct = np.bincount(np.unique(keys) // self.n_elems, minlength=self.n_alld)
        arity = np.bincount(self.ad_slot_cons, minlength=self.n_alld)
        excess = (arity - distinct)[self.ad_edge_cons]
        qo = self.ad_edge_cons * self.n_elems + own_elem
        own_count = np.searchsorted(keys, qo, side="right") - np.searchsorted(keys, qo, side="left")
        others_clash = excess - (own_count >= 2) > 0
        return ((count - own == 0) & ~others_clash).astype(np.int8)

    # derived quantities ------------------------------------------------

    def assigned_edges(self, assignment=None) -> np.ndarray:
        """Per (constraint, scope slot), the edge of the currently assigned value."""
        a = self.assignment if assignment is None else np.asarray(assignment, _I64)
        return self.slot_edge_base + a[self.slot_var]

    def satisfied(self) -> np.ndarray:
        """Boolean per constraint, read off the current edge labels."""
        if self.n_cons == 0:
            return np.zeros(0, bool)
        lab = self.le[self.assigned_edges()]
        return np.minimum.reduceat(lab, self.cons_slot_ptr[:-1]).astype(bool)

    def satisfied_counts(self) -> np.ndarray:
        """Satisfied constraints per instance."""
        return np.bincount(self.cons_inst, weights=self.satisfied(), minlength=self.n_inst).astype(_I64)

    def cons_counts(self) -> np.ndarray:
        return np.diff(self.cons_ptr)

    def split_assignment(self, assignment) -> list[np.ndarray]:
        a = np.asarray(assignment, _I64)
        return [a[self.var_ptr[i]:self.var_ptr[i + 1]] for i in range(self.n_inst)]

    def edge_of(self, c: int, scope_pos: int, d: int) -> int:
        return int(self.slot_edge_base[self.cons_slot_ptr[c] + scope_pos] + d)


def build(instance: CspInstance) -> ConstraintValueGraph:
    return ConstraintValueGraph([instance])


def build_batch(instances: Sequence[CspInstance]) -> ConstraintValueGraph:
    return ConstraintValueGraph(instances)


def relabel(graph: ConstraintValueGraph, instance: CspInstance | None, assignment):
    """Relabel ``graph`` for ``assignment`` and return ``(lv, le)``."""
    graph.relabel(assignment)
    return graph.lv, graph.le


def complement(instance: CspInstance, c: Constraint) -> Constraint:
    """The same relation in the opposite extension encoding."""
    sizes = [len(instance.domains[x]) for x in c.scope]
    listed = set(c.tuples)
    rest = [t for t in np.ndindex(*sizes) if t not in listed]
    if c.kind == ALLOWED:
        return Constraint.forbidden(c.scope, rest)
    if c.kind == FORBIDDEN:
        return Constraint.allowed(c.scope, rest)
    raise ValueError("only extension constraints have a complement encoding")


def equivalent_encodings_check(instance: CspInstance, assignments=None, rng=None, n_samples: int = 64) -> bool:
    """Relabel under the given encoding and under complemented extension
    constraints, and compare edge labels on a set of assignments.

    When ``assignments`` is None, all joint assignments are used if there
    are at most ``n_samples`` of them, else ``n_samples`` random ones.
    """
    flipped = CspInstance(
        instance.domains,
        [complement(instance, c) if c.kind in (ALLOWED, FORBIDDEN) else c for c in instance.constraints],
        instance.variables,
    )
    g1, g2 = build(instance), build(flipped)
    if assignments is None:
        total = int(np.prod(instance.domain_sizes))
        if total <= n_samples:
            assignments = list(np.ndindex(*instance.domain_sizes))
        else:
            rng = rng or np.random.default_rng(0)
            assignments = [np.floor(rng.random(instance.n_vars) * instance.domain_sizes).astype(_I64)
                           for _ in range(n_samples)]
    for a in assignments:
        g1.relabel(a)
        g2.relabel(a)
        if not np.array_equal(g1.le, g2.le) or not np.array_equal(g1.lv, g2.lv):
            return False
    return True
