"""Rollouts of the policy as a stochastic search over assignments."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .csp import CspError, CspInstance, sample_indices
from .cvgraph import ConstraintValueGraph
from .policy import PolicyParameters, init_state, step

GLOBAL = "global"
LOCAL = "local"
QUAL = "qual"
MODES = (GLOBAL, LOCAL, QUAL)


@dataclass
class SearchConfig:
    steps: int | None = 100
    timeout: float | None = None
    mode: str = GLOBAL
    seed: int = 0
    stop_on_solution: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if (self.steps is None or self.steps < 1) and self.timeout is None:
            raise ValueError("need steps >= 1 or a timeout")


@dataclass
class EpisodeTrace:
    """Search history of one instance.

    ``qualities[t-1]`` is Q of the assignment sampled at step t and
    ``best_qualities[t-1]`` the best quality seen up to and including it.
    """

    initial_assignment: np.ndarray
    initial_quality: float
    n_constraints: int
    qualities: list = field(default_factory=list)
    best_qualities: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    best_assignment: np.ndarray | None = None
    steps_to_best: int = 0
    assignments: list | None = None
    chosen_probs: list | None = None

    @property
    def total_steps(self) -> int:
        return len(self.qualities)

    @property
    def best_quality(self) -> float:
        return self.best_qualities[-1] if self.best_qualities else self.initial_quality

    @property
    def total_reward(self) -> float:
        return float(sum(self.rewards))

    @property
    def solved(self) -> bool:
        return self.best_quality >= 1.0

    @property
    def unsat_count(self) -> int:
        return int(round((1.0 - self.best_quality) * self.n_constraints))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["step", "quality", "best_quality", "reward", "wall_ms"])
            for t, (q, b, r, ms) in enumerate(zip(self.qualities, self.best_qualities, self.rewards, self.wall_ms), 1):
                w.writerow([t, repr(q), repr(b), repr(r), f"{ms:.3f}"])


@dataclass
class BatchRollout:
    """Traces plus whatever the gradient computation needs."""

    traces: list[EpisodeTrace]
    graph: ConstraintValueGraph
    probs: list = field(default_factory=list)    # per step: phi tensor (n_values, 1)
    picks: list = field(default_factory=list)    # per step: chosen global value indices
    pick_inst: list = field(default_factory=list)  # per step: instance of each pick

    def rewards(self) -> np.ndarray:
        """Rewards as a (steps, instances) array; zero after an instance stopped."""
        T = max(t.total_steps for t in self.traces)
        out = np.zeros((T, len(self.traces)))
        for i, tr in enumerate(self.traces):
            out[:tr.total_steps, i] = tr.rewards
        return out


def improvement_reward(q_t: float, q_best: float) -> float:
    """Margin by which ``q_t`` beats the best prior quality."""
    return max(q_t - q_best, 0.0)


def reward_quality_baseline(q_t: float, q_initial: float) -> float:
    """Quality relative to the initial assignment; may be negative."""
    return q_t - q_initial


def sample_step_local(probs: np.ndarray, var_offsets: np.ndarray, current: np.ndarray,
                      rng: np.random.Generator) -> np.ndarray:
    """Draw one value from a distribution over all values and assign it."""
    flat = np.asarray(probs, dtype=np.float64).ravel()
    v = int(sample_indices(flat, np.array([0, len(flat)]), rng.random(1))[0])
    x = int(np.searchsorted(var_offsets, v, side="right") - 1)
    new = np.array(current, dtype=np.int64, copy=True)
    new[x] = v - var_offsets[x]
    return new


def _uniform_start(graph: ConstraintValueGraph, rngs) -> np.ndarray:
    parts = []
    for i, rng in enumerate(rngs):
        sizes = graph.domain_sizes[graph.var_ptr[i]:graph.var_ptr[i + 1]]
        parts.append(np.floor(rng.random(len(sizes)) * sizes).astype(np.int64))
    return np.concatenate(parts) if parts else np.zeros(0, np.int64)


def run_batch(params: PolicyParameters, instances: Sequence[CspInstance], steps: int | None,
              rngs: Sequence[np.random.Generator], mode: str = GLOBAL, tape=None,
              stop_on_solution: bool = False, timeout: float | None = None,
              keep_assignments: bool = False, graph: ConstraintValueGraph | None = None) -> BatchRollout:
    """Run independent rollouts on several instances through one merged graph.

    Each instance draws its randomness from its own generator, so results
    for an instance do not depend on which other instances share the batch.
    With ``stop_on_solution`` an instance stops recording once it reaches
    quality 1; the batch stops when all have stopped.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if steps is None and timeout is None:
        raise ValueError("need steps or a timeout")
    for inst in instances:
        if not inst.constraints:
            raise CspError("degenerate instance: no constraints")
    g = ConstraintValueGraph(instances) if graph is None else graph
    B = g.n_inst
    n_cons = g.cons_counts().astype(np.float64)
    t0 = time.perf_counter()

    assign = _uniform_start(g, rngs)
    g.relabel(assign)
    q0 = g.satisfied_counts() / n_cons
    best = q0.copy()
    traces = [EpisodeTrace(a.copy(), float(q0[i]), int(n_cons[i]), best_assignment=a.copy())
              for i, a in enumerate(g.split_assignment(assign))]
    if keep_assignments:
        for tr in traces:
            tr.assignments, tr.chosen_probs = [], []
    active = np.ones(B, dtype=bool)
    if stop_on_solution:
        active &= q0 < 1.0
    out = BatchRollout(traces, g)

    softmax_over = "instance" if mode == LOCAL else "domain"
    state = init_state(params, g, tape)
    t = 0
    while active.any():
        if steps is not None and t >= steps:
            break
        if timeout is not None and time.perf_counter() - t0 >= timeout:
            break
        t += 1
        phi, state = step(params, g, state, tape, softmax_over=softmax_over)
        p = phi.data[:, 0]
        if mode == LOCAL:
            picks = np.empty(B, dtype=np.int64)
            for i, rng in enumerate(rngs):
                lo, hi = g.var_offsets[g.var_ptr[i]], g.var_offsets[g.var_ptr[i + 1]]
                picks[i] = lo + sample_indices(p[lo:hi], np.array([0, hi - lo]), rng.random(1))[0]
            x = g.value_var[picks]
            assign = assign.copy()
            assign[x] = picks - g.var_offsets[x]
            pick_inst = np.arange(B)
        else:
            u = np.concatenate([rng.random(g.var_ptr[i + 1] - g.var_ptr[i]) for i, rng in enumerate(rngs)])
            assign = sample_indices(p, g.var_offsets, u)
            picks = g.var_offsets[:-1] + assign
            pick_inst = g.var_inst
        if tape is not None:
            out.probs.append(phi)
            out.picks.append(picks)
            out.pick_inst.append(pick_inst)
        g.relabel(assign)
        q = g.satisfied_counts() / n_cons
        ms = (time.perf_counter() - t0) * 1000.0
        parts = g.split_assignment(assign) if keep_assignments or np.any(q > best) else None
        for i in np.flatnonzero(active):
            tr = traces[i]
            qi = float(q[i])
            if mode == QUAL:
                r = reward_quality_baseline(qi, tr.initial_quality)
            else:
                r = improvement_reward(qi, float(best[i]))
            if qi > best[i]:
                best[i] = qi
                tr.best_assignment = parts[i].copy()
                tr.steps_to_best = t
            tr.qualities.append(qi)
            tr.best_qualities.append(float(best[i]))
            tr.rewards.append(r)
            tr.wall_ms.append(ms)
            if keep_assignments:
                tr.assignments.append(parts[i].copy())
                tr.chosen_probs.append(p[g.var_offsets[g.var_ptr[i]:g.var_ptr[i + 1]] + parts[i]].copy())
        if stop_on_solution:
            active &= best < 1.0
    return out


def rollout(params: PolicyParameters, instance: CspInstance, config: SearchConfig,
            rng: np.random.Generator | None = None, tape=None) -> EpisodeTrace:
    """Search one instance; the full per-step history is kept when taped."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    res = run_batch(params, [instance], config.steps, [rng], mode=config.mode, tape=tape,
                    stop_on_solution=config.stop_on_solution, timeout=config.timeout,
                    keep_assignments=tape is not None)
    return res.traces[0]


def instance_rngs(base_seed: int, count: int) -> list[np.random.Generator]:
    """Independent streams seeded with ``base_seed + index``."""
    return [np.random.default_rng(base_seed + i) for i in range(count)]


__all__ = [
    "GLOBAL", "LOCAL", "QUAL", "MODES", "SearchConfig", "EpisodeTrace", "BatchRollout",
    "improvement_reward", "reward_quality_baseline", "sample_step_local", "run_batch", "rollout",
    "instance_rngs",
]
