"""CSP instances, assignments, soft assignments and quality."""

from __future__ import annotations

import math
import operator
from dataclasses import dataclass
from typing import Sequence

import numpy as np

ALLOWED = "allowed"
FORBIDDEN = "forbidden"
LINEAR = "linear"
ALLDIFFERENT = "alldifferent"
KINDS = (ALLOWED, FORBIDDEN, LINEAR, ALLDIFFERENT)

COMPARATORS = {
    "<=": operator.le,
    "<": operator.lt,
    "=": operator.eq,
    "!=": operator.ne,
    ">": operator.gt,
    ">=": operator.ge,
}
CMP_CODES = {c: i for i, c in enumerate(COMPARATORS)}


class CspError(ValueError):
    """Raised for malformed instances or degenerate inputs."""


@dataclass(frozen=True)
class Constraint:
    """A constraint over variable indices.

    ``tuples`` hold domain indices (not tokens) for extension constraints.
    Linear constraints read ``coeffs``, ``cmp`` and ``const`` and compare
    ``sum(coeffs[i] * value(scope[i])) cmp const`` on integer tokens.
    """

    scope: tuple[int, ...]
    kind: str
    tuples: tuple[tuple[int, ...], ...] = ()
    coeffs: tuple[int, ...] = ()
    cmp: str = "<="
    const: int = 0

    @classmethod
    def allowed(cls, scope, tuples):
        return cls(tuple(scope), ALLOWED, tuple(tuple(t) for t in tuples))

    @classmethod
    def forbidden(cls, scope, tuples):
        return cls(tuple(scope), FORBIDDEN, tuple(tuple(t) for t in tuples))

    @classmethod
    def linear(cls, scope, coeffs, cmp, const):
        return cls(tuple(scope), LINEAR, coeffs=tuple(int(a) for a in coeffs), cmp=cmp, const=int(const))

    @classmethod
    def alldifferent(cls, scope):
        return cls(tuple(scope), ALLDIFFERENT)

    @property
    def arity(self) -> int:
        return len(self.scope)


class CspInstance:
    """Variables with finite domains and a list of constraints.

    Variables are addressed by position; ``variables`` only carries display
    ids. Domain entries are opaque tokens, referenced by index everywhere
    else. Treat instances as immutable.
    """

    def __init__(self, domains: Sequence[Sequence], constraints: Sequence[Constraint], variables=None):
        self.domains = tuple(tuple(d) for d in domains)
        self.constraints = tuple(constraints)
        self.variables = tuple(range(len(self.domains)) if variables is None else variables)
        offsets = np.zeros(len(self.domains) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum([len(d) for d in self.domains])
        offsets.setflags(write=False)
        self.value_offsets = offsets
        self._validate()

    def _validate(self):
        if len(self.variables) != len(self.domains):
            raise CspError("variable ids and domains differ in length")
        if len(set(self.variables)) != len(self.variables):
            raise CspError("duplicate variable ids")
        for x, dom in enumerate(self.domains):
            if len(dom) < 1:
                raise CspError(f"variable {self.variables[x]!r} has an empty domain")
        n = len(self.domains)
        for ci, c in enumerate(self.constraints):
            if c.kind not in KINDS:
                raise CspError(f"constraint {ci}: unknown kind {c.kind!r}")
            if not c.scope:
                raise CspError(f"constraint {ci}: empty scope")
            if len(set(c.scope)) != len(c.scope):
                raise CspError(f"constraint {ci}: scope variables are not distinct")
            if any(not 0 <= x < n for x in c.scope):
                raise CspError(f"constraint {ci}: scope references unknown variable")
            if c.kind in (ALLOWED, FORBIDDEN):
                sizes = [len(self.domains[x]) for x in c.scope]
                for t in c.tuples:
                    if len(t) != len(sizes) or any(not 0 <= a < s for a, s in zip(t, sizes)):
                        raise CspError(f"constraint {ci}: tuple {t} out of range")
                if len(set(c.tuples)) != len(c.tuples):
                    raise CspError(f"constraint {ci}: duplicate tuples")
            elif c.kind == LINEAR:
                if len(c.coeffs) != len(c.scope):
                    raise CspError(f"constraint {ci}: coefficient count does not match arity")
                if c.cmp not in COMPARATORS:
                    raise CspError(f"constraint {ci}: unknown comparator {c.cmp!r}")
                for x in c.scope:
                    if not all(_is_int(tok) for tok in self.domains[x]):
                        raise CspError(f"constraint {ci}: linear constraint over non-integer domain")

    @property
    def n_vars(self) -> int:
        return len(self.domains)

    @property
    def n_values(self) -> int:
        return int(self.value_offsets[-1])

    @property
    def domain_sizes(self) -> np.ndarray:
        return np.diff(self.value_offsets)

    def value_index(self, var: int, d: int) -> int:
        return int(self.value_offsets[var] + d)

    __hash__ = object.__hash__

    def __eq__(self, other):
        if not isinstance(other, CspInstance):
            return NotImplemented
        return (self.domains, self.constraints, self.variables) == (
            other.domains, other.constraints, other.variables)


def _is_int(tok) -> bool:
    return isinstance(tok, (int, np.integer)) and not isinstance(tok, bool)


def check_assignment(instance: CspInstance, assignment) -> np.ndarray:
    a = np.asarray(assignment, dtype=np.int64)
    if a.shape != (instance.n_vars,):
        raise CspError(f"assignment has shape {a.shape}, expected ({instance.n_vars},)")
    if np.any(a < 0) or np.any(a >= instance.domain_sizes):
        raise CspError("assignment index outside its domain")
    return a


def satisfies(instance: CspInstance, constraint: Constraint, assignment) -> bool:
    """Whether ``assignment`` (domain indices per variable) satisfies ``constraint``."""
    tup = tuple(int(assignment[x]) for x in constraint.scope)
    kind = constraint.kind
    if kind == ALLOWED:
        return tup in set(constraint.tuples)
    if kind == FORBIDDEN:
        return tup not in set(constraint.tuples)
    if kind == LINEAR:
        total = sum(a * int(instance.domains[x][d]) for a, x, d in zip(constraint.coeffs, constraint.scope, tup))
        return COMPARATORS[constraint.cmp](total, constraint.const)
    tokens = [instance.domains[x][d] for x, d in zip(constraint.scope, tup)]
    return len(set(tokens)) == len(tokens)


def count_satisfied(instance: CspInstance, assignment) -> int:
    a = check_assignment(instance, assignment)
    return sum(1 for c in instance.constraints if satisfies(instance, c, a))


def quality(instance: CspInstance, assignment) -> float:
    """Fraction of satisfied constraints."""
    if not instance.constraints:
        raise CspError("degenerate instance: no constraints")
    return count_satisfied(instance, assignment) / len(instance.constraints)


class SoftAssignment:
    """Per-variable probability distributions, stored flat in value order."""

    def __init__(self, probs, offsets, atol: float = 1e-6):
        probs = np.asarray(probs, dtype=np.float64)
        offsets = np.asarray(offsets, dtype=np.int64)
        if probs.ndim != 1 or offsets[-1] != len(probs):
            raise CspError("probabilities do not match the value layout")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise CspError("probabilities must be finite and non-negative")
        sums = np.add.reduceat(probs, offsets[:-1]) if len(offsets) > 1 else np.zeros(0)
        if np.any(np.abs(sums - 1.0) > atol):
            raise CspError("probabilities do not sum to one per variable")
        self.probs = probs
        self.offsets = offsets

    @classmethod
    def uniform(cls, instance: CspInstance) -> SoftAssignment:
        sizes = instance.domain_sizes
        return cls(np.repeat(1.0 / sizes, sizes), instance.value_offsets)

    @classmethod
    def from_lists(cls, dists: Sequence[Sequence[float]]) -> SoftAssignment:
        offsets = np.zeros(len(dists) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum([len(d) for d in dists])
        return cls(np.concatenate([np.asarray(d, float) for d in dists]) if dists else np.zeros(0), offsets)

    @property
    def n_vars(self) -> int:
        return len(self.offsets) - 1

    def variable(self, x: int) -> np.ndarray:
        return self.probs[self.offsets[x]:self.offsets[x + 1]]


def sample_indices(probs: np.ndarray, offsets: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per segment, with one uniform ``u`` per segment.

    Segment ``i`` covers ``probs[offsets[i]:offsets[i+1]]``. Returns local
    indices. Zero-probability entries are never returned.
    """
    sizes = np.diff(offsets)
    seg = np.repeat(np.arange(len(sizes)), sizes)
    cum = np.cumsum(probs)
    base = np.concatenate(([0.0], cum))[offsets[:-1]]
    local_cum = cum - base[seg]
    total = local_cum[offsets[1:] - 1]
    below = local_cum <= (u * total)[seg]
    idx = np.bincount(seg, weights=below, minlength=len(sizes)).astype(np.int64)
    over = idx >= sizes
    if np.any(over):
        # u*total rounded up to the full mass: take the last value with positive probability
        pos = np.where(probs > 0, np.arange(len(probs)), -1)
        last = np.maximum.reduceat(pos, offsets[:-1])
        idx[over] = last[over] - offsets[:-1][over]
    return idx


def sample_assignment(soft: SoftAssignment, rng: np.random.Generator) -> np.ndarray:
    """Draw one value per variable independently."""
    u = rng.random(soft.n_vars)
    return sample_indices(soft.probs, soft.offsets, u)


def log_probability(soft: SoftAssignment, assignment, epsilon: float = 0.0) -> float:
    """``sum_X log(phi(alpha(X)) + epsilon)``."""
    a = np.asarray(assignment, dtype=np.int64)
    p = soft.probs[soft.offsets[:-1] + a]
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(p + epsilon)))


def uniform_assignment(instance: CspInstance, rng: np.random.Generator) -> np.ndarray:
    sizes = instance.domain_sizes
    return np.floor(rng.random(instance.n_vars) * sizes).astype(np.int64)


def brute_force_optimum(instance: CspInstance) -> tuple[float, np.ndarray]:
    """Exhaustive maximum quality; for small test instances only."""
    best, best_a = -1.0, None
    for a in np.ndindex(*instance.domain_sizes):
        q = quality(instance, a)
        if q > best:
            best, best_a = q, np.array(a)
    return best, best_a


def joint_size(instance: CspInstance) -> int:
    return math.prod(len(d) for d in instance.domains)
