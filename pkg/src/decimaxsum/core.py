"""Problem model for distributed constraint optimization.

A problem is a set of discrete variables (each owned by an agent) and a set
of soft constraints (factors) with dense utility tables over subsets of the
variables.  The objective is the sum of all factor tables at a total
assignment; the sense says whether that sum is to be maximized (utility) or
minimized (cost).

This module also provides the factor-graph view (bipartite variable/factor
adjacency), factor slicing, and an exhaustive-enumeration optimum used as a
test oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

import numpy as np

# A (possibly partial) assignment maps variable id -> domain index.
Assignment = dict[str, int]


class Sense(Enum):
    """Whether the objective sum is a utility (maximize) or a cost (minimize)."""

    MAXIMIZE = "maximize"
    MINIMIZE = "minimize"


class InvalidDcopError(ValueError):
    """Raised by :func:`validate` with the full list of violations."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass(frozen=True)
class VariableDef:
    """A variable with its ordered domain of value labels."""

    id: str
    domain: tuple

    def __post_init__(self):
        object.__setattr__(self, "domain", tuple(self.domain))

    @property
    def size(self) -> int:
        return len(self.domain)


@dataclass(frozen=True)
class Factor:
    """A soft constraint: an ordered scope and a dense utility table.

    The table is an ndarray with one axis per scope variable, in scope order
    (row-major flattening matches nested iteration over the scope).  Entries
    are finite or -inf.  An empty scope is allowed: the factor is then a
    scalar contribution, which slicing produces and cost accounting keeps.
    """

    id: str
    scope: tuple[str, ...]
    table: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "scope", tuple(self.scope))
        arr = np.asarray(self.table, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "table", arr)

    @staticmethod
    def from_flat(fid: str, scope: Iterable[str], flat: Iterable[float],
                  sizes: Iterable[int]) -> "Factor":
        """Build a factor from a row-major flat table and per-variable sizes."""
        scope = tuple(scope)
        sizes = tuple(sizes)
        arr = np.asarray(list(flat), dtype=np.float64).reshape(sizes)
        return Factor(fid, scope, arr)

    def is_scalar(self) -> bool:
        return len(self.scope) == 0

    def value(self) -> float:
        """Scalar factor value; only meaningful for empty scopes."""
        return float(self.table)


@dataclass(frozen=True)
class Dcop:
    """A constraint optimization problem instance.

    Immutable after construction; derived views (factor graph, sense
    conversion, slicing) always build new objects.
    """

    variables: tuple[VariableDef, ...]
    factors: tuple[Factor, ...]
    agent_of: Mapping[str, str]
    sense: Sense = Sense.MAXIMIZE

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "factors", tuple(self.factors))
        object.__setattr__(self, "agent_of", dict(self.agent_of))

    @property
    def var_ids(self) -> list[str]:
        return [v.id for v in self.variables]

    def variable(self, vid: str) -> VariableDef:
        return self._var_map()[vid]

    def domain_size(self, vid: str) -> int:
        return self._var_map()[vid].size

    def var_rank(self, vid: str) -> int:
        """Canonical position of a variable (declaration order).

        Used for all "lowest variable id" tie-breaks, so that ordering is
        total and deterministic whatever the id strings look like.
        """
        return self._rank_map()[vid]

    def _var_map(self) -> dict[str, VariableDef]:
        cache = self.__dict__.get("_vmap")
        if cache is None:
            cache = {v.id: v for v in self.variables}
            self.__dict__["_vmap"] = cache
        return cache

    def _rank_map(self) -> dict[str, int]:
        cache = self.__dict__.get("_rmap")
        if cache is None:
            cache = {v.id: i for i, v in enumerate(self.variables)}
            self.__dict__["_rmap"] = cache
        return cache


@dataclass(frozen=True)
class FactorGraph:
    """Bipartite variable/factor adjacency derived from factor scopes.

    ``var_neighbors`` lists, per variable, the ids of adjacent factors in
    factor declaration order; ``factor_neighbors`` is an ordered copy of each
    factor's scope.  ``num_edges`` counts undirected edges (one per scope
    membership).  Keeps a reference to the source problem so the message
    engine can reach domains and tables.
    """

    dcop: Dcop
    var_neighbors: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    factor_neighbors: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    num_edges: int = 0

    def variable_neighbors_of(self, vid: str) -> set[str]:
        """Variables sharing at least one factor with ``vid`` (excl. itself)."""
        out: set[str] = set()
        for fid in self.var_neighbors.get(vid, ()):
            out.update(self.factor_neighbors[fid])
        out.discard(vid)
        return out


def validation_errors(dcop: Dcop) -> list[str]:
    """All invariant violations of a problem instance, empty if well-formed."""
    errors: list[str] = []
    seen_vars: set[str] = set()
    for v in dcop.variables:
        if v.id in seen_vars:
            errors.append(f"duplicate variable id '{v.id}'")
        seen_vars.add(v.id)
        if v.size < 1:
            errors.append(f"variable '{v.id}' has an empty domain")
    sizes = {v.id: v.size for v in dcop.variables}

    seen_factors: set[str] = set()
    for f in dcop.factors:
        if f.id in seen_factors:
            errors.append(f"duplicate factor id '{f.id}'")
        seen_factors.add(f.id)
        bad_scope = False
        for vid in f.scope:
            if vid not in sizes:
                errors.append(f"factor '{f.id}': unknown variable '{vid}'")
                bad_scope = True
        if len(set(f.scope)) != len(f.scope):
            errors.append(f"factor '{f.id}': duplicate variable in scope")
            bad_scope = True
        if bad_scope:
            continue
        expected = tuple(sizes[vid] for vid in f.scope)
        if f.table.size != int(np.prod(expected, dtype=np.int64)):
            errors.append(
                f"factor '{f.id}': table length mismatch: {f.table.size} entries "
                f"for scope domain sizes {expected}")
        elif f.table.shape != expected:
            errors.append(
                f"factor '{f.id}': table shape {f.table.shape} does not match "
                f"scope domain sizes {expected}")
        if np.isnan(f.table).any():
            errors.append(f"factor '{f.id}': table contains NaN")
        if np.isposinf(f.table).any():
            errors.append(f"factor '{f.id}': table contains +inf")

    for vid in sizes:
        if vid not in dcop.agent_of:
            errors.append(f"variable '{vid}' has no agent")
    for vid in dcop.agent_of:
        if vid not in sizes:
            errors.append(f"agent map references unknown variable '{vid}'")
    return errors


def validate(dcop: Dcop) -> None:
    """Raise :class:`InvalidDcopError` unless every invariant holds."""
    errors = validation_errors(dcop)
    if errors:
        raise InvalidDcopError(errors)


def total_utility(dcop: Dcop, assignment: Mapping[str, int]) -> float:
    """Sum of all factor table entries selected by a total assignment.

    The value is in the problem's own sense (a cost for minimize-sense
    instances).  -inf entries propagate into the sum.
    """
    missing = [v.id for v in dcop.variables if v.id not in assignment]
    if missing:
        raise ValueError(f"assignment missing variables: {missing}")
    for v in dcop.variables:
        idx = assignment[v.id]
        if not 0 <= idx < v.size:
            raise ValueError(f"assignment index {idx} out of range for '{v.id}'")
    total = 0.0
    for f in dcop.factors:
        idx = tuple(assignment[vid] for vid in f.scope)
        total += float(f.table[idx])
    return total


def build_factor_graph(dcop: Dcop) -> FactorGraph:
    """Adjacency from factor scopes: an edge per (variable, factor) membership."""
    validate(dcop)
    var_neighbors: dict[str, list[str]] = {v.id: [] for v in dcop.variables}
    factor_neighbors: dict[str, tuple[str, ...]] = {}
    edges = 0
    for f in dcop.factors:
        factor_neighbors[f.id] = f.scope
        for vid in f.scope:
            var_neighbors[vid].append(f.id)
            edges += 1
    return FactorGraph(
        dcop=dcop,
        var_neighbors={k: tuple(v) for k, v in var_neighbors.items()},
        factor_neighbors=factor_neighbors,
        num_edges=edges,
    )


def slice_factor(factor: Factor, var: str, value: int) -> Factor:
    """Fix one scope variable to a domain index, reducing the factor's arity.

    Slicing to an empty scope yields a scalar factor, kept so that the fixed
    contribution still counts toward the objective.
    """
    if var not in factor.scope:
        raise ValueError(f"variable '{var}' not in scope of factor '{factor.id}'")
    axis = factor.scope.index(var)
    if not 0 <= value < factor.table.shape[axis]:
        raise ValueError(f"value index {value} out of range for '{var}'")
    new_scope = tuple(v for v in factor.scope if v != var)
    new_table = np.take(factor.table, value, axis=axis)
    return Factor(factor.id, new_scope, new_table)


def as_maximization(dcop: Dcop) -> tuple[Dcop, bool]:
    """Return a maximize-sense view of the problem.

    Minimize-sense tables are negated so a single engine code path can run
    both senses; the flag says whether negation happened (the harness then
    reports cost = -utility).
    """
    if dcop.sense is Sense.MAXIMIZE:
        return dcop, False
    for f in dcop.factors:
        if np.isneginf(f.table).any():
            raise ValueError(
                f"factor '{f.id}': -inf cost entries cannot be negated into a "
                "maximization view")
    flipped = tuple(Factor(f.id, f.scope, -f.table) for f in dcop.factors)
    return Dcop(dcop.variables, flipped, dcop.agent_of, Sense.MAXIMIZE), True


def brute_force_optimum(dcop: Dcop, cap: int = 2 ** 24) -> tuple[Assignment, float]:
    """Exhaustive optimum in the problem's own sense.

    Accumulates every factor table into the full joint tensor and takes the
    arg-best entry.  Ties break to the lexicographically smallest assignment
    (first index in row-major order).  Refuses joint spaces larger than
    ``cap`` assignments.
    """
    validate(dcop)
    sizes = [v.size for v in dcop.variables]
    space = 1
    for s in sizes:
        space *= s
        if space > cap:
            raise ValueError(f"joint assignment space exceeds cap {cap}")
    ranks = {v.id: i for i, v in enumerate(dcop.variables)}

    joint = np.zeros(sizes, dtype=np.float64)
    for f in dcop.factors:
        axes = [ranks[vid] for vid in f.scope]
        shape = [1] * len(sizes)
        # Move the factor axes into joint order before broadcasting.
        order = np.argsort(axes)
        table = np.transpose(f.table, order) if len(axes) > 1 else f.table
        for ax in axes:
            shape[ax] = sizes[ax]
        joint += table.reshape(shape)

    flat = joint.reshape(-1)
    best = int(np.argmax(flat)) if dcop.sense is Sense.MAXIMIZE else int(np.argmin(flat))
    value = float(flat[best])
    indices = np.unravel_index(best, tuple(sizes)) if sizes else ()
    assignment = {v.id: int(indices[i]) for i, v in enumerate(dcop.variables)}
    return assignment, value


def assignment_labels(dcop: Dcop, assignment: Mapping[str, int]) -> dict[str, object]:
    """Map an index assignment to the declared domain value labels."""
    return {v.id: v.domain[assignment[v.id]] for v in dcop.variables if v.id in assignment}


def float_is_finite_or_neginf(x: float) -> bool:
    return math.isfinite(x) or (math.isinf(x) and x < 0)
