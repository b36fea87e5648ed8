"""Synchronous max-sum message-passing kernel.

Messages are per-value utility vectors exchanged between variables and
factors over the factor-graph edges.  One step computes every message of the
round from the previous round's payloads (fully synchronous flooding), so a
run is a deterministic function of (problem, config).

The engine state owns a live copy of the graph (scopes, tables, adjacency)
because decimation shrinks it mid-run: variables leave, factor tables get
sliced, and factors that lose their whole scope remain only as scalar
contributions for cost accounting.

Message accounting follows the convention that a message identical (within
eps, elementwise) to the one previously sent on the same edge is suppressed:
it is not re-sent and not counted.  Suppression is pure accounting - the
computed payloads and the decoded assignment are identical whether it is on
or off - and convergence is "a round in which nothing would be sent".
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Assignment, FactorGraph

# Directed edge keys: variable->factor messages are keyed (var, fac),
# factor->variable messages are keyed (fac, var).
Edge = tuple[str, str]


@dataclass(frozen=True)
class Message:
    """A directed payload: sender and receiver node ids plus the value vector."""

    sender: str
    receiver: str
    payload: np.ndarray


@dataclass
class EngineConfig:
    eps: float = 1e-6            # convergence / suppression tolerance
    limit: int = 1000            # iteration cap
    normalization: str = "mean"  # "mean", "max" or "none"
    suppression: bool = True

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.limit < 1:
            raise ValueError("limit must be at least 1")
        if self.normalization not in ("mean", "max", "none"):
            raise ValueError(f"unknown normalization mode '{self.normalization}'")


@dataclass
class EngineState:
    """Mutable run state: live graph, payloads, counters, decimated set."""

    domain_sizes: dict[str, int]
    var_rank: dict[str, int]               # declaration order, for tie-breaks
    scopes: dict[str, tuple[str, ...]]     # live factor scopes (arity >= 1)
    tables: dict[str, np.ndarray]          # live factor tables, shaped
    var_factors: dict[str, list[str]]      # live adjacency, declaration order
    var_to_fac: dict[Edge, np.ndarray] = field(default_factory=dict)
    fac_to_var: dict[Edge, np.ndarray] = field(default_factory=dict)
    prev_var_to_fac: dict[Edge, np.ndarray] = field(default_factory=dict)
    prev_fac_to_var: dict[Edge, np.ndarray] = field(default_factory=dict)
    # Last payload actually sent per edge; missing key = nothing sent yet.
    sent_var_to_fac: dict[Edge, np.ndarray] = field(default_factory=dict)
    sent_fac_to_var: dict[Edge, np.ndarray] = field(default_factory=dict)
    decimated: dict[str, int] = field(default_factory=dict)
    scalars: dict[str, float] = field(default_factory=dict)
    t: int = 0
    msgs_sent: int = 0
    last_round_propagated: int = 0
    last_round_max_change: float = 0.0
    last_decimation_t: int = 0

    def active_vars(self) -> list[str]:
        return [v for v in self.domain_sizes if v not in self.decimated]

    def undirected_edges(self) -> list[Edge]:
        """Live (variable, factor) incidences, factor declaration order."""
        return [(v, f) for f, scope in self.scopes.items() for v in scope]


def init_state(fg: FactorGraph, cfg: EngineConfig | None = None) -> EngineState:
    """Fresh state over a factor graph: zero payloads, empty decimated set."""
    dcop = fg.dcop
    sizes = {v.id: v.size for v in dcop.variables}
    state = EngineState(
        domain_sizes=sizes,
        var_rank={v.id: i for i, v in enumerate(dcop.variables)},
        scopes={f.id: f.scope for f in dcop.factors if len(f.scope) > 0},
        tables={f.id: f.table for f in dcop.factors if len(f.scope) > 0},
        var_factors={v: list(fg.var_neighbors.get(v, ())) for v in sizes},
    )
    state.scalars = {f.id: f.value() for f in dcop.factors if f.is_scalar()}
    for fid, scope in state.scopes.items():
        for vid in scope:
            zero = np.zeros(sizes[vid])
            state.var_to_fac[(vid, fid)] = zero
            state.fac_to_var[(fid, vid)] = zero.copy()
    state.prev_var_to_fac = dict(state.var_to_fac)
    state.prev_fac_to_var = dict(state.fac_to_var)
    return state


def _normalize(payload: np.ndarray, mode: str) -> np.ndarray:
    """Shift a payload by a constant; -inf entries stay -inf, never NaN."""
    if mode == "none":
        return payload
    finite = payload[np.isfinite(payload)]
    if finite.size == 0:
        return payload
    shift = finite.mean() if mode == "mean" else finite.max()
    return payload - shift


def variable_payload(state: EngineState, var: str, fac: str,
                     cfg: EngineConfig) -> np.ndarray:
    """Sum of incoming factor payloads except the target's, normalized."""
    total = np.zeros(state.domain_sizes[var])
    for other in state.var_factors[var]:
        if other != fac:
            total += state.fac_to_var[(other, var)]
    return _normalize(total, cfg.normalization)


def factor_payload(state: EngineState, fac: str, var: str, cfg: EngineConfig,
                   attachments: dict[Edge, int] | None = None) -> np.ndarray:
    """Max-marginalize the factor onto one scope variable, normalized.

    For every other scope variable the incoming variable payload is added
    along its axis before maximizing it out.  A sender with an attached value
    (value propagation) is instead pinned: its axis is sliced at that value
    and its payload dropped, which shifts the result only by a constant.
    """
    scope = state.scopes[fac]
    work = state.tables[fac]
    live = list(scope)
    if attachments:
        for vid in scope:
            if vid != var and (vid, fac) in attachments:
                ax = live.index(vid)
                work = np.take(work, attachments[(vid, fac)], axis=ax)
                live.remove(vid)
    if live != [var]:
        for i, vid in enumerate(live):
            if vid == var:
                continue
            shape = [1] * len(live)
            shape[i] = state.domain_sizes[vid]
            work = work + state.var_to_fac[(vid, fac)].reshape(shape)
        reduce_axes = tuple(i for i, vid in enumerate(live) if vid != var)
        payload = work.max(axis=reduce_axes)
    else:
        payload = work
    return _normalize(payload, cfg.normalization)


def variable_message(state: EngineState, var: str, fac: str,
                     cfg: EngineConfig) -> Message:
    if var in state.decimated:
        raise ValueError(f"variable '{var}' is decimated")
    return Message(var, fac, variable_payload(state, var, fac, cfg))


def factor_message(state: EngineState, fac: str, var: str,
                   cfg: EngineConfig) -> Message:
    if var not in state.scopes[fac]:
        raise ValueError(f"variable '{var}' not in scope of '{fac}'")
    return Message(fac, var, factor_payload(state, fac, var, cfg))


def _max_change(new: np.ndarray, old: np.ndarray) -> float:
    both_neginf = np.isneginf(new) & np.isneginf(old)
    diff = np.where(both_neginf, 0.0, np.abs(new - old))
    return float(diff.max()) if diff.size else 0.0


def step(state: EngineState, cfg: EngineConfig,
         v2f_allowed=None, f2v_allowed=None,
         attachments: dict[Edge, int] | None = None) -> EngineState:
    """One synchronous round over the live graph.

    All payloads of the round are computed from the previous round's, then
    swapped in.  ``v2f_allowed`` / ``f2v_allowed`` optionally restrict which
    directed edges are recomputed this round (alternating-direction variants);
    non-recomputed edges keep their payloads and are not counted.
    """
    new_v2f: dict[Edge, np.ndarray] = {}
    new_f2v: dict[Edge, np.ndarray] = {}
    for fid, scope in state.scopes.items():
        for vid in scope:
            if v2f_allowed is None or (vid, fid) in v2f_allowed:
                new_v2f[(vid, fid)] = variable_payload(state, vid, fid, cfg)
            if f2v_allowed is None or (fid, vid) in f2v_allowed:
                new_f2v[(fid, vid)] = factor_payload(state, fid, vid, cfg,
                                                     attachments)

    computed = len(new_v2f) + len(new_f2v)
    propagated = 0
    max_change = 0.0
    for sent, new in ((state.sent_var_to_fac, new_v2f),
                      (state.sent_fac_to_var, new_f2v)):
        for edge, payload in new.items():
            baseline = sent.get(edge)
            change = np.inf if baseline is None else _max_change(payload, baseline)
            if change >= cfg.eps:
                sent[edge] = payload
                propagated += 1
            if baseline is not None:
                max_change = max(max_change, change)

    state.prev_var_to_fac = state.var_to_fac
    state.prev_fac_to_var = state.fac_to_var
    state.var_to_fac = {**state.var_to_fac, **new_v2f}
    state.fac_to_var = {**state.fac_to_var, **new_f2v}
    state.t += 1
    state.msgs_sent += propagated if cfg.suppression else computed
    state.last_round_propagated = propagated
    state.last_round_max_change = max_change if np.isfinite(max_change) else max_change
    return state


def marginal(state: EngineState, var: str) -> np.ndarray:
    """Per-value aggregate of all incoming factor payloads at a variable."""
    if var in state.decimated:
        raise ValueError(f"variable '{var}' is decimated")
    total = np.zeros(state.domain_sizes[var])
    for fid in state.var_factors[var]:
        total = total + state.fac_to_var[(fid, var)]
    return total


def has_converged(state: EngineState, cfg: EngineConfig) -> bool:
    """Quiescence proxy: the last round propagated no messages."""
    return state.t >= 1 and state.last_round_propagated == 0


def decode(state: EngineState) -> Assignment:
    """Total assignment: fixed values where decimated, argmax marginal elsewhere.

    Ties go to the lowest domain index.
    """
    out: Assignment = {}
    for vid in state.domain_sizes:
        if vid in state.decimated:
            out[vid] = state.decimated[vid]
        else:
            out[vid] = int(np.argmax(marginal(state, vid)))
    return out
