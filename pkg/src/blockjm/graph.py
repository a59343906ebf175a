"""Multistate transition diagrams and their block decompositions.

A diagram is a finite set of integer states together with the permitted
directed transitions between them.  Only acyclic (progressive) diagrams are
supported: every subject can experience a given transition at most once,
which keeps sojourn-time bookkeeping unambiguous.

Two decompositions drive the blockwise estimation strategies:

* competing-risks blocks: one block per state with outgoing transitions,
  grouping that state with all of its direct destinations;
* single-transition blocks: one block per permitted transition, treating
  the competing destinations as censoring.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import CyclicDiagramError, SelfLoopError, UnknownStateError

__all__ = [
    "TransitionDiagram",
    "CrBlock",
    "StBlock",
    "build_diagram",
    "decompose",
]


@dataclass(frozen=True)
class TransitionDiagram:
    """Validated directed acyclic multistate graph.

    Attributes
    ----------
    states : tuple of int
        Declared state identifiers, sorted ascending.
    transitions : tuple of (int, int)
        Permitted ordered transitions, sorted by (origin, destination).
    """

    states: tuple[int, ...]
    transitions: tuple[tuple[int, int], ...]

    def out_states(self, state: int) -> tuple[int, ...]:
        """Direct destinations reachable from ``state``."""
        return tuple(k for (j, k) in self.transitions if j == state)

    def in_states(self, state: int) -> tuple[int, ...]:
        """States with a transition into ``state``."""
        return tuple(j for (j, k) in self.transitions if k == state)

    @property
    def initial_states(self) -> tuple[int, ...]:
        """States with no incoming transitions."""
        return tuple(s for s in self.states if not self.in_states(s))

    @property
    def absorbing_states(self) -> tuple[int, ...]:
        """States with no outgoing transitions."""
        return tuple(s for s in self.states if not self.out_states(s))

    def to_dict(self) -> dict:
        return {
            "states": list(self.states),
            "transitions": [list(t) for t in self.transitions],
        }

    @staticmethod
    def from_dict(d: dict) -> "TransitionDiagram":
        return build_diagram(d["states"], [tuple(t) for t in d["transitions"]])


@dataclass(frozen=True)
class CrBlock:
    """Competing-risks block: an origin state and all its direct destinations."""

    initial_state: int
    absorbing_states: tuple[int, ...]

    @property
    def transitions(self) -> tuple[tuple[int, int], ...]:
        return tuple((self.initial_state, k) for k in self.absorbing_states)

    @property
    def key(self) -> str:
        return f"cr:{self.initial_state}"


@dataclass(frozen=True)
class StBlock:
    """Single-transition block: one origin -> destination pair."""

    from_state: int
    to_state: int
    parent_cr_block: CrBlock = field(repr=False)

    @property
    def transitions(self) -> tuple[tuple[int, int], ...]:
        return ((self.from_state, self.to_state),)

    @property
    def key(self) -> str:
        return f"st:{self.from_state}-{self.to_state}"


def build_diagram(states, transitions) -> TransitionDiagram:
    """Validate and freeze a multistate transition diagram.

    Parameters
    ----------
    states : iterable of int
        Non-negative state identifiers.
    transitions : iterable of (int, int)
        Permitted ordered transitions (origin, destination).

    Raises
    ------
    UnknownStateError
        If a transition references an undeclared state.
    SelfLoopError
        If any transition has equal origin and destination.
    CyclicDiagramError
        If the directed graph contains a cycle, or a non-initial state is
        unreachable from every initial state.
    """
    state_set = set(int(s) for s in states)
    trans = []
    for j, k in transitions:
        j, k = int(j), int(k)
        if j not in state_set or k not in state_set:
            raise UnknownStateError(f"transition ({j}, {k}) references undeclared state")
        if j == k:
            raise SelfLoopError(f"state {j} transitions to itself")
        trans.append((j, k))
    trans = tuple(sorted(set(trans)))

    # Kahn's algorithm: a topological order exists iff the graph is acyclic.
    indeg = {s: 0 for s in state_set}
    for _, k in trans:
        indeg[k] += 1
    queue = sorted(s for s, d in indeg.items() if d == 0)
    seen = 0
    order_queue = list(queue)
    while order_queue:
        s = order_queue.pop(0)
        seen += 1
        for j, k in trans:
            if j == s:
                indeg[k] -= 1
                if indeg[k] == 0:
                    order_queue.append(k)
    if seen != len(state_set):
        raise CyclicDiagramError("transition diagram contains a directed cycle")

    diagram = TransitionDiagram(tuple(sorted(state_set)), trans)

    # Reachability: every non-initial state must descend from an initial one.
    reachable = set(diagram.initial_states)
    frontier = list(reachable)
    while frontier:
        s = frontier.pop()
        for j, k in trans:
            if j == s and k not in reachable:
                reachable.add(k)
                frontier.append(k)
    unreachable = state_set - reachable
    if unreachable:
        raise CyclicDiagramError(
            f"states {sorted(unreachable)} are unreachable from any initial state"
        )
    return diagram


def decompose(diagram: TransitionDiagram, mode: str):
    """Decompose a diagram into competing-risks or single-transition blocks.

    Parameters
    ----------
    diagram : TransitionDiagram
    mode : {"cr", "st"}
        ``"cr"`` yields one :class:`CrBlock` per state with outgoing
        transitions; ``"st"`` yields one :class:`StBlock` per transition.
        Ordering is deterministic: by initial state, then destination.
    """
    mode = mode.lower()
    origins = sorted({j for (j, _k) in diagram.transitions})
    cr_blocks = [CrBlock(j, diagram.out_states(j)) for j in origins]
    if mode == "cr":
        return cr_blocks
    if mode == "st":
        by_origin = {b.initial_state: b for b in cr_blocks}
        return [
            StBlock(j, k, by_origin[j])
            for (j, k) in diagram.transitions
        ]
    raise ValueError(f"unknown decomposition mode: {mode!r}")
