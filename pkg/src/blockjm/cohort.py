"""Subject-level longitudinal and event-history data, plus block routing.

A cohort couples, per subject, a vector of repeated marker measurements
with a multistate event history (visited states, transition times and a
right-censoring time).  The routing functions extract the data a block
sees: its risk set, block-local sojourn data, and the longitudinal
measurements linked to the block under either linkage strategy.

Linkage conventions
-------------------
Concurrent
    Only measurements taken while the subject occupied the block's initial
    state, re-centred to a block-local clock (time since block entry).
    A measurement taken exactly at a transition time belongs to the block
    being exited, so the window for a block entered at ``e`` and left at
    ``x`` is ``(e, x]`` (``[0, x]`` for blocks entered at process start).
    If the window is empty, one record is imputed at local time 0 by
    carrying the most recent earlier value forward.
Historical
    All measurements up to and including block exit, kept on the global
    clock.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NoImputableValueError, NonPositiveSojournError
from .graph import CrBlock, StBlock, TransitionDiagram

__all__ = [
    "LongitudinalRecord",
    "EventHistory",
    "Subject",
    "Cohort",
    "BlockData",
    "CONCURRENT",
    "HISTORICAL",
    "block_risk_set",
    "link_longitudinal",
    "block_event_data",
    "concurrent_window",
    "save_cohort_csv",
    "load_cohort_csv",
    "save_cohort_json",
    "load_cohort_json",
]

CONCURRENT = "concurrent"
HISTORICAL = "historical"


@dataclass(frozen=True)
class LongitudinalRecord:
    """One marker measurement at a global process time."""

    time: float
    value: float


@dataclass(frozen=True)
class EventHistory:
    """Observed multistate path of one subject.

    ``visited_states`` starts at an initial state of the diagram;
    ``transition_times`` are the strictly increasing times of the observed
    transitions (one fewer than the visited states, empty if none), and
    ``censoring_time`` is the end of follow-up.
    """

    visited_states: tuple[int, ...]
    transition_times: tuple[float, ...]
    censoring_time: float

    def __post_init__(self):
        if len(self.visited_states) != len(self.transition_times) + 1:
            raise ValueError("need exactly one more visited state than transition times")
        times = (0.0,) + self.transition_times + (self.censoring_time,)
        for a, b in zip(times[:-1], times[1:]):
            if not b > a:
                # The final sojourn (censoring) interval may not collapse either.
                raise NonPositiveSojournError(
                    f"non-increasing event times {a} -> {b} in history"
                )

    @property
    def n_transitions(self) -> int:
        return len(self.transition_times)

    def entry_time(self, state: int) -> float:
        """Global time at which the subject entered ``state``."""
        idx = self.visited_states.index(state)
        return 0.0 if idx == 0 else self.transition_times[idx - 1]

    def sojourn(self, state: int) -> tuple[float, int | None]:
        """Sojourn time in ``state`` and the destination (None if censored)."""
        idx = self.visited_states.index(state)
        entry = 0.0 if idx == 0 else self.transition_times[idx - 1]
        if idx + 1 < len(self.visited_states):
            d = self.transition_times[idx] - entry
            return d, self.visited_states[idx + 1]
        return self.censoring_time - entry, None


@dataclass(frozen=True)
class Subject:
    """One subject: covariates, marker measurements and event history."""

    id: str
    covariates: tuple[float, ...]
    longitudinal: tuple[LongitudinalRecord, ...]
    events: EventHistory
    pre_baseline: LongitudinalRecord | None = None

    @property
    def times(self) -> np.ndarray:
        return np.array([r.time for r in self.longitudinal])

    @property
    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.longitudinal])


@dataclass(frozen=True)
class Cohort:
    """Immutable collection of subjects sharing a transition diagram."""

    subjects: tuple[Subject, ...]

    def __len__(self) -> int:
        return len(self.subjects)

    def __iter__(self):
        return iter(self.subjects)

    def validate(self, diagram: TransitionDiagram) -> None:
        """Check every event history against the permitted transitions."""
        allowed = set(diagram.transitions)
        initials = set(diagram.initial_states)
        for s in self.subjects:
            path = s.events.visited_states
            if path[0] not in initials:
                raise ValueError(f"subject {s.id}: path starts at non-initial state {path[0]}")
            for j, k in zip(path[:-1], path[1:]):
                if (j, k) not in allowed:
                    raise ValueError(f"subject {s.id}: transition ({j}, {k}) not permitted")
            for r in s.longitudinal:
                if r.time > s.events.censoring_time:
                    raise ValueError(f"subject {s.id}: measurement after censoring time")


@dataclass(frozen=True)
class BlockData:
    """Data one subject contributes to a single block.

    ``local_times`` are on the block-local clock under concurrent linkage
    and on the global clock under historical linkage.  ``imputed`` marks
    the carried-forward record inserted when the concurrent window was
    empty.
    """

    subject_index: str
    entry_time: float
    sojourn: float
    outcome: int | None
    local_times: np.ndarray
    values: np.ndarray
    imputed: np.ndarray  # bool per record
    linkage: str


def block_risk_set(cohort: Cohort, block: CrBlock | StBlock) -> list[int]:
    """Indices of subjects who entered the block's initial state."""
    initial = block.initial_state if isinstance(block, CrBlock) else block.from_state
    return [
        i for i, s in enumerate(cohort.subjects) if initial in s.events.visited_states
    ]


def concurrent_window(subject: Subject, block: CrBlock | StBlock):
    """Observed measurements inside the block's occupancy window.

    Returns ``(entry, sojourn, times, values)`` with ``times`` on the
    global clock; no imputation is applied.
    """
    initial = block.initial_state if isinstance(block, CrBlock) else block.from_state
    entry = subject.events.entry_time(initial)
    sojourn, _ = subject.events.sojourn(initial)
    exit_time = entry + sojourn
    t = subject.times
    y = subject.values
    if entry == 0.0:
        mask = (t >= 0.0) & (t <= exit_time)
    else:
        mask = (t > entry) & (t <= exit_time)
    return entry, sojourn, t[mask], y[mask]


def link_longitudinal(subject: Subject, block: CrBlock | StBlock, linkage: str) -> BlockData:
    """Attach longitudinal data to a block under the chosen linkage.

    Raises
    ------
    NoImputableValueError
        Under concurrent linkage, when the window is empty and the subject
        has no earlier measurement and no pre-baseline record.
    """
    initial = block.initial_state if isinstance(block, CrBlock) else block.from_state
    entry = subject.events.entry_time(initial)
    sojourn, outcome = subject.events.sojourn(initial)
    if sojourn <= 0:
        raise NonPositiveSojournError(f"subject {subject.id}: sojourn {sojourn} in state {initial}")

    t = subject.times
    y = subject.values
    if linkage == CONCURRENT:
        _, _, tw, yw = concurrent_window(subject, block)
        if len(tw) == 0:
            prior = t <= entry
            if prior.any():
                j = int(np.flatnonzero(prior)[-1])  # times are sorted ascending
                carried = y[j]
            elif subject.pre_baseline is not None:
                carried = subject.pre_baseline.value
            else:
                raise NoImputableValueError(
                    f"subject {subject.id}: nothing to carry forward into state {initial}"
                )
            local = np.array([0.0])
            vals = np.array([float(carried)])
            imputed = np.array([True])
        else:
            local = tw - entry
            vals = yw
            imputed = np.zeros(len(tw), dtype=bool)
    elif linkage == HISTORICAL:
        mask = t <= entry + sojourn
        local = t[mask]
        vals = y[mask]
        imputed = np.zeros(int(mask.sum()), dtype=bool)
    else:
        raise ValueError(f"unknown linkage {linkage!r}")

    return BlockData(
        subject_index=subject.id,
        entry_time=entry,
        sojourn=sojourn,
        outcome=outcome,
        local_times=local,
        values=vals,
        imputed=imputed,
        linkage=linkage,
    )


def block_event_data(subject: Subject, block: CrBlock | StBlock):
    """Sojourn, outcome and transition indicators for one subject in a block.

    Returns ``(sojourn, outcome, indicators)`` where ``indicators`` maps
    each of the block's transitions to 0/1.  For a single-transition block
    a competing destination counts as censoring for that transition.
    """
    initial = block.initial_state if isinstance(block, CrBlock) else block.from_state
    sojourn, outcome = subject.events.sojourn(initial)
    if sojourn <= 0:
        raise NonPositiveSojournError(f"subject {subject.id}: sojourn {sojourn} in state {initial}")
    indicators = {}
    for (j, k) in block.transitions:
        indicators[(j, k)] = 1 if outcome == k else 0
    if isinstance(block, StBlock) and outcome != block.to_state:
        outcome = None  # competing event treated as censoring
    return sojourn, outcome, indicators


# ---------------------------------------------------------------------------
# Serialization.  Two CSV tables (longitudinal + events) or one JSON file.
# Floats are written with repr so a round trip reproduces identical values.
# ---------------------------------------------------------------------------

_EVENT_FIXED_COLS = (
    "subject_id",
    "visited_states",
    "transition_times",
    "censoring_time",
    "pre_baseline_time",
    "pre_baseline_value",
)


def save_cohort_csv(cohort: Cohort, directory) -> None:
    """Write ``longitudinal.csv`` and ``events.csv`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n_cov = len(cohort.subjects[0].covariates) if len(cohort) else 0
    with open(directory / "longitudinal.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "time", "value"])
        for s in cohort:
            for r in s.longitudinal:
                writer.writerow([s.id, repr(r.time), repr(r.value)])
    with open(directory / "events.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(_EVENT_FIXED_COLS) + [f"w{c}" for c in range(n_cov)])
        for s in cohort:
            pb_t = repr(s.pre_baseline.time) if s.pre_baseline else ""
            pb_v = repr(s.pre_baseline.value) if s.pre_baseline else ""
            writer.writerow(
                [
                    s.id,
                    "|".join(str(v) for v in s.events.visited_states),
                    "|".join(repr(t) for t in s.events.transition_times),
                    repr(s.events.censoring_time),
                    pb_t,
                    pb_v,
                ]
                + [repr(w) for w in s.covariates]
            )


def load_cohort_csv(directory) -> Cohort:
    """Read a cohort written by :func:`save_cohort_csv`."""
    directory = Path(directory)
    long_rows: dict[str, list[LongitudinalRecord]] = {}
    with open(directory / "longitudinal.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            long_rows.setdefault(row["subject_id"], []).append(
                LongitudinalRecord(float(row["time"]), float(row["value"]))
            )
    subjects = []
    with open(directory / "events.csv", newline="") as fh:
        reader = csv.DictReader(fh)
        cov_cols = [c for c in reader.fieldnames if c not in _EVENT_FIXED_COLS]
        for row in reader:
            sid = row["subject_id"]
            pb = None
            if row["pre_baseline_time"]:
                pb = LongitudinalRecord(
                    float(row["pre_baseline_time"]), float(row["pre_baseline_value"])
                )
            tt = tuple(float(v) for v in row["transition_times"].split("|")) if row["transition_times"] else ()
            subjects.append(
                Subject(
                    id=sid,
                    covariates=tuple(float(row[c]) for c in cov_cols),
                    longitudinal=tuple(sorted(long_rows.get(sid, []), key=lambda r: r.time)),
                    events=EventHistory(
                        visited_states=tuple(int(v) for v in row["visited_states"].split("|")),
                        transition_times=tt,
                        censoring_time=float(row["censoring_time"]),
                    ),
                    pre_baseline=pb,
                )
            )
    return Cohort(tuple(subjects))


def save_cohort_json(cohort: Cohort, path) -> None:
    """Single-file JSON alternative with the same fields as the CSV pair."""
    payload = []
    for s in cohort:
        payload.append(
            {
                "subject_id": s.id,
                "covariates": list(s.covariates),
                "longitudinal": [[r.time, r.value] for r in s.longitudinal],
                "visited_states": list(s.events.visited_states),
                "transition_times": list(s.events.transition_times),
                "censoring_time": s.events.censoring_time,
                "pre_baseline": (
                    [s.pre_baseline.time, s.pre_baseline.value] if s.pre_baseline else None
                ),
            }
        )
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


def load_cohort_json(path) -> Cohort:
    with open(path) as fh:
        payload = json.load(fh)
    subjects = []
    for d in payload:
        pb = d.get("pre_baseline")
        subjects.append(
            Subject(
                id=d["subject_id"],
                covariates=tuple(float(w) for w in d["covariates"]),
                longitudinal=tuple(LongitudinalRecord(t, v) for t, v in d["longitudinal"]),
                events=EventHistory(
                    visited_states=tuple(int(v) for v in d["visited_states"]),
                    transition_times=tuple(float(t) for t in d["transition_times"]),
                    censoring_time=float(d["censoring_time"]),
                ),
                pre_baseline=LongitudinalRecord(pb[0], pb[1]) if pb else None,
            )
        )
    return Cohort(tuple(subjects))
