"""Cohort simulation by latent-time inversion of cumulative hazards.

Event histories follow the clock-reset semi-Markov mechanism: from each
occupied state, one unit-exponential latent variable per outgoing
transition is inverted through that transition's cumulative hazard (the
same 15-point quadrature used at inference time, root-solved with
Brent's method), the smallest solution wins, and the clock restarts.

Visit times are equidistant within a block depth, with the grid
restarting at every transition; marker values add Gaussian noise around
the latent trajectory.  An optional structural change replaces the
fixed effects of the trajectory from the first transition onward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .cohort import Cohort, EventHistory, LongitudinalRecord, Subject
from .graph import TransitionDiagram
from .submodels import (
    GL_LNX,
    GL_WTILDE,
    GL_X,
    QUAD_KAPPA,
    LongitudinalParams,
    RandomEffects,
    TransitionParams,
)

__all__ = [
    "AgeMixture",
    "SimSpec",
    "simulate_event_history",
    "simulate_visits",
    "simulate_cohort",
]

_ROOT_XTOL = 1e-10


@dataclass(frozen=True)
class AgeMixture:
    """Piecewise-uniform age distribution, standardised within the cohort."""

    intervals: tuple[tuple[float, float], ...] = ((18.0, 65.0), (65.0, 80.0), (80.0, 90.0))
    weights: tuple[float, ...] = (0.45, 0.30, 0.25)

    def __post_init__(self):
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to 1")

    def draw(self, rng) -> float:
        u = rng.random()
        acc = 0.0
        for (lo, hi), w in zip(self.intervals, self.weights):
            acc += w
            if u <= acc:
                return lo + (hi - lo) * rng.random()
        lo, hi = self.intervals[-1]
        return lo + (hi - lo) * rng.random()


@dataclass(frozen=True)
class SimSpec:
    """Everything needed to generate one cohort.

    ``visit_intervals[d]`` is the measurement spacing while the subject
    is at block depth ``d`` (0 = before the first transition); the last
    entry is reused for deeper blocks.  ``post_change`` optionally gives
    (intercept, slope) fixed effects that replace the trajectory's from
    the first transition time onward, the random effects staying fixed.
    """

    diagram: TransitionDiagram
    n_subjects: int
    longitudinal: LongitudinalParams
    transitions: dict[tuple[int, int], TransitionParams]
    censoring: tuple[float, float]
    visit_intervals: tuple[float, ...]
    age_mixture: AgeMixture = AgeMixture()
    post_change: tuple[float, float] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.censoring[0] >= self.censoring[1]:
            raise ValueError("censoring bounds must satisfy a < b")
        if any(d <= 0 for d in self.visit_intervals):
            raise ValueError("visit intervals must be positive")
        missing = set(self.diagram.transitions) - set(self.transitions)
        if missing:
            raise ValueError(f"missing transition truth for {sorted(missing)}")


def _trajectory_fn(lp: LongitudinalParams, re: RandomEffects, post_change, change_time):
    """Latent trajectory, switching fixed effects at the change time."""
    base0 = lp.intercept + re.b1
    slope0 = lp.slope + re.b2
    if post_change is None or change_time is None:
        return lambda t: base0 + slope0 * np.asarray(t, dtype=float)
    base1 = post_change[0] + re.b1
    slope1 = post_change[1] + re.b2
    def mu(t):
        t = np.asarray(t, dtype=float)
        return np.where(t < change_time, base0 + slope0 * t, base1 + slope1 * t)
    return mu


def _cumhaz_factory(tp: TransitionParams, mu_fn, w, entry_time):
    """Cumulative hazard of one transition as a function of sojourn T.

    Uses the same 15-point rule as the likelihood, so simulated data and
    inference share one definition of the hazard integral.
    """
    wcoef = float(np.dot(w, tp.coef))

    def assoc(mu):
        if tp.assoc_form == "none":
            return 0.0
        if tp.assoc_form == "linear":
            return tp.assoc[0] * mu
        if tp.assoc_form == "age_interaction":
            return tp.assoc[0] * mu + tp.assoc[1] * (w[0] * mu)
        return tp.assoc[0] * mu + tp.assoc[1] * mu * mu

    node_u = GL_X ** (QUAD_KAPPA / tp.shape)

    def cumhaz(T: float) -> float:
        if T <= 0.0:
            return 0.0
        u = T * node_u
        mu = mu_fn(entry_time + u)
        eta = wcoef + assoc(mu)
        return tp.scale * T**tp.shape * float(np.sum(GL_WTILDE * np.exp(eta)))

    return cumhaz


def simulate_event_history(
    re: RandomEffects,
    spec: SimSpec,
    w,
    censoring_time: float,
    rng,
) -> EventHistory:
    """Simulate one subject's multistate path up to censoring.

    From the current state, each outgoing transition k gets a latent
    unit exponential E_k; the candidate sojourn solves
    ``cumhaz_k(T) = E_k`` by Brent's method on [0, remaining + 1], and
    the smallest candidate below the remaining follow-up wins.  With a
    structural trajectory change, hazards of all post-first-transition
    states read the post-change trajectory.
    """
    diagram = spec.diagram
    state = _start_state(diagram)
    visited = [state]
    times: list[float] = []
    entry = 0.0
    change_time = None
    mu_fn = _trajectory_fn(spec.longitudinal, re, spec.post_change, change_time)
    while True:
        outgoing = diagram.out_states(state)
        if not outgoing:
            break
        remaining = censoring_time - entry
        horizon = remaining + 1.0
        best_t, best_k = np.inf, None
        for k in outgoing:
            latent = rng.exponential(1.0)
            cumhaz = _cumhaz_factory(spec.transitions[(state, k)], mu_fn, w, entry)
            ch_hor = cumhaz(horizon)
            if not np.isfinite(ch_hor):
                raise FloatingPointError(
                    f"cumulative hazard for {(state, k)} overflowed at horizon"
                )
            if ch_hor < latent:
                continue  # no transition before the horizon
            t_k = optimize.brentq(
                lambda T: cumhaz(T) - latent, 0.0, horizon, xtol=_ROOT_XTOL
            )
            if t_k < best_t:
                best_t, best_k = t_k, k
        if best_k is None or best_t >= remaining:
            break  # censored in the current state
        entry += best_t
        visited.append(best_k)
        times.append(entry)
        state = best_k
        if change_time is None and spec.post_change is not None:
            change_time = entry
            mu_fn = _trajectory_fn(spec.longitudinal, re, spec.post_change, change_time)
    return EventHistory(tuple(visited), tuple(times), censoring_time)


def simulate_visits(events: EventHistory, visit_intervals, censoring_time: float):
    """Equidistant visit times with the grid restarting at each transition.

    Depth d (number of transitions experienced) selects
    ``visit_intervals[min(d, len-1)]``.  Each segment's grid starts at
    the segment's entry time; times beyond the censoring time are
    dropped; time 0 is always included.
    """
    bounds = [0.0, *events.transition_times, censoring_time]
    visits: list[float] = []
    for depth in range(len(bounds) - 1):
        start, end = bounds[depth], bounds[depth + 1]
        step = visit_intervals[min(depth, len(visit_intervals) - 1)]
        is_last = depth == len(bounds) - 2
        k = 0
        while True:
            t = start + k * step
            if (t > end) if is_last else (t >= end):
                break
            visits.append(t)
            k += 1
    return visits


def _start_state(diagram: TransitionDiagram) -> int:
    initials = diagram.initial_states
    if len(initials) != 1:
        raise ValueError("simulation needs a unique initial state")
    return initials[0]


def simulate_cohort(spec: SimSpec) -> Cohort:
    """Generate a full cohort, deterministically given ``spec.seed``.

    Each subject consumes an independent counter-based RNG substream, so
    the result does not depend on evaluation order; ages are drawn first
    and standardised to mean 0, sd 1 within the cohort before entering
    any hazard.
    """
    n = spec.n_subjects
    rngs = [
        np.random.Generator(np.random.Philox(np.random.SeedSequence([int(spec.seed), 101, i])))
        for i in range(n)
    ]
    raw_ages = np.array([spec.age_mixture.draw(rng) for rng in rngs])
    sd = raw_ages.std()
    ages = (raw_ages - raw_ages.mean()) / (sd if sd > 0 else 1.0)

    chol = spec.longitudinal.chol
    a, b = spec.censoring
    subjects = []
    for i, rng in enumerate(rngs):
        z = rng.standard_normal(2)
        b1, b2 = chol @ z
        re = RandomEffects(float(b1), float(b2))
        censoring = a + (b - a) * rng.random()
        w = np.array([ages[i]])
        events = simulate_event_history(re, spec, w, censoring, rng)
        visit_times = simulate_visits(events, spec.visit_intervals, censoring)
        change_time = events.transition_times[0] if events.transition_times else None
        mu_fn = _trajectory_fn(spec.longitudinal, re, spec.post_change, change_time)
        noise = rng.standard_normal(len(visit_times)) * spec.longitudinal.sigma_e
        records = tuple(
            LongitudinalRecord(t, float(mu_fn(t) + e)) for t, e in zip(visit_times, noise)
        )
        subjects.append(
            Subject(
                id=f"s{i:05d}",
                covariates=(float(ages[i]),),
                longitudinal=records,
                events=events,
                pre_baseline=None,
            )
        )
    return Cohort(tuple(subjects))
