"""Named simulation presets for the replication studies.

Each preset bundles a transition diagram with data-generating truth:
a two-layer progressive tree with six transitions under three
longitudinal scenarios (steady trend with sparse-then-dense visits,
steady trend with dense-then-sparse visits, and a structural trajectory
change at the first transition), plus a five-state progression-to-death
diagram with measurement parameters estimated from primary-care blood
pressure records.  Every field can be overridden when building the spec.
"""

from __future__ import annotations

from .graph import build_diagram
from .simulate import AgeMixture, SimSpec
from .submodels import LongitudinalParams, TransitionParams

__all__ = ["PRESETS", "preset_names", "make_sim_spec"]


def _tree_diagram():
    return build_diagram(
        range(7), [(0, 1), (0, 2), (1, 3), (1, 4), (2, 5), (2, 6)]
    )


def _progression_diagram():
    return build_diagram(
        range(5), [(0, 1), (0, 2), (0, 4), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)]
    )


_TRANSITION_TRUTH = {
    "shape": 1.3,
    "scale": 0.0024787521766663585,  # exp(-6)
    "coef": 1.0,
    "assoc": 0.9,
}


def _uniform_transitions(diagram, truth=_TRANSITION_TRUTH):
    return {
        jk: TransitionParams(
            shape=truth["shape"],
            scale=truth["scale"],
            coef=(truth["coef"],),
            assoc=(truth["assoc"],),
            assoc_form="linear",
        )
        for jk in diagram.transitions
    }


def _base_longitudinal():
    return LongitudinalParams(
        intercept=2.0, slope=0.5, sigma_e=0.2, sigma_b1=0.4, sigma_b2=0.3, corr=0.4
    )


def _records_longitudinal():
    return LongitudinalParams(
        intercept=0.3, slope=0.03, sigma_e=0.6, sigma_b1=0.7, sigma_b2=0.1, corr=-0.4
    )


PRESETS = {
    # steady upward marker, denser visits after the first transition
    "model1-s1": dict(
        diagram=_tree_diagram,
        longitudinal=_base_longitudinal,
        visit_intervals=(1.6, 0.6),
        censoring=(6.0, 22.0),
        post_change=None,
    ),
    # steady upward marker, sparser visits after the first transition
    "model1-s2": dict(
        diagram=_tree_diagram,
        longitudinal=_base_longitudinal,
        visit_intervals=(1.6, 2.2),
        censoring=(6.0, 22.0),
        post_change=None,
    ),
    # structural trajectory change at the first transition
    "model1-s3": dict(
        diagram=_tree_diagram,
        longitudinal=_base_longitudinal,
        visit_intervals=(1.6, 0.6),
        censoring=(6.0, 22.0),
        post_change=(5.0, -0.3),
    ),
    # five-state progression-to-death layout; longitudinal truth from
    # standardized log blood-pressure records, transition truth reuses the
    # tree preset's values (the source analysis does not publish its own)
    "model2": dict(
        diagram=_progression_diagram,
        longitudinal=_records_longitudinal,
        visit_intervals=(2.6, 2.0, 1.2),
        censoring=(6.0, 22.0),
        post_change=None,
    ),
}


def preset_names():
    return sorted(PRESETS)


def make_sim_spec(name: str, n_subjects: int, seed: int = 0, **overrides) -> SimSpec:
    """Build a :class:`SimSpec` from a preset, with optional overrides.

    Overridable keys: ``longitudinal``, ``transitions``, ``censoring``,
    ``visit_intervals``, ``post_change``, ``age_mixture``.
    """
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {preset_names()}")
    p = PRESETS[name]
    diagram = p["diagram"]()
    spec = SimSpec(
        diagram=diagram,
        n_subjects=n_subjects,
        longitudinal=overrides.get("longitudinal", p["longitudinal"]()),
        transitions=overrides.get("transitions", _uniform_transitions(diagram)),
        censoring=tuple(overrides.get("censoring", p["censoring"])),
        visit_intervals=tuple(overrides.get("visit_intervals", p["visit_intervals"])),
        age_mixture=overrides.get("age_mixture", AgeMixture()),
        post_change=overrides.get("post_change", p["post_change"]),
        seed=seed,
    )
    return spec
