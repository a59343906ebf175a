import numpy as np
import pytest
from hypothesis import settings

from blockjm.cohort import Cohort, EventHistory, LongitudinalRecord, Subject
from blockjm.graph import build_diagram
from blockjm.presets import make_sim_spec
from blockjm.simulate import simulate_cohort

settings.register_profile("ci", deadline=None, max_examples=40)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def tree_diagram():
    return build_diagram(range(7), [(0, 1), (0, 2), (1, 3), (1, 4), (2, 5), (2, 6)])


@pytest.fixture(scope="session")
def small_cohort(tree_diagram):
    """Simulated 40-subject cohort on the two-layer tree."""
    return simulate_cohort(make_sim_spec("model1-s1", 40, seed=20260808))


def make_subject(sid, path, times, censor, meas, cov=(0.5,), pre=None):
    """Hand-rolled subject; ``meas`` is a list of (time, value) pairs."""
    return Subject(
        id=sid,
        covariates=tuple(cov),
        longitudinal=tuple(LongitudinalRecord(t, v) for t, v in meas),
        events=EventHistory(tuple(path), tuple(times), censor),
        pre_baseline=LongitudinalRecord(*pre) if pre else None,
    )


@pytest.fixture
def figure_subject():
    """Path 0 -> 2 -> 5: in the first and third block, never the second."""
    return make_subject(
        "fig",
        path=[0, 2, 5],
        times=[3.0, 7.5],
        censor=10.0,
        meas=[(0.0, 2.1), (1.6, 2.8), (3.0, 3.4), (4.5, 4.2), (6.0, 5.1), (9.0, 6.4)],
    )
