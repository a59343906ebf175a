import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blockjm.graph import decompose
from blockjm.submodels import (
    GL15_NODES,
    GL15_WEIGHTS,
    LongitudinalParams,
    RandomEffects,
    TransitionParams,
    cr_event_loglik,
    cumulative_hazard,
    longitudinal_loglik,
    msm_event_loglik,
    st_event_loglik,
    trajectory_value,
    transition_intensity,
)

LP = LongitudinalParams(intercept=2.0, slope=0.5, sigma_e=0.2,
                        sigma_b1=0.4, sigma_b2=0.3, corr=0.4)
RE0 = RandomEffects(0.0, 0.0)
W1 = np.array([0.0])


def weibull(shape, scale, coef=0.0, assoc=(), form="none"):
    return TransitionParams(shape=shape, scale=scale, coef=(coef,), assoc=assoc, assoc_form=form)


class TestTrajectory:
    def test_intercept_at_origin(self):
        assert trajectory_value(LP, RE0, 0.0) == 2.0

    def test_with_random_effects(self):
        assert trajectory_value(LP, RandomEffects(0.4, -0.1), 2.0) == pytest.approx(3.2, abs=1e-14)

    def test_post_change_parameters(self):
        post = LongitudinalParams(5.0, -0.3, 0.2, 0.4, 0.3, 0.4)
        assert trajectory_value(post, RE0, 1.0) == pytest.approx(4.7, abs=1e-14)


class TestIntensity:
    def test_exponential_baseline_is_constant(self):
        tp = weibull(1.0, 0.5)
        for u in [0.1, 1.0, 7.3]:
            assert transition_intensity(tp, LP, RE0, W1, u) == pytest.approx(0.5, rel=1e-14)

    def test_weibull_closed_form_value(self):
        tp = weibull(1.3, math.exp(-6.0))
        got = float(transition_intensity(tp, LP, RE0, W1, 1.0))
        assert got == pytest.approx(1.3 * math.exp(-6.0), rel=1e-14)  # ~3.2224e-3

    def test_quadratic_with_zero_coefficients_matches_linear_zero(self):
        quad = weibull(1.3, 0.2, assoc=(0.0, 0.0), form="quadratic")
        lin = weibull(1.3, 0.2, assoc=(0.0,), form="linear")
        for u in [0.2, 1.0, 4.0]:
            assert float(transition_intensity(quad, LP, RE0, W1, u)) == float(
                transition_intensity(lin, LP, RE0, W1, u)
            )

    @given(st.floats(0.6, 2.5), st.floats(-4.0, -1.0), st.floats(0.01, 15.0))
    @settings(max_examples=50, deadline=None)
    def test_positive_for_positive_sojourn(self, shape, log_scale, u):
        tp = weibull(shape, math.exp(log_scale), coef=0.7, assoc=(0.4,), form="linear")
        assert transition_intensity(tp, LP, RE0, np.array([0.3]), u) > 0


def graded_oracle(tp, lp, re, w, T, entry=0.0, panels=2048):
    """Composite 15-point rule on a mesh graded toward the origin."""
    from blockjm.submodels import association_term

    power = max(1.0, 4.0 / tp.shape)
    edges = T * (np.arange(panels + 1) / panels) ** power
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        u = a + 0.5 * (b - a) * (GL15_NODES + 1.0)
        mu = trajectory_value(lp, re, entry + u)
        eta = float(np.dot(w, tp.coef)) + association_term(tp, mu, w)
        h = tp.shape * u ** (tp.shape - 1.0) * tp.scale * np.exp(eta)
        total += 0.5 * (b - a) * float(GL15_WEIGHTS @ h)
    return total


class TestCumulativeHazard:
    def test_zero_horizon(self):
        assert cumulative_hazard(weibull(1.3, 0.1), LP, RE0, W1, 0.0) == 0.0

    def test_weibull_closed_form(self):
        tp = weibull(1.3, math.exp(-6.0))
        T = 10.0
        exact = math.exp(-6.0) * T**1.3
        assert cumulative_hazard(tp, LP, RE0, W1, T) == pytest.approx(exact, rel=1e-12)

    def test_closed_form_grid(self):
        for shape in [0.5, 0.8, 1.0, 1.7, 2.4, 3.0]:
            for T in [0.1, 1.0, 8.0, 30.0]:
                tp = weibull(shape, math.exp(-6.0), coef=0.9)
                exact = math.exp(-6.0) * math.exp(0.9 * 0.3) * T**shape
                got = cumulative_hazard(tp, LP, RE0, np.array([0.3]), T)
                assert got == pytest.approx(exact, rel=1e-8)

    def test_constant_hazard_exact(self):
        tp = weibull(1.0, 0.37, coef=0.5)
        got = cumulative_hazard(tp, LP, RE0, np.array([1.0]), 6.0)
        assert got == pytest.approx(0.37 * math.exp(0.5) * 6.0, rel=1e-14)

    def test_time_varying_against_fine_grid_oracle(self):
        tp = weibull(1.3, math.exp(-6.0), coef=1.0, assoc=(0.9,), form="linear")
        for T in [0.5, 2.0, 5.0, 10.0]:
            for entry in [0.0, 3.0]:
                got = cumulative_hazard(tp, LP, RE0, np.array([0.4]), T, entry, clock="global")
                want = graded_oracle(tp, LP, RE0, np.array([0.4]), T, entry)
                assert got == pytest.approx(want, rel=1e-6)

    def test_monotone_in_horizon(self):
        tp = weibull(0.7, 0.05, coef=0.3, assoc=(0.5,), form="linear")
        grid = np.linspace(0.1, 12.0, 40)
        vals = [cumulative_hazard(tp, LP, RE0, np.array([0.2]), T) for T in grid]
        assert all(b > a for a, b in zip(vals[:-1], vals[1:]))


class TestEventLoglik:
    def test_censored_exponential(self):
        tp = weibull(1.0, 0.1)
        ll = st_event_loglik(tp, LP, RE0, W1, sojourn=5.0, observed=False)
        assert ll == pytest.approx(-0.5, abs=1e-14)

    def test_observed_exponential(self):
        tp = weibull(1.0, 0.1)
        ll = st_event_loglik(tp, LP, RE0, W1, sojourn=5.0, observed=True)
        assert ll == pytest.approx(math.log(0.1) - 0.5, rel=1e-12)

    def _random_setup(self, rng, diagram):
        lp = LongitudinalParams(
            rng.normal(2, 1), rng.normal(0.5, 0.3), 0.1 + abs(rng.normal(0.2, 0.1)),
            0.4, 0.3, 0.4,
        )
        re = RandomEffects(rng.normal(0, 0.4), rng.normal(0, 0.3))
        tps = {
            jk: weibull(
                math.exp(rng.normal(0.2, 0.3)), math.exp(rng.normal(-4, 1)),
                coef=rng.normal(1, 0.5), assoc=(rng.normal(0.5, 0.5),), form="linear",
            )
            for jk in diagram.transitions
        }
        return lp, re, tps

    def test_factorisation_identities(self, tree_diagram, small_cohort):
        rng = np.random.default_rng(99)
        for s in small_cohort:
            lp, re, tps = self._random_setup(rng, tree_diagram)
            w = np.array(s.covariates)
            ll_msm = msm_event_loglik(tps, lp, re, w, s.events, tree_diagram)
            total_cr = 0.0
            for state in s.events.visited_states:
                outgoing = tree_diagram.out_states(state)
                if not outgoing:
                    continue
                entry = s.events.entry_time(state)
                soj, outcome = s.events.sojourn(state)
                block_tps = {k: tps[(state, k)] for k in outgoing}
                cr = cr_event_loglik(block_tps, lp, re, w, soj, outcome, entry, clock="global")
                st_sum = sum(
                    st_event_loglik(tps[(state, k)], lp, re, w, soj, outcome == k, entry, clock="global")
                    for k in outgoing
                )
                assert abs(cr - st_sum) < 1e-12
                total_cr += cr
            assert abs(ll_msm - total_cr) < 1e-12


class TestLongitudinal:
    def test_single_point_at_mean(self):
        lp = LongitudinalParams(2.0, 0.5, 1.0, 0.4, 0.3, 0.4)
        ll = longitudinal_loglik(lp, RE0, [0.0], [2.0])
        assert ll == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)

    def test_doubling_sigma_costs_log_two(self):
        lp1 = LongitudinalParams(2.0, 0.5, 0.5, 0.4, 0.3, 0.4)
        lp2 = LongitudinalParams(2.0, 0.5, 1.0, 0.4, 0.3, 0.4)
        a = longitudinal_loglik(lp1, RE0, [1.0], [2.5])
        b = longitudinal_loglik(lp2, RE0, [1.0], [2.5])
        assert a - b == pytest.approx(math.log(2.0), abs=1e-12)

    def test_vector_equals_sum_of_points(self):
        rng = np.random.default_rng(4)
        t = rng.uniform(0, 10, 7)
        y = rng.normal(2 + 0.5 * t, 0.2)
        total = longitudinal_loglik(LP, RE0, t, y)
        parts = sum(longitudinal_loglik(LP, RE0, [ti], [yi]) for ti, yi in zip(t, y))
        assert total == pytest.approx(parts, abs=1e-10)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            longitudinal_loglik(LP, RE0, [], [])
