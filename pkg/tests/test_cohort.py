import numpy as np
import pytest

from blockjm.cohort import (
    CONCURRENT,
    HISTORICAL,
    block_event_data,
    block_risk_set,
    concurrent_window,
    link_longitudinal,
    load_cohort_csv,
    load_cohort_json,
    save_cohort_csv,
    save_cohort_json,
)
from blockjm.errors import NoImputableValueError, NonPositiveSojournError
from blockjm.graph import decompose
from conftest import make_subject


def blocks(diagram):
    return {b.initial_state: b for b in decompose(diagram, "cr")}


class TestRiskSets:
    def test_path_selects_first_and_third_block(self, tree_diagram, figure_subject):
        from blockjm.cohort import Cohort

        cohort = Cohort((figure_subject,))
        bs = blocks(tree_diagram)
        assert block_risk_set(cohort, bs[0]) == [0]
        assert block_risk_set(cohort, bs[1]) == []
        assert block_risk_set(cohort, bs[2]) == [0]

    def test_censored_in_initial_state(self, tree_diagram):
        from blockjm.cohort import Cohort

        s = make_subject("c", [0], [], 5.0, [(0.0, 1.0)])
        cohort = Cohort((s,))
        bs = blocks(tree_diagram)
        assert block_risk_set(cohort, bs[0]) == [0]
        assert block_risk_set(cohort, bs[1]) == []
        assert block_risk_set(cohort, bs[2]) == []

    def test_everyone_starts_at_risk(self, tree_diagram, small_cohort):
        b0 = blocks(tree_diagram)[0]
        assert len(block_risk_set(small_cohort, b0)) == len(small_cohort)

    def test_risk_sets_nested_along_paths(self, tree_diagram, small_cohort):
        bs = blocks(tree_diagram)
        later = set(block_risk_set(small_cohort, bs[1])) | set(block_risk_set(small_cohort, bs[2]))
        first = set(block_risk_set(small_cohort, bs[0]))
        assert later <= first


class TestLinkage:
    def test_concurrent_window_of_later_block(self, tree_diagram, figure_subject):
        bd = link_longitudinal(figure_subject, blocks(tree_diagram)[2], CONCURRENT)
        # block entered at 3.0, left at 7.5; measurement at exactly 3.0
        # belongs to the exited block, so the window keeps (3.0, 7.5]
        assert np.allclose(bd.local_times, [1.5, 3.0])
        assert np.allclose(bd.values, [4.2, 5.1])
        assert bd.entry_time == 3.0 and bd.sojourn == 4.5 and bd.outcome == 5

    def test_historical_keeps_global_clock(self, tree_diagram, figure_subject):
        bd = link_longitudinal(figure_subject, blocks(tree_diagram)[2], HISTORICAL)
        assert np.allclose(bd.local_times, [0.0, 1.6, 3.0, 4.5, 6.0])
        assert not bd.imputed.any()

    def test_boundary_measurement_goes_to_exited_block(self, tree_diagram, figure_subject):
        bd = link_longitudinal(figure_subject, blocks(tree_diagram)[0], CONCURRENT)
        # first block [0, 3.0]: keeps t=0 and the t=3.0 boundary point
        assert np.allclose(bd.local_times, [0.0, 1.6, 3.0])

    def test_locf_imputes_block_entry_value(self, tree_diagram):
        s = make_subject("l", [0, 1], [2.5], 9.0, [(0.0, 1.0), (2.0, 3.7)])
        bd = link_longitudinal(s, blocks(tree_diagram)[1], CONCURRENT)
        assert bd.imputed.tolist() == [True]
        assert bd.local_times.tolist() == [0.0]
        assert bd.values.tolist() == [3.7]

    def test_locf_falls_back_to_pre_baseline(self, tree_diagram):
        s = make_subject("p", [0], [], 4.0, [], pre=(-1.0, 2.2))
        bd = link_longitudinal(s, blocks(tree_diagram)[0], CONCURRENT)
        assert bd.values.tolist() == [2.2] and bd.imputed.tolist() == [True]

    def test_locf_without_any_value_raises(self, tree_diagram):
        s = make_subject("n", [0], [], 4.0, [])
        with pytest.raises(NoImputableValueError):
            link_longitudinal(s, blocks(tree_diagram)[0], CONCURRENT)

    def test_concurrent_subset_of_historical(self, tree_diagram, small_cohort):
        for b in decompose(tree_diagram, "cr"):
            for idx in block_risk_set(small_cohort, b):
                s = small_cohort.subjects[idx]
                con = link_longitudinal(s, b, CONCURRENT)
                hist = link_longitudinal(s, b, HISTORICAL)
                observed = con.local_times[~con.imputed] + con.entry_time
                assert set(np.round(observed, 12)) <= set(np.round(hist.local_times, 12))


class TestEventData:
    def test_observed_transition(self, tree_diagram, figure_subject):
        soj, outcome, ind = block_event_data(figure_subject, blocks(tree_diagram)[0])
        assert soj == 3.0 and outcome == 2
        assert ind == {(0, 1): 0, (0, 2): 1}

    def test_censored_tail_block(self, tree_diagram, figure_subject):
        soj, outcome, ind = block_event_data(figure_subject, blocks(tree_diagram)[2])
        assert soj == 4.5 and outcome == 5
        assert ind == {(2, 5): 1, (2, 6): 0}

    def test_censored_subject(self, tree_diagram):
        s = make_subject("c", [0, 2], [3.0], 10.0, [(0.0, 1.0)])
        soj, outcome, ind = block_event_data(s, blocks(tree_diagram)[2])
        assert soj == 7.0 and outcome is None
        assert sum(ind.values()) == 0

    def test_st_block_competing_is_censoring(self, tree_diagram, figure_subject):
        st = {(b.from_state, b.to_state): b for b in decompose(tree_diagram, "st")}
        soj, outcome, ind = block_event_data(figure_subject, st[(0, 1)])
        assert outcome is None and ind == {(0, 1): 0}
        soj, outcome, ind = block_event_data(figure_subject, st[(0, 2)])
        assert outcome == 2 and ind == {(0, 2): 1}

    def test_indicator_totals_match_transition_count(self, tree_diagram, small_cohort):
        cr = decompose(tree_diagram, "cr")
        for s in small_cohort:
            total = 0
            for b in cr:
                if b.initial_state in s.events.visited_states:
                    _, _, ind = block_event_data(s, b)
                    total += sum(ind.values())
            assert total == s.events.n_transitions

    def test_non_positive_sojourn_rejected(self):
        with pytest.raises(NonPositiveSojournError):
            make_subject("bad", [0, 1], [0.0], 5.0, [(0.0, 1.0)])


class TestRoundTrip:
    def _assert_same_block_data(self, diagram, a, b):
        for blk in decompose(diagram, "cr"):
            ra, rb = block_risk_set(a, blk), block_risk_set(b, blk)
            assert ra == rb
            for idx in ra:
                for link in (CONCURRENT, HISTORICAL):
                    da = link_longitudinal(a.subjects[idx], blk, link)
                    db = link_longitudinal(b.subjects[idx], blk, link)
                    assert da.entry_time == db.entry_time
                    assert da.sojourn == db.sojourn
                    assert da.outcome == db.outcome
                    assert np.array_equal(da.local_times, db.local_times)
                    assert np.array_equal(da.values, db.values)
                    assert np.array_equal(da.imputed, db.imputed)

    def test_csv_round_trip(self, tmp_path, tree_diagram, small_cohort):
        save_cohort_csv(small_cohort, tmp_path)
        again = load_cohort_csv(tmp_path)
        self._assert_same_block_data(tree_diagram, small_cohort, again)

    def test_json_round_trip(self, tmp_path, tree_diagram, small_cohort):
        save_cohort_json(small_cohort, tmp_path / "cohort.json")
        again = load_cohort_json(tmp_path / "cohort.json")
        self._assert_same_block_data(tree_diagram, small_cohort, again)

    def test_pre_baseline_survives_round_trip(self, tmp_path):
        from blockjm.cohort import Cohort

        s = make_subject("p", [0], [], 4.0, [(1.0, 2.0)], pre=(-0.5, 1.9))
        save_cohort_csv(Cohort((s,)), tmp_path)
        again = load_cohort_csv(tmp_path)
        assert again.subjects[0].pre_baseline.time == -0.5
        assert again.subjects[0].pre_baseline.value == 1.9


def test_validate_rejects_forbidden_transition(tree_diagram):
    from blockjm.cohort import Cohort

    s = make_subject("x", [0, 3], [1.0], 5.0, [(0.0, 1.0)])
    with pytest.raises(ValueError):
        Cohort((s,)).validate(tree_diagram)
