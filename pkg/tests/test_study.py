import numpy as np
import pytest

from blockjm.engine import FitSpec
from blockjm.nuts import NutsConfig
from blockjm.presets import make_sim_spec
from blockjm.study import StudySpec, run_study, truth_table

TINY = NutsConfig(chains=1, warmup=75, draws=150, init="zero")


def tiny_study(replicates=2, compare=()):
    sim = make_sim_spec("model1-s1", 30, seed=0)
    fits = (
        FitSpec(approach="cr", linkage="concurrent", nuts=TINY, blocks=("cr:1",)),
        FitSpec(approach="cr", linkage="historical", nuts=TINY, blocks=("cr:1",)),
    )
    return StudySpec(sim=sim, fits=fits, replicates=replicates, compare=compare, seed=99)


class TestTruthTable:
    def test_values(self):
        sim = make_sim_spec("model1-s1", 10, seed=0)
        truth = truth_table(sim)
        assert truth["intercept"] == 2.0 and truth["slope"] == 0.5
        assert truth["assoc_0_1"] == 0.9
        assert truth["shape_2_6"] == 1.3
        assert truth["scale_1_4"] == pytest.approx(np.exp(-6.0))
        assert truth["coef_0_2"] == 1.0

    def test_structural_change_drops_trajectory_truth(self):
        truth = truth_table(make_sim_spec("model1-s3", 10, seed=0))
        assert "intercept" not in truth and "slope" not in truth
        assert "assoc_0_1" in truth


class TestRunStudy:
    def test_row_structure_and_determinism(self):
        spec = tiny_study(replicates=2, compare=(("cr-c", "cr-h"),))
        a = run_study(spec, threads=1)
        b = run_study(spec, threads=2)
        assert a.estimates == b.estimates
        assert a.coverage == b.coverage
        assert a.loo_selection == b.loo_selection
        assert not a.failures
        reps = {r["replicate"] for r in a.estimates}
        assert reps == {0, 1}
        approaches = {r["approach"] for r in a.estimates}
        assert approaches == {"cr-c", "cr-h"}
        # no per-subject effects in the tables
        assert not any(r["parameter"].startswith("b1_") for r in a.estimates)

    def test_coverage_counts(self):
        res = run_study(tiny_study(replicates=2), threads=1)
        cov = {(r["approach"], r["parameter"]): r for r in res.coverage}
        row = cov[("cr-c", "assoc_1_3")]
        assert row["n"] == 2
        assert 0 <= row["covered"] <= 2
        assert row["truth"] == 0.9
        # blockwise fits do not tabulate trajectory-parameter coverage
        assert ("cr-c", "intercept") not in cov

    def test_loo_rows(self):
        res = run_study(tiny_study(replicates=2, compare=(("cr-c", "cr-h"),)), threads=1)
        assert len(res.loo_selection) == 2 * 1 * 2  # reps x blocks x definitions
        for row in res.loo_selection:
            assert row["pair"] == "cr-c|cr-h"
            assert row["winner"] in ("cr-c", "cr-h", "tie")
            assert row["definition"] in ("longitudinal", "joint")

    def test_duplicate_labels_rejected(self):
        sim = make_sim_spec("model1-s1", 10, seed=0)
        with pytest.raises(ValueError):
            StudySpec(
                sim=sim,
                fits=(
                    FitSpec(approach="cr", linkage="concurrent", nuts=TINY),
                    FitSpec(approach="cr", linkage="concurrent", nuts=TINY),
                ),
                replicates=1,
            )

    def test_unknown_compare_label_rejected(self):
        sim = make_sim_spec("model1-s1", 10, seed=0)
        with pytest.raises(ValueError):
            StudySpec(
                sim=sim,
                fits=(FitSpec(approach="msm", nuts=TINY),),
                replicates=1,
                compare=(("msm", "cr-c"),),
            )
