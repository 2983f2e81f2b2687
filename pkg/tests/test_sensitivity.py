import pytest

from obdkit.core import DesignConfig, DomainError, UtilitySpec
from obdkit.estimand import Event, PatientRecord, default_strategy_map, uniform_strategy_map
from obdkit.sensitivity import prior_sensitivity, strategy_sensitivity, tipping_scan

CANON = UtilitySpec.canonical()


def responder(pid, dose, grade="PR"):
    return PatientRecord(pid, dose, (Event(day=28, kind="assessment", response_grade=grade),))


def nonresponder(pid, dose):
    return PatientRecord(pid, dose, (Event(day=28, kind="assessment", response_grade="SD"),))


def missing_patient(pid, dose):
    # external-factor surgery is mapped to the hypothetical strategy
    return PatientRecord(
        pid,
        dose,
        (
            Event(day=10, kind="assessment", response_grade="SD"),
            Event(day=12, kind="ice", ice_type="surgery", reason="external_factors"),
        ),
    )


@pytest.fixture
def two_dose_margin_records():
    """Dose 2 beats dose 1 on utility by exactly one responder's margin."""
    recs = [responder(f"a{i}", 1) for i in range(2)] + [nonresponder(f"b{i}", 1) for i in range(4)]
    recs += [responder(f"c{i}", 2) for i in range(3)] + [nonresponder(f"d{i}", 2) for i in range(3)]
    return recs


class TestTippingScan:
    def test_no_flippable_patients(self, config):
        recs = [nonresponder("n1", 1), nonresponder("n2", 1)]
        report = tipping_scan(recs, default_strategy_map(), CANON, config)
        assert report.pool_patient_ids == ()
        assert len(report.scan) == 1 and report.scan[0].num_flipped == 0
        assert report.tipping_point is None

    def test_zero_flips_reproduce_baseline(self, two_dose_margin_records, config):
        report = tipping_scan(two_dose_margin_records, default_strategy_map(), CANON, config)
        assert report.scan[0].resulting_obd == report.baseline_obd

    def test_margin_of_one(self, two_dose_margin_records, config):
        report = tipping_scan(
            two_dose_margin_records, default_strategy_map(), CANON, config, exhaustive=True
        )
        assert report.baseline_obd == 2
        assert report.tipping_point == 1
        assert report.exhaustive_tipping_point == 1

    def test_greedy_matches_exhaustive_on_fixtures(self, config):
        fixtures = [
            [responder(f"p{i}", 1) for i in range(3)] + [nonresponder(f"q{i}", 1) for i in range(3)],
            [responder(f"p{i}", 2) for i in range(4)]
            + [nonresponder(f"q{i}", 2) for i in range(2)]
            + [responder(f"r{i}", 1) for i in range(1)]
            + [nonresponder(f"s{i}", 1) for i in range(5)],
            [missing_patient("m0", 2)]
            + [responder(f"p{i}", 2) for i in range(3)]
            + [nonresponder(f"q{i}", 2) for i in range(2)]
            + [responder(f"r{i}", 1) for i in range(2)]
            + [nonresponder(f"s{i}", 1) for i in range(4)],
        ]
        for recs in fixtures:
            report = tipping_scan(recs, default_strategy_map(), CANON, config, exhaustive=True)
            assert report.tipping_point == report.exhaustive_tipping_point

    def test_flip_everything_kills_selection(self, config):
        recs = [responder(f"p{i}", 1) for i in range(6)]
        report = tipping_scan(recs, default_strategy_map(), CANON, config)
        assert report.scan[-1].num_flipped == 6
        # six patients at the lowest score: dose is toxic and futile
        assert report.scan[-1].resulting_obd is None

    def test_missing_patients_enter_pool(self, config):
        recs = [missing_patient("m1", 1), responder("p1", 1), nonresponder("q1", 1)]
        report = tipping_scan(recs, default_strategy_map(), CANON, config, mode="missing")
        assert report.pool_patient_ids == ("m1",)

    def test_flip_target_validated(self, config):
        with pytest.raises(DomainError):
            tipping_scan([responder("p", 1)], default_strategy_map(), CANON, config, flip_to=9)

    def test_exhaustive_pool_cap(self, config):
        recs = [responder(f"p{i}", 1) for i in range(13)]
        with pytest.raises(DomainError):
            tipping_scan(recs, default_strategy_map(), CANON, config, exhaustive=True)


class TestPriorSensitivity:
    def test_identity_with_large_n(self, config):
        # 30+ patients per dose: the prior washes out to within 2 points
        recs = []
        for dose, k in ((1, 10), (2, 20)):
            recs += [responder(f"r{dose}-{i}", dose) for i in range(k)]
            recs += [nonresponder(f"n{dose}-{i}", dose) for i in range(32 - k)]
        report = prior_sensitivity(recs, default_strategy_map(), CANON, config)
        for row in report.rows:
            assert abs(row.delta) <= 2.0
        assert report.obd_agrees

    def test_small_n_disagreement_reported(self):
        config = DesignConfig(phi_e=0.0, delta_e=0.99)  # keep futility out of the way
        recs = [responder("a", 1), nonresponder("b", 1), responder("c", 2), responder("d", 2)]
        report = prior_sensitivity(recs, default_strategy_map(), CANON, config)
        assert len(report.rows) == 2
        assert report.obd_design is not None
        # both selections are reported whether or not they agree
        assert hasattr(report, "obd_flat")

    def test_untested_doses_skipped(self, config):
        recs = [responder("a", 1)]
        report = prior_sensitivity(recs, default_strategy_map(), CANON, config, n_doses=3)
        assert [r.dose_index for r in report.rows] == [1]


class TestStrategySensitivity:
    def test_obds_per_map(self, config):
        recs = [
            PatientRecord(
                "p1",
                1,
                (
                    Event(day=10, kind="toxicity", grade=3, dlt=True),
                    Event(day=12, kind="assessment", response_grade="SD"),
                    Event(day=12, kind="ice", ice_type="tox_discontinuation"),
                    Event(day=40, kind="assessment", response_grade="CR"),
                ),
            )
        ] + [responder(f"r{i}", 1) for i in range(3)]
        report = strategy_sensitivity(
            recs,
            [uniform_strategy_map("treatment_policy"), uniform_strategy_map("composite")],
            CANON,
            config,
        )
        assert len(report.obds) == 2
        assert report.comparison.columns[0].question.startswith("utility of the dose regardless")

    def test_needs_two_maps(self, config):
        with pytest.raises(DomainError):
            strategy_sensitivity([], [uniform_strategy_map("composite")], CANON, config)


class TestTextReports:
    def test_tipping_render_text(self, config):
        recs = [responder(f"p{i}", 1) for i in range(3)]
        report = tipping_scan(recs, default_strategy_map(), CANON, config)
        text = report.render_text()
        assert "baseline selection" in text and "tipping point" in text

    def test_prior_render_text(self, config):
        recs = [responder(f"p{i}", 1) for i in range(3)]
        report = prior_sensitivity(recs, default_strategy_map(), CANON, config)
        text = report.render_text()
        assert "design prior" in text and "flat prior" in text
