import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obdkit.core import DesignConfig, DomainError, MissingStratumLabel, UnmappedIce, UtilitySpec
from obdkit.estimand import (
    Event,
    PatientRecord,
    StrategyEntry,
    StrategyMap,
    build_analysis_set,
    compare_strategies,
    default_strategy_map,
    derive_outcome,
    load_records_csv,
    load_records_jsonl,
    uniform_strategy_map,
)

CANON = UtilitySpec.canonical()


def assessment(day, grade):
    return Event(day=day, kind="assessment", response_grade=grade)


def toxicity(day, grade=3, dlt=True):
    return Event(day=day, kind="toxicity", grade=grade, dlt=dlt)


def ice(day, ice_type, **kw):
    return Event(day=day, kind="ice", ice_type=ice_type, **kw)


def record(events, pid="p1", dose=1, stratum=None):
    ordered = tuple(sorted(events, key=lambda e: e.day))
    return PatientRecord(pid, dose, ordered, stratum_label=stratum)


@pytest.fixture
def discontinuation_then_cr():
    """Stable disease at the day treatment stops for toxicity, complete
    response later in follow-up: the canonical diverging fixture."""
    return record(
        [
            toxicity(10, grade=3, dlt=True),
            assessment(12, "SD"),
            ice(12, "tox_discontinuation"),
            assessment(40, "CR"),
        ]
    )


class TestStrategySemantics:
    def test_treatment_policy_keeps_followup(self, discontinuation_then_cr):
        smap = uniform_strategy_map("treatment_policy")
        out = derive_outcome(discontinuation_then_cr, smap, CANON)
        # CR after discontinuation counts, DLT counts: category (e=1, t=1)
        assert out.category == 3
        assert out.evaluable

    def test_while_on_treatment_truncates(self, discontinuation_then_cr):
        smap = uniform_strategy_map("while_on_treatment")
        out = derive_outcome(discontinuation_then_cr, smap, CANON)
        # only SD seen by the event day: no efficacy, toxicity stands
        assert out.category == 1

    def test_same_day_observation_counts(self):
        rec = record([assessment(12, "PR"), ice(12, "additional_therapy")])
        smap = uniform_strategy_map("while_on_treatment")
        out = derive_outcome(rec, smap, CANON)
        assert out.category == 4  # same-day response is inside the window

    def test_composite_toxicity_linked(self, discontinuation_then_cr):
        smap = uniform_strategy_map("composite")
        out = derive_outcome(discontinuation_then_cr, smap, CANON)
        assert out.category == 1  # failure with forced toxicity: lowest score

    def test_composite_death_before_response(self):
        rec = record([ice(5, "death")])
        out = derive_outcome(rec, default_strategy_map(), CANON)
        assert out.category == 1
        assert CANON.psi[out.category - 1] == 0.0

    def test_composite_non_toxicity_keeps_observed_t(self):
        rec = record([toxicity(3), assessment(20, "PD"), ice(20, "progression_discontinuation")])
        out = derive_outcome(rec, default_strategy_map(), CANON)
        # failure for efficacy, but the observed DLT is retained
        assert out.category == 1
        rec2 = record([assessment(20, "PD"), ice(20, "progression_discontinuation")])
        assert derive_outcome(rec2, default_strategy_map(), CANON).category == 2

    def test_favorable_composite_surgery(self):
        rec = record([assessment(15, "SD"), ice(16, "surgery", reason="tumor_shrinkage")])
        out = derive_outcome(rec, default_strategy_map(), CANON)
        # the event itself counts as response; no toxicity observed
        assert out.category == 4

    def test_hypothetical_flags_for_sensitivity(self):
        rec = record([assessment(15, "PR"), ice(20, "surgery", reason="external_factors")])
        out = derive_outcome(rec, default_strategy_map(), CANON)
        assert out.category is None
        assert not out.evaluable
        assert out.sensitivity_flag

    def test_principal_stratum_match_and_mismatch(self):
        smap = uniform_strategy_map("principal_stratum", declared_stratum="in_stratum")
        rec_in = record([assessment(28, "PR"), ice(5, "ada_occurrence")], stratum="in_stratum")
        out_in = derive_outcome(rec_in, smap, CANON)
        assert out_in.evaluable and out_in.category == 4
        rec_out = PatientRecord("p2", 1, rec_in.events, stratum_label="out_of_stratum")
        out_out = derive_outcome(rec_out, smap, CANON)
        assert not out_out.evaluable and out_out.category == 4

    def test_principal_stratum_requires_labels(self):
        smap = uniform_strategy_map("principal_stratum", declared_stratum="in_stratum")
        rec = record([ice(5, "ada_occurrence"), assessment(28, "PR")])
        with pytest.raises(MissingStratumLabel):
            derive_outcome(rec, smap, CANON)
        smap_unset = uniform_strategy_map("principal_stratum")
        rec2 = record([ice(5, "ada_occurrence")], stratum="in_stratum")
        with pytest.raises(MissingStratumLabel):
            derive_outcome(rec2, smap_unset, CANON)

    def test_unmapped_ice(self):
        smap = StrategyMap(entries={"death": StrategyEntry("composite")})
        rec = record([ice(4, "nonadherence")])
        with pytest.raises(UnmappedIce):
            derive_outcome(rec, smap, CANON)

    def test_response_on_death_day_never_counts(self):
        smap = uniform_strategy_map("treatment_policy")
        rec = record([assessment(9, "CR"), ice(9, "death")])
        out = derive_outcome(rec, smap, CANON)
        assert out.category == 2  # no efficacy credit, no observed DLT

    def test_first_terminal_wins(self):
        rec = record([ice(5, "death"), ice(9, "surgery", reason="external_factors")])
        out = derive_outcome(rec, default_strategy_map(), CANON)
        assert out.category == 1  # composite death fired first
        assert not out.sensitivity_flag

    def test_ices_after_truncation_are_skipped(self):
        rec = record(
            [assessment(8, "PR"), ice(10, "additional_therapy"), ice(20, "tox_discontinuation")]
        )
        out = derive_outcome(rec, default_strategy_map(), CANON)
        # truncation at day 10 shields the later composite event
        assert out.category == 4
        assert any(t.strategy == "skipped" for t in out.strategy_trace)

    def test_trace_nonempty_with_ice(self, discontinuation_then_cr):
        out = derive_outcome(discontinuation_then_cr, default_strategy_map(), CANON)
        assert len(out.strategy_trace) >= 1

    def test_dose_switch_attribution(self):
        events = [ice(5, "dose_switch", new_dose_index=2), assessment(28, "PR")]
        rec = record(events, dose=3)
        keep = derive_outcome(rec, default_strategy_map(), CANON)
        assert keep.dose_index == 3  # intention-to-treat default
        smap = StrategyMap(
            entries=default_strategy_map().entries, attribute_to_switched_dose=True
        )
        moved = derive_outcome(rec, smap, CANON)
        assert moved.dose_index == 2

    def test_dlt_window(self):
        smap = StrategyMap(entries=default_strategy_map().entries, dlt_window_days=28)
        rec = record([toxicity(40, grade=4, dlt=True), assessment(28, "SD")])
        out = derive_outcome(rec, smap, CANON)
        assert out.category == 2  # DLT outside the window does not count

    def test_determinism(self, discontinuation_then_cr):
        smap = default_strategy_map()
        a = derive_outcome(discontinuation_then_cr, smap, CANON)
        b = derive_outcome(discontinuation_then_cr, smap, CANON)
        assert a == b


class TestTableTwoDefaults:
    """One patient per mapped event type, checking the shipped default map."""

    def test_all_nine_rows(self):
        smap = default_strategy_map()
        base = [assessment(12, "SD"), assessment(40, "CR")]
        cases = {
            "tox_discontinuation": (record(base + [ice(12, "tox_discontinuation")]), 1),
            "death": (record([assessment(12, "SD"), ice(20, "death")]), 1),
            # truncation keeps the SD-only prefix: no response
            "additional_therapy": (record(base + [ice(12, "additional_therapy")]), 2),
            # efficacy failure; toxicity keeps its observed value (none here)
            "progression_discontinuation": (
                record([assessment(12, "PD"), ice(12, "progression_discontinuation")]),
                2,
            ),
            # policy keeps the late CR
            "ada_occurrence": (record(base + [ice(12, "ada_occurrence")]), 4),
            "dose_switch": (record(base + [ice(12, "dose_switch", new_dose_index=2)]), 4),
            "surgery.clinician_choice": (
                record(base + [ice(12, "surgery", reason="clinician_choice")]),
                2,
            ),
            "surgery.tumor_shrinkage": (
                record(base + [ice(12, "surgery", reason="tumor_shrinkage")]),
                4,
            ),
            "surgery.external_factors": (
                record(base + [ice(12, "surgery", reason="external_factors")]),
                None,
            ),
        }
        for key, (rec, expected) in cases.items():
            out = derive_outcome(rec, smap, CANON)
            assert out.category == expected, f"{key}: got {out.category}, want {expected}"
            if expected is None:
                assert out.sensitivity_flag


events_strategy = st.lists(
    st.one_of(
        st.builds(
            assessment,
            st.integers(0, 60),
            st.sampled_from(["CR", "PR", "SD", "PD", "NE"]),
        ),
        st.builds(
            toxicity,
            st.integers(0, 60),
            st.integers(1, 5),
            st.booleans(),
        ),
    ),
    max_size=8,
)


class TestProperties:
    @settings(max_examples=150, deadline=None)
    @given(events_strategy)
    def test_no_ice_neutrality(self, events):
        events = sorted(events, key=lambda e: e.day)
        rec = record(events)
        outs = {
            name: derive_outcome(rec, uniform_strategy_map(name), CANON)
            for name in ("treatment_policy", "composite", "hypothetical", "while_on_treatment")
        }
        cats = {o.category for o in outs.values()}
        assert len(cats) == 1
        assert all(o.evaluable for o in outs.values())
        assert all(not o.strategy_trace for o in outs.values())

    @settings(max_examples=150, deadline=None)
    @given(events_strategy, st.integers(0, 60))
    def test_while_on_treatment_prefix_property(self, events, ice_day):
        events = sorted(events, key=lambda e: e.day)
        smap = uniform_strategy_map("while_on_treatment")
        full = record(events + [ice(max(ice_day, max((e.day for e in events), default=0)), "additional_therapy")])
        # adding events strictly after the truncation day must change nothing
        cut = full.events[-1].day
        trimmed_events = [e for e in full.events if e.day <= cut]
        trimmed = record(trimmed_events)
        assert derive_outcome(full, smap, CANON).category == derive_outcome(trimmed, smap, CANON).category

    @settings(max_examples=100, deadline=None)
    @given(events_strategy)
    def test_composite_dominance(self, events):
        events = sorted(events, key=lambda e: e.day)
        first_day = min((e.day for e in events), default=5)
        rec = record([ice(first_day, "tox_discontinuation")] + list(events))
        out = derive_outcome(rec, uniform_strategy_map("composite"), CANON)
        assert out.category == 1


class TestAnalysisSet:
    def test_default_rule_exclusions(self):
        no_assessment = record([], pid="bare")
        discontinued = record([ice(6, "tox_discontinuation")], pid="dc")
        assessed = record([assessment(28, "SD")], pid="ok")
        ne_only = record([assessment(28, "NE")], pid="ne")
        result = build_analysis_set([no_assessment, discontinued, assessed, ne_only], default_strategy_map())
        kept = {o.patient_id for o in result.outcomes}
        assert kept == {"dc", "ok"}
        reasons = dict(result.exclusions)
        assert "bare" in reasons and "ne" in reasons

    def test_baseline_required(self):
        rec = PatientRecord("nb", 1, (assessment(28, "PR"),), baseline_ok=False)
        result = build_analysis_set([rec], default_strategy_map())
        assert result.outcomes == ()
        assert result.exclusions[0][1] == "no baseline assessment"

    def test_all_treated_keeps_everyone(self):
        records = [record([], pid="a"), record([assessment(5, "NE")], pid="b")]
        result = build_analysis_set(records, default_strategy_map(), rule="all_treated")
        assert len(result.outcomes) == 2

    def test_custom_predicate(self):
        records = [record([], pid="a", dose=1), record([], pid="b", dose=2)]
        result = build_analysis_set(
            records,
            default_strategy_map(),
            rule=lambda r: (r.dose_index == 2, "wrong dose"),
        )
        assert [o.patient_id for o in result.outcomes] == ["b"]

    def test_empty_input(self):
        assert build_analysis_set([], default_strategy_map()).outcomes == ()


class TestCompareStrategies:
    def test_three_maps_diverge(self, config):
        # discontinuation for low-grade toxicity (no DLT): the three handlings
        # land in three distinct categories
        rec = record(
            [
                toxicity(10, grade=2, dlt=False),
                assessment(12, "SD"),
                ice(12, "tox_discontinuation"),
                assessment(40, "CR"),
            ]
        )
        maps = [
            uniform_strategy_map("treatment_policy"),
            uniform_strategy_map("while_on_treatment"),
            uniform_strategy_map("composite"),
        ]
        cmpn = compare_strategies([rec], maps, CANON, config)
        cats = [c.outcomes[0].category for c in cmpn.columns]
        assert cats == [4, 2, 1]
        assert len(set(cats)) == 3
        assert cmpn.columns[0].question != cmpn.columns[1].question

    def test_three_maps_with_dlt(self, config):
        # with an actual DLT the truncating and composite analyses coincide
        rec = record(
            [
                toxicity(10),
                assessment(12, "SD"),
                ice(12, "tox_discontinuation"),
                assessment(40, "CR"),
            ]
        )
        maps = [
            uniform_strategy_map("treatment_policy"),
            uniform_strategy_map("while_on_treatment"),
            uniform_strategy_map("composite"),
        ]
        cmpn = compare_strategies([rec], maps, CANON, config)
        assert [c.outcomes[0].category for c in cmpn.columns] == [3, 1, 1]

    def test_no_ice_identical_columns(self, config):
        recs = [record([assessment(28, "PR")], pid=f"p{i}") for i in range(3)]
        maps = [uniform_strategy_map("treatment_policy"), uniform_strategy_map("composite")]
        cmpn = compare_strategies(recs, maps, CANON, config)
        assert cmpn.columns[0].per_dose_n == cmpn.columns[1].per_dose_n
        assert cmpn.columns[0].mean_utilities == cmpn.columns[1].mean_utilities
        assert cmpn.columns[0].obd == cmpn.columns[1].obd

    def test_all_hypothetical_no_obd(self, config):
        recs = [
            record([ice(3, "nonadherence"), assessment(28, "PR")], pid=f"p{i}")
            for i in range(3)
        ]
        cmpn = compare_strategies(recs, [uniform_strategy_map("hypothetical")], CANON, config)
        col = cmpn.columns[0]
        assert col.per_dose_n == (0,)
        assert col.obd is None

    def test_needs_a_map(self, config):
        with pytest.raises(DomainError):
            compare_strategies([], [], CANON, config)


class TestIngestion:
    def test_jsonl_roundtrip(self, tmp_path):
        rec = record(
            [toxicity(3), assessment(12, "SD"), ice(14, "surgery", reason="clinician_choice")],
            pid="r1",
            dose=2,
        )
        path = tmp_path / "records.jsonl"
        path.write_text(json.dumps(rec.to_dict()) + "\n", encoding="utf-8")
        loaded = load_records_jsonl(path)
        assert loaded == [rec]

    def test_csv_long_format(self, tmp_path):
        path = tmp_path / "records.csv"
        path.write_text(
            "patient_id,dose_index,first_dose_day,baseline_ok,stratum_label,day,kind,"
            "response_grade,grade,dlt,ice_type,new_dose_index,reason\n"
            "p1,2,0,true,,3,toxicity,,3,1,,,\n"
            "p1,2,0,true,,12,assessment,SD,,,,,\n"
            "p1,2,0,true,,14,ice,,,,surgery,,clinician_choice\n"
            "p2,1,0,true,,28,assessment,PR,,,,,\n",
            encoding="utf-8",
        )
        recs = load_records_csv(path)
        assert [r.patient_id for r in recs] == ["p1", "p2"]
        assert recs[0].events[0].kind == "toxicity" and recs[0].events[0].dlt
        assert recs[0].events[2].reason == "clinician_choice"
        assert recs[1].events[0].response_grade == "PR"

    def test_strategy_map_roundtrip(self):
        smap = default_strategy_map()
        again = StrategyMap.from_dict(smap.to_dict())
        assert again == smap

    def test_events_must_be_sorted(self):
        with pytest.raises(DomainError):
            PatientRecord("p1", 1, (assessment(10, "SD"), assessment(5, "PR")))

    def test_single_terminal_event(self):
        with pytest.raises(DomainError):
            record([ice(3, "death"), ice(9, "death")])


class TestPrincipalStratumComposition:
    def test_later_terminal_event_still_applies_out_of_stratum(self):
        # stratum mismatch toggles evaluability only; the later death still
        # determines the category through its own composite handling
        entries = dict(default_strategy_map().entries)
        entries["ada_occurrence"] = StrategyEntry("principal_stratum")
        smap = StrategyMap(entries=entries, declared_stratum="in_stratum")
        rec = record(
            [ice(5, "ada_occurrence"), ice(10, "death")],
            stratum="out_of_stratum",
        )
        out = derive_outcome(rec, smap, CANON)
        assert out.category == 1
        assert not out.evaluable

    def test_in_stratum_composite_stays_evaluable(self):
        entries = dict(default_strategy_map().entries)
        entries["ada_occurrence"] = StrategyEntry("principal_stratum")
        smap = StrategyMap(entries=entries, declared_stratum="in_stratum")
        rec = record([ice(5, "ada_occurrence"), ice(10, "death")], stratum="in_stratum")
        out = derive_outcome(rec, smap, CANON)
        assert out.category == 1
        assert out.evaluable
