import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obdkit.core import DesignConfig, DomainError, DoseState, NoTestedDoses, TitrationRule, UtilitySpec
from obdkit.decisions import (
    DE_ESCALATE,
    ELIMINATE_AND_DE_ESCALATE,
    ESCALATE,
    STAY,
    TERMINATE,
    admissible_set,
    boin_boundaries,
    boin_toxicity_decision,
    decision_table,
    estimate_mtd,
    isotonic_tox_estimates,
    next_dose,
    randomization_weights,
    resolve_config,
    select_obd,
    snapshot,
)
from obdkit.posterior import PosteriorSummary, summarize
from obdkit.rng import replication_stream

CANON = UtilitySpec.canonical()


def brute_monotone_projection(rates, weights):
    """Independent oracle: enumerate every consecutive-block partition, pool
    each block at the weighted mean, keep monotone candidates, min SSE."""
    J = len(rates)
    best = None
    for mask in range(2 ** (J - 1)):
        blocks, start = [], 0
        for i in range(J - 1):
            if mask >> i & 1:
                blocks.append((start, i + 1))
                start = i + 1
        blocks.append((start, J))
        means = []
        for s, e in blocks:
            w = sum(weights[s:e])
            means.append(sum(rates[i] * weights[i] for i in range(s, e)) / w)
        if any(means[i] > means[i + 1] + 1e-14 for i in range(len(means) - 1)):
            continue
        fit = []
        for (s, e), m in zip(blocks, means):
            fit.extend([m] * (e - s))
        sse = sum(weights[i] * (rates[i] - fit[i]) ** 2 for i in range(J))
        if best is None or sse < best[0] - 1e-14:
            best = (sse, fit)
    return best[1]


def mk_summary(dose, utility, prob_toxic=0.0, prob_futile=0.0, n=3, n_tox=0):
    return PosteriorSummary(
        dose_index=dose,
        mean_utility=utility,
        mean_tox=0.1,
        mean_eff=0.5,
        prob_toxic=prob_toxic,
        prob_futile=prob_futile,
        n=n,
        n_tox=n_tox,
    )


class TestBoundaries:
    def test_case_study_anchor(self):
        lam_e, lam_d = boin_boundaries(0.3)
        assert lam_e == pytest.approx(0.2364, abs=5e-4)
        assert lam_d == pytest.approx(0.3586, abs=5e-4)
        # three-digit protocol rendering
        assert round(lam_e, 3) == 0.236
        assert round(lam_d, 3) == 0.359

    def test_phi_025(self):
        lam_e, lam_d = boin_boundaries(0.25)
        assert lam_e == pytest.approx(0.197, abs=1e-3)
        assert lam_d == pytest.approx(0.298, abs=1e-3)

    def test_degenerate_limit(self):
        lam_e, lam_d = boin_boundaries(0.3, phi1=0.3 - 1e-7, phi2=0.3 + 1e-7)
        assert lam_e == pytest.approx(0.3, abs=1e-5)
        assert lam_d == pytest.approx(0.3, abs=1e-5)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            boin_boundaries(0.0)
        with pytest.raises(DomainError):
            boin_boundaries(0.3, phi1=0.3)
        with pytest.raises(DomainError):
            boin_boundaries(0.3, phi2=1.2)


class TestToxicityDecision:
    def test_escalate_at_zero(self):
        assert boin_toxicity_decision(0, 3, 0.236, 0.359) == ESCALATE

    def test_stay_between(self):
        assert boin_toxicity_decision(1, 3, 0.236, 0.359) == STAY

    def test_deescalate_above(self):
        assert boin_toxicity_decision(2, 3, 0.236, 0.359) == DE_ESCALATE

    def test_boundaries_inclusive(self):
        # rates exactly at a boundary act, they do not stay
        assert boin_toxicity_decision(236, 1000, 0.236, 0.359) == ESCALATE
        assert boin_toxicity_decision(359, 1000, 0.236, 0.359) == DE_ESCALATE

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 30), st.integers(0, 30))
    def test_monotone_in_toxicity(self, n, k):
        k = min(k, n)
        order = {ESCALATE: 0, STAY: 1, DE_ESCALATE: 2}
        lam_e, lam_d = boin_boundaries(0.3)
        decisions = [order[boin_toxicity_decision(t, n, lam_e, lam_d)] for t in range(k + 1)]
        assert decisions == sorted(decisions)


class TestAdmissibleSet:
    def test_toxic_exclusion(self, config):
        adm = admissible_set([mk_summary(1, 50, prob_toxic=0.97)], config)
        flag = adm.flag(1)
        assert flag.toxic and not flag.admissible

    def test_futile_exclusion(self, config):
        adm = admissible_set([mk_summary(1, 50, prob_futile=0.91)], config)
        assert adm.flag(1).futile

    def test_three_patient_dose_admissible(self, spec, config):
        # no toxicities, no responders in 3: passes both gates at the defaults
        summ = summarize(DoseState(1, (0, 3, 0, 0), 3), spec, config)
        assert summ.prob_toxic == pytest.approx(0.0933, abs=2e-3)
        assert summ.prob_futile == pytest.approx(0.8295, abs=2e-3)
        adm = admissible_set([summ], config)
        assert adm.dose_indices == (1,)

    def test_untested_flagged(self, config):
        adm = admissible_set([mk_summary(1, 42.5, n=0)], config)
        assert adm.flag(1).untested and not adm.flag(1).admissible

    def test_inverted_futility_variant(self, spec):
        config = DesignConfig(futility_tail="upper", delta_e=0.5)
        summ = summarize(DoseState(1, (0, 0, 0, 5), 5), spec, config)
        adm = admissible_set([summ], config)
        # a clearly effective dose flunks the inverted gate, as expected
        assert adm.flag(1).futile


class TestIsotonic:
    def test_pooling_example(self):
        assert isotonic_tox_estimates([(0, 3), (2, 6), (1, 6)]) == pytest.approx([0.0, 0.25, 0.25])

    def test_monotone_input_unchanged(self):
        rates = [(0, 6), (1, 6), (3, 6)]
        assert isotonic_tox_estimates(rates) == pytest.approx([0.0, 1 / 6, 0.5])

    def test_constant_unchanged(self):
        assert isotonic_tox_estimates([(1, 6), (1, 6), (1, 6)]) == pytest.approx([1 / 6] * 3)

    def test_empty_rejected(self):
        with pytest.raises(NoTestedDoses):
            isotonic_tox_estimates([])

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(
            st.tuples(st.integers(0, 12), st.integers(1, 12)).map(
                lambda t: (min(t[0], t[1]), t[1])
            ),
            min_size=1,
            max_size=6,
        )
    )
    def test_matches_brute_force(self, tested):
        mine = isotonic_tox_estimates(tested)
        rates = [t / n for t, n in tested]
        weights = [n for _, n in tested]
        oracle = brute_monotone_projection(rates, weights)
        assert mine == pytest.approx(oracle, abs=1e-10)
        assert all(a <= b + 1e-12 for a, b in zip(mine, mine[1:]))


class TestEstimateMtd:
    def test_closest(self):
        # isotonic estimates (0.05, 0.28, 0.45) vs 0.35: dose 2 wins
        assert estimate_mtd([(1, 20), (28, 100), (45, 100)], 0.35) == 2

    def test_all_zero_ties_to_highest(self):
        assert estimate_mtd([(0, 3), (0, 3), (0, 3)], 0.35) == 3

    def test_single_dose(self):
        assert estimate_mtd([(1, 3)], 0.35) == 1

    def test_tie_above_goes_lower(self):
        # estimates 0.30 and 0.40 are equidistant from 0.35: lower dose wins
        assert estimate_mtd([(30, 100), (40, 100)], 0.35) == 1

    def test_pooled_tie_below_goes_higher(self):
        # pooled flat run below the limit: the highest pooled dose is chosen
        assert estimate_mtd([(2, 10), (1, 10)], 0.35) == 2


class TestSelectObd:
    def test_mtd_cap(self, config):
        # doses 2..4 admissible; isotonic MTD is 3; dose 4's utility is capped out
        summaries = [
            mk_summary(1, 40, prob_futile=0.99, n=6, n_tox=0),
            mk_summary(2, 55, n=6, n_tox=1),
            mk_summary(3, 62, n=6, n_tox=2),
            mk_summary(4, 70, n=6, n_tox=3),
        ]
        tested = [(0, 6), (1, 6), (2, 6), (3, 6)]
        assert estimate_mtd(tested, config.phi_t) == 3
        assert select_obd(summaries, tested, config) == 3

    def test_all_inadmissible(self, config):
        summaries = [mk_summary(j, 50, prob_toxic=0.99, n=3) for j in (1, 2)]
        assert select_obd(summaries, [(2, 3), (3, 3)], config) is None

    def test_single_admissible(self, config):
        summaries = [mk_summary(1, 31, n=3)]
        assert select_obd(summaries, [(0, 3)], config) == 1

    def test_never_above_mtd(self, config):
        summaries = [mk_summary(1, 10, n=6), mk_summary(2, 99, n=6, n_tox=4)]
        tested = [(0, 6), (4, 6)]
        mtd = estimate_mtd(tested, config.phi_t)
        obd = select_obd(summaries, tested, config)
        assert obd is not None and obd <= mtd


class TestRandomizationWeights:
    def test_proportional(self, config):
        summaries = [mk_summary(1, 40), mk_summary(2, 60)]
        w = randomization_weights(summaries, admissible_set(summaries, config))
        assert w.dose_indices == (1, 2)
        assert w.weights == pytest.approx((0.4, 0.6))

    def test_singleton(self, config):
        summaries = [mk_summary(1, 73)]
        w = randomization_weights(summaries, admissible_set(summaries, config))
        assert w.weights == (1.0,)

    def test_zero_utilities_uniform(self, config):
        summaries = [mk_summary(1, 0.0), mk_summary(2, 0.0)]
        w = randomization_weights(summaries, admissible_set(summaries, config))
        assert w.weights == pytest.approx((0.5, 0.5))

    def test_weights_sum_to_one(self, config):
        summaries = [mk_summary(j, u) for j, u in [(1, 12.5), (2, 40), (3, 33.3)]]
        w = randomization_weights(summaries, admissible_set(summaries, config))
        assert sum(w.weights) == pytest.approx(1.0)


def states_for(counts_list, K=4):
    return [DoseState(j, tuple(c), sum(c)) for j, c in enumerate(counts_list, start=1)]


def summaries_for(states, spec, config):
    return [summarize(s, spec, config) for s in states]


class TestNextDose:
    def test_escalates_to_untested(self, spec, config):
        states = states_for([(0, 1, 0, 2), (0, 0, 0, 0), (0, 0, 0, 0)])
        d = next_dose(1, states, summaries_for(states, spec, config), config)
        assert d.kind == ESCALATE and d.next_dose == 2

    def test_tie_breaks_to_lower(self, spec, config):
        # doses 1 and 2 identical data: equal utilities, escalate gate open
        states = states_for([(0, 1, 0, 2), (0, 1, 0, 2), (0, 0, 0, 0)])
        summaries = summaries_for(states, spec, config)
        d = next_dose(1, states, summaries, config)
        # candidate 2 is tested with identical utility: lower dose wins
        assert d.next_dose == 1

    def test_deescalate_on_high_rate(self, spec, config):
        states = states_for([(0, 1, 0, 2), (2, 0, 1, 0)])
        d = next_dose(2, states, summaries_for(states, spec, config), config)
        assert d.kind in (DE_ESCALATE, ELIMINATE_AND_DE_ESCALATE)
        assert d.next_dose == 1

    def test_terminates_when_lowest_eliminated(self, spec, config):
        states = states_for([(6, 0, 0, 0)])
        d = next_dose(1, states, summaries_for(states, spec, config), config)
        assert d.kind == TERMINATE and d.next_dose is None

    def test_terminates_at_max_n(self, spec):
        config = DesignConfig(max_n=3, per_dose_cap=3, cohort_size=3)
        states = states_for([(0, 1, 0, 2)])
        d = next_dose(1, states, summaries_for(states, spec, config), config)
        assert d.kind == TERMINATE

    def test_never_skips(self, spec, config):
        states = states_for([(0, 0, 0, 3), (0, 0, 0, 0), (0, 0, 0, 0)])
        d = next_dose(1, states, summaries_for(states, spec, config), config)
        assert d.next_dose == 2  # not 3, even though 3 might look attractive

    def test_per_dose_cap_blocks(self, spec):
        config = DesignConfig(per_dose_cap=3, max_n=27)
        states = [DoseState(1, (0, 1, 0, 2), 3), DoseState(2, (0, 0, 0, 0), 0)]
        d = next_dose(1, states, summaries_for(states, spec, config), config)
        # dose 1 capped, so stay is impossible; escalation target is open
        assert d.next_dose == 2

    def test_titration_escalates_single_patient(self, spec, titration_config):
        states = states_for([(0, 0, 0, 1), (0, 0, 0, 0)])
        d = next_dose(
            1, states, summaries_for(states, spec, titration_config), titration_config,
            titration_active=True,
        )
        assert d.kind == ESCALATE and d.next_dose == 2 and d.cohort_size == 1

    def test_titration_inactive_uses_cohorts(self, spec, titration_config):
        states = states_for([(0, 2, 0, 1), (0, 0, 0, 0)])
        d = next_dose(
            1, states, summaries_for(states, spec, titration_config), titration_config,
            titration_active=False,
        )
        assert d.cohort_size == titration_config.cohort_size

    def test_moves_at_most_one_level(self, spec, config):
        states = states_for(
            [(0, 1, 0, 2), (0, 1, 0, 2), (0, 0, 0, 3), (0, 0, 0, 0), (0, 0, 0, 0)]
        )
        for current in (1, 2, 3):
            d = next_dose(current, states, summaries_for(states, spec, config), config)
            if d.next_dose is not None:
                assert abs(d.next_dose - current) <= 1

    def test_adaptive_mode_needs_rng(self, spec):
        config = DesignConfig(assignment_mode="adaptive_randomization")
        states = states_for([(0, 1, 0, 2), (0, 1, 0, 2)])
        with pytest.raises(DomainError):
            next_dose(1, states, summaries_for(states, spec, config), config)

    def test_adaptive_mode_deterministic_given_stream(self, spec):
        config = DesignConfig(assignment_mode="adaptive_randomization")
        states = states_for([(0, 1, 0, 2), (0, 1, 0, 2)])
        summaries = summaries_for(states, spec, config)
        picks = {
            next_dose(1, states, summaries, config, rng=replication_stream(7, 0)).next_dose
            for _ in range(5)
        }
        assert len(picks) == 1

    def test_equal_mode_uniform_support(self, spec):
        config = DesignConfig(assignment_mode="equal_randomization")
        states = states_for([(0, 1, 0, 2), (0, 1, 0, 2)])
        summaries = summaries_for(states, spec, config)
        seen = {
            next_dose(1, states, summaries, config, rng=replication_stream(11, i)).next_dose
            for i in range(40)
        }
        assert seen == {1, 2}

    def test_eliminated_dose_never_assigned(self, spec, config):
        # dose 2 grossly toxic: eliminated together with dose 3
        states = states_for([(0, 1, 0, 2), (5, 0, 1, 0), (0, 0, 0, 0)])
        summaries = summaries_for(states, spec, config)
        for current in (1, 2):
            d = next_dose(current, states, summaries, config)
            assert d.next_dose in (1, None)


class TestSnapshot:
    def test_contiguous_tested_prefix(self, spec, config):
        states = states_for([(0, 1, 0, 2), (0, 0, 0, 0), (0, 1, 0, 2)])
        snap = snapshot(states, spec, config)
        assert snap.tested == ((0, 3),)  # dose 3 is beyond the untested gap

    def test_obd_and_mtd(self, spec, config):
        states = states_for([(0, 1, 0, 2), (1, 0, 0, 5), (0, 0, 0, 0)])
        snap = snapshot(states, spec, config)
        assert snap.mtd in (1, 2)
        assert snap.obd == 2


class TestDecisionTable:
    def test_row_count_stars_and_bars(self, spec, config):
        tbl = decision_table(config, spec, 3)
        assert len(tbl.rows) == 1 + 4 + 10 + 20  # compositions for n = 0..3

    def test_prior_row_only_at_zero(self, spec, config):
        tbl = decision_table(config, spec, 0)
        assert len(tbl.rows) == 1
        assert tbl.rows[0][0] == 0 and tbl.rows[0][4] == ""
        assert tbl.rows[0][8] == "42.5000"

    def test_contains_escalate_row(self, spec, config):
        tbl = decision_table(config, spec, 3)
        row = next(r for r in tbl.rows if r[1] == "0/3/0/0")
        assert row[4] == ESCALATE
        # posterior (0.25, 3.25, 0.25, 0.25), total 4
        assert row[8] == f"{(0.25 * 0 + 3.25 * 10 + 0.25 * 60 + 0.25 * 100) / 4:.4f}"
        assert row[8] == "18.1250"

    def test_qbb_column_matches_utility(self, spec, config):
        tbl = decision_table(config, spec, 2)
        for row in tbl.rows:
            assert row[8] == row[9]

    def test_byte_identical(self, spec, config):
        a = decision_table(config, spec, 3)
        b = decision_table(config, spec, 3)
        assert a.to_json() == b.to_json()
        assert a.to_csv() == b.to_csv()

    def test_cap_guard(self, spec, config):
        with pytest.raises(DomainError):
            decision_table(config, spec, config.per_dose_cap + 1)

    def test_csv_shape(self, spec, config):
        lines = decision_table(config, spec, 1).to_csv().strip().splitlines()
        assert lines[0].startswith("n,counts,n_tox")
        assert len(lines) == 1 + 1 + 4


class TestResolveConfig:
    def test_pins_boundaries(self, config):
        resolved = resolve_config(config)
        assert resolved.lambda_e == pytest.approx(0.2365, abs=1e-4)
        assert resolved.lambda_d == pytest.approx(0.3585, abs=1e-4)
        assert resolve_config(resolved) == resolved


class TestNextDoseProperties:
    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(
            st.tuples(*(st.integers(0, 4) for _ in range(4))),
            min_size=2,
            max_size=6,
        ),
        st.integers(1, 6),
    )
    def test_structural_invariants(self, counts_list, current_raw):
        config = DesignConfig(per_dose_cap=12, max_n=200, cohort_size=3)
        states = [DoseState(j, tuple(c), sum(c)) for j, c in enumerate(counts_list, start=1)]
        current = min(current_raw, len(states))
        if states[current - 1].n == 0:
            return  # precondition: the current dose has been tested
        summaries = [summarize(s, CANON, config) for s in states]
        d = next_dose(current, states, summaries, config)
        eliminated = set()
        top = len(states)
        for s in summaries:
            if s.prob_toxic > config.delta_t:
                eliminated.update(range(s.dose_index, top + 1))
        if d.kind == TERMINATE:
            assert d.next_dose is None
        else:
            assert d.next_dose is not None
            assert abs(d.next_dose - current) <= 1
            assert d.next_dose not in eliminated
            assert states[d.next_dose - 1].n_enrolled < config.per_dose_cap
            assert d.rationale  # every decision carries its rule trace

    def test_untested_escalation_respects_cap(self, spec):
        config = DesignConfig(per_dose_cap=3, max_n=27)
        # dose 2 untested but already full of pending enrollments
        states = [DoseState(1, (0, 1, 0, 2), 3), DoseState(2, (0, 0, 0, 0), 3)]
        summaries = [summarize(s, spec, config) for s in states]
        d = next_dose(1, states, summaries, config)
        # both neighbors capped: the design stops rather than overfilling
        assert d.kind == TERMINATE
