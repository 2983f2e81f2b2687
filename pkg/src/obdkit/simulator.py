"""Virtual trials: patient generation, trial execution, operating characteristics.

Scenarios specify per-dose true toxicity and efficacy rates plus an
odds-ratio association for the joint binary table, and per-event-type
hazards for intercurrent events. Outcomes are generated instantaneously at
a fixed assessment day (no late-onset machinery); intercurrent events are
layered onto the timeline in strategy-relevant positions, e.g. a responder
whose response materializes only after a discontinuation, so that the
estimand strategies actually bite.

Replications are embarrassingly parallel: replication r of a run with
master seed s draws from the counter-based stream keyed (s, r), and results
are aggregated in replication order, so operating characteristics are
invariant to the parallelism degree.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import rng as rngmod
from .core import (
    DesignConfig,
    DomainError,
    DoseGrid,
    DoseState,
    InfeasibleAssociation,
    UtilitySpec,
    record_outcomes,
)
from .decisions import (
    DE_ESCALATE,
    ESCALATE,
    SAFETY_TERMINATIONS,
    STAY,
    TERM_DOSE_CAP,
    TERM_LOWEST_ELIMINATED,
    TERM_MAX_N,
    TERMINATE,
    Decision,
    boin_toxicity_decision,
    effective_boundaries,
    estimate_mtd,
    next_dose,
    snapshot,
)
from .estimand import Event, PatientRecord, StrategyMap, derive_outcome
from .posterior import dirichlet_posterior, prob_tox_exceeds

DESIGNS = ("boin12", "boin_tox_only")


@dataclass(frozen=True)
class Scenario:
    """Ground truth for simulation: dose grid, outcome law, event hazards."""

    grid: DoseGrid
    true_tox: tuple[float, ...]
    true_eff: tuple[float, ...]
    eff_tox_odds_ratio: float = 1.0
    ice_probabilities: dict = field(default_factory=dict)
    stratum_fraction: float = 1.0
    assessment_day: int = 28
    late_response_prob: float = 0.5
    name: str = ""
    description: str = ""

    def __post_init__(self):
        J = self.grid.J
        if len(self.true_tox) != J or len(self.true_eff) != J:
            raise DomainError("true_tox and true_eff must match the dose grid")
        for p in (*self.true_tox, *self.true_eff, self.stratum_fraction, self.late_response_prob):
            if not (0.0 <= p <= 1.0):
                raise DomainError(f"probability {p} outside [0, 1]")
        from .estimand import ICE_TYPES, SURGERY_REASONS

        valid = {t for t in ICE_TYPES if t != "surgery"}
        valid.update(f"surgery.{r}" for r in SURGERY_REASONS)
        for key in self.ice_probabilities:
            if key not in valid:
                raise DomainError(f"unknown intercurrent-event hazard key {key!r}")

    def ice_prob(self, key: str, dose_index: int) -> float:
        v = self.ice_probabilities.get(key, 0.0)
        if isinstance(v, (list, tuple)):
            return float(v[dose_index - 1])
        return float(v)

    def to_dict(self) -> dict:
        return {
            "schema_version": "v1",
            "name": self.name,
            "description": self.description,
            "grid": self.grid.to_dict(),
            "true_tox": list(self.true_tox),
            "true_eff": list(self.true_eff),
            "eff_tox_odds_ratio": self.eff_tox_odds_ratio,
            "ice_probabilities": self.ice_probabilities,
            "stratum_fraction": self.stratum_fraction,
            "assessment_day": self.assessment_day,
            "late_response_prob": self.late_response_prob,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(
            grid=DoseGrid.from_dict(d["grid"]),
            true_tox=tuple(float(x) for x in d["true_tox"]),
            true_eff=tuple(float(x) for x in d["true_eff"]),
            eff_tox_odds_ratio=float(d.get("eff_tox_odds_ratio", 1.0)),
            ice_probabilities=dict(d.get("ice_probabilities", {})),
            stratum_fraction=float(d.get("stratum_fraction", 1.0)),
            assessment_day=int(d.get("assessment_day", 28)),
            late_response_prob=float(d.get("late_response_prob", 0.5)),
            name=str(d.get("name", "")),
            description=str(d.get("description", "")),
        )


def joint_outcome_table(pe: float, pt: float, association: float) -> tuple[float, float, float, float]:
    """Joint law of the binary pair from its marginals and an odds ratio.

    Returns cell probabilities in canonical category order: (e=0,t=1),
    (e=0,t=0), (e=1,t=1), (e=1,t=0). Association 1 gives independence;
    otherwise the (1,1) cell solves the 2x2 odds-ratio equation
    p11 * p00 = association * p10 * p01 subject to the marginals.
    """
    if not (0.0 <= pe <= 1.0 and 0.0 <= pt <= 1.0):
        raise DomainError("marginals must lie in [0, 1]")
    if association <= 0.0:
        raise InfeasibleAssociation(f"odds ratio must be positive, got {association}")
    lo, hi = max(0.0, pe + pt - 1.0), min(pe, pt)
    if association == 1.0 or pe in (0.0, 1.0) or pt in (0.0, 1.0):
        p11 = pe * pt
    else:
        a = 1.0 - association
        b = (1.0 - pe - pt) + association * (pe + pt)
        c = -association * pe * pt
        if a == 0.0:
            p11 = -c / b
        else:
            disc = b * b - 4.0 * a * c
            if disc < 0.0:
                raise InfeasibleAssociation(
                    f"no joint table for pe={pe}, pt={pt}, odds ratio {association}"
                )
            roots = [(-b + math.sqrt(disc)) / (2 * a), (-b - math.sqrt(disc)) / (2 * a)]
            valid = [r for r in roots if lo - 1e-12 <= r <= hi + 1e-12]
            if not valid:
                raise InfeasibleAssociation(
                    f"no feasible (1,1) cell for pe={pe}, pt={pt}, odds ratio {association}"
                )
            p11 = min(max(valid[0], lo), hi)
    p10 = pe - p11
    p01 = pt - p11
    p00 = 1.0 - p11 - p10 - p01
    cells = (p01, p00, p11, p10)
    if any(c < -1e-12 for c in cells):
        raise InfeasibleAssociation(f"negative cell in joint table: {cells}")
    return tuple(max(0.0, c) for c in cells)


def true_mean_utility(scenario: Scenario, spec: UtilitySpec, dose_index: int) -> float:
    """Scenario-true utility of a dose under the canonical category order."""
    cells = joint_outcome_table(
        scenario.true_eff[dose_index - 1],
        scenario.true_tox[dose_index - 1],
        scenario.eff_tox_odds_ratio,
    )
    return sum(p * c for p, c in zip(spec.psi, cells))


def true_obd(scenario: Scenario, spec: UtilitySpec, config: DesignConfig) -> Optional[int]:
    """Truth-level target: utility argmax among doses whose true rates pass
    the toxicity and efficacy limits (ties go to the lowest dose)."""
    best: Optional[int] = None
    best_u = -math.inf
    for j in range(1, scenario.grid.J + 1):
        if scenario.true_tox[j - 1] > config.phi_t or scenario.true_eff[j - 1] < config.phi_e:
            continue
        u = true_mean_utility(scenario, spec, j)
        if u > best_u + 1e-12:
            best, best_u = j, u
    return best


def simulate_patient(
    scenario: Scenario,
    dose: int,
    rng: np.random.Generator,
    patient_id: str = "p0",
) -> PatientRecord:
    """Draw one synthetic patient timeline at a dose.

    The latent binary pair comes from the joint table; a dose-limiting
    toxicity lands inside the observation window; intercurrent events fire
    independently per type. For responders with an event, the response
    materializes after the event with the scenario's late-response
    probability (stable disease is recorded at the event day), otherwise at
    the event day itself, so truncation strategies see a different pair
    than treatment-policy handling.
    """
    cells = joint_outcome_table(
        scenario.true_eff[dose - 1], scenario.true_tox[dose - 1], scenario.eff_tox_odds_ratio
    )
    u = rng.random()
    acc = 0.0
    category = 4
    for idx, c in enumerate(cells, start=1):
        acc += c
        if u < acc:
            category = idx
            break
    flags = {1: (0, 1), 2: (0, 0), 3: (1, 1), 4: (1, 0)}
    ye, yt = flags[category]
    eval_day = scenario.assessment_day

    events: list[Event] = []
    if yt:
        dlt_day = int(rng.integers(1, max(2, eval_day // 2 + 1)))
        events.append(Event(day=dlt_day, kind="toxicity", grade=3, dlt=True))

    ices: list[Event] = []
    for key in sorted(scenario.ice_probabilities):
        p = scenario.ice_prob(key, dose)
        if p <= 0.0 or rng.random() >= p:
            continue
        day = int(rng.integers(1, eval_day))
        if key.startswith("surgery."):
            ices.append(Event(day=day, kind="ice", ice_type="surgery", reason=key.split(".", 1)[1]))
        elif key == "dose_switch":
            if scenario.grid.J == 1:
                continue
            new_dose = dose - 1 if dose > 1 else dose + 1
            ices.append(Event(day=day, kind="ice", ice_type="dose_switch", new_dose_index=new_dose))
        else:
            ices.append(Event(day=day, kind="ice", ice_type=key))

    death_day = min((e.day for e in ices if e.ice_type == "death"), default=None)
    first_ice_day = min((e.day for e in ices), default=None)

    assessments: list[Event] = []
    if ye:
        if first_ice_day is not None and rng.random() < scenario.late_response_prob:
            assessments.append(Event(day=first_ice_day, kind="assessment", response_grade="SD"))
            assessments.append(Event(day=eval_day, kind="assessment", response_grade="PR"))
        elif first_ice_day is not None:
            assessments.append(Event(day=first_ice_day, kind="assessment", response_grade="PR"))
        else:
            assessments.append(Event(day=eval_day, kind="assessment", response_grade="PR"))
    else:
        has_progression = any(e.ice_type == "progression_discontinuation" for e in ices)
        grade = "PD" if has_progression else "SD"
        day = first_ice_day if (has_progression and first_ice_day is not None) else eval_day
        assessments.append(Event(day=day, kind="assessment", response_grade=grade))

    all_events = events + assessments + ices
    if death_day is not None:
        # death is terminal: nothing is observed after it
        all_events = [e for e in all_events if e.day <= death_day]
    all_events.sort(key=lambda e: e.day)

    stratum = "in_stratum" if rng.random() < scenario.stratum_fraction else "out_of_stratum"
    return PatientRecord(
        patient_id=patient_id,
        dose_index=dose,
        events=tuple(all_events),
        stratum_label=stratum,
    )


@dataclass(frozen=True)
class TrialResult:
    """One simulated trial: selection, enrollment, and the full audit trace."""

    obd: Optional[int]
    mtd: Optional[int]
    per_dose_enrolled: tuple[int, ...]
    total_n: int
    dlt_count: int
    stopped_for_safety: bool
    termination_reason: str
    cohorts: tuple[dict, ...]

    def to_dict(self) -> dict:
        return {
            "obd": self.obd,
            "mtd": self.mtd,
            "per_dose_enrolled": list(self.per_dose_enrolled),
            "total_n": self.total_n,
            "dlt_count": self.dlt_count,
            "stopped_for_safety": self.stopped_for_safety,
            "termination_reason": self.termination_reason,
            "cohorts": [dict(c) for c in self.cohorts],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    def audit_jsonl(self) -> str:
        """Audit trace as JSON lines, one cohort decision per line."""
        return "\n".join(json.dumps(c, separators=(",", ":")) for c in self.cohorts) + "\n"


def _titration_active(
    config: DesignConfig, current: int, max_grade_seen: int
) -> bool:
    tr = config.accelerated_titration
    if tr is None:
        return False
    return max_grade_seen < tr.trigger_grade and current < tr.trigger_dose_index


def _comparator_decision(
    current: int,
    states: Sequence[DoseState],
    config: DesignConfig,
    spec: UtilitySpec,
    titration_active: bool,
) -> Decision:
    """Toxicity-only interval design: escalate/stay/de-escalate on the DLT
    rate alone, with the same posterior elimination gate. Used purely as the
    contrast arm in operating-characteristics studies."""
    by_dose = {st.dose_index: st for st in states}
    n_doses = max(by_dose)
    lam_e, lam_d = effective_boundaries(config)
    total = sum(st.n_enrolled for st in states)
    if total >= config.max_n:
        return Decision(TERMINATE, None, (TERM_MAX_N,))
    eliminated: set[int] = set()
    for st in states:
        if st.n == 0:
            continue
        post = dirichlet_posterior(st, config.prior_alpha)
        if prob_tox_exceeds(post, spec, config.phi_t) > config.delta_t:
            eliminated.update(range(st.dose_index, n_doses + 1))
    if 1 in eliminated:
        return Decision(TERMINATE, None, (TERM_LOWEST_ELIMINATED,))
    st = by_dose[current]
    n_tox = st.n_flagged(spec.toxicity_flags)
    if st.n == 0:
        return Decision(STAY, current, ("no evaluable data",), config.cohort_size)
    if titration_active and n_tox == 0:
        target = current + 1
        if target <= n_doses and target not in eliminated and by_dose[target].n_enrolled < config.per_dose_cap:
            return Decision(ESCALATE, target, ("titration escalation",), 1)
    gate = boin_toxicity_decision(n_tox, st.n, lam_e, lam_d)
    target = {ESCALATE: current + 1, STAY: current, DE_ESCALATE: current - 1}[gate]
    target = min(max(target, 1), n_doses)
    while target in eliminated and target > 1:
        target -= 1
    if by_dose[target].n_enrolled >= config.per_dose_cap:
        return Decision(TERMINATE, None, (TERM_DOSE_CAP,))
    kind = ESCALATE if target > current else STAY if target == current else DE_ESCALATE
    return Decision(kind, target, (f"interval rule: {gate}",), config.cohort_size)


def _run_trial_stream(
    scenario: Scenario,
    config: DesignConfig,
    smap: StrategyMap,
    spec: UtilitySpec,
    stream: np.random.Generator,
    design: str = "boin12",
) -> TrialResult:
    if design not in DESIGNS:
        raise DomainError(f"design must be one of {DESIGNS}")
    J = scenario.grid.J
    states = [DoseState.empty(j, spec.K) for j in range(1, J + 1)]
    current = 1
    enrolled = 0
    pid = 0
    max_grade_seen = 0
    dlt_count = 0
    cohorts: list[dict] = []
    stopped_for_safety = False
    reason = ""

    while True:
        titration = _titration_active(config, current, max_grade_seen)
        cohort_target = 1 if titration else config.cohort_size
        room = min(
            config.max_n - enrolled,
            config.per_dose_cap - states[current - 1].n_enrolled,
        )
        size = min(cohort_target, room)
        if size <= 0:
            reason = "no enrollment room at the assigned dose"
            break

        cohort_records = []
        cohort_outcomes = []
        for _ in range(size):
            pid += 1
            rec = simulate_patient(scenario, current, stream, patient_id=f"p{pid:03d}")
            cohort_records.append(rec)
            cohort_outcomes.append(derive_outcome(rec, smap, spec))
            for e in rec.events:
                if e.kind == "toxicity":
                    max_grade_seen = max(max_grade_seen, e.grade or 0)
                    if e.dlt:
                        dlt_count += 1
        states[current - 1] = record_outcomes(states[current - 1], cohort_outcomes)
        enrolled += size

        titration = _titration_active(config, current, max_grade_seen)
        if design == "boin12":
            snap = snapshot(states, spec, config)
            decision = next_dose(
                current,
                states,
                snap.summaries,
                config,
                rng=stream if config.assignment_mode != "deterministic" else None,
                titration_active=titration,
            )
        else:
            decision = _comparator_decision(current, states, config, spec, titration)

        cohorts.append(
            {
                "dose": current,
                "size": size,
                "patients": [r.patient_id for r in cohort_records],
                "categories": [
                    (o.category if o.category is not None else "MISSING")
                    for o in cohort_outcomes
                ],
                "decision": decision.to_dict(),
            }
        )

        if decision.kind == TERMINATE:
            reason = "; ".join(decision.rationale)
            stopped_for_safety = any(r in SAFETY_TERMINATIONS for r in decision.rationale)
            break
        current = decision.next_dose

    tested = []
    for st in states:
        if st.n == 0:
            break
        tested.append((st.n_flagged(spec.toxicity_flags), st.n))

    if stopped_for_safety or not tested:
        obd = None
        mtd = estimate_mtd(tested, config.phi_t) if tested else None
    elif design == "boin12":
        snap = snapshot(states, spec, config)
        obd, mtd = snap.obd, snap.mtd
    else:
        mtd = estimate_mtd(tested, config.target_phi)
        obd = mtd
    return TrialResult(
        obd=obd,
        mtd=mtd,
        per_dose_enrolled=tuple(st.n_enrolled for st in states),
        total_n=enrolled,
        dlt_count=dlt_count,
        stopped_for_safety=stopped_for_safety,
        termination_reason=reason,
        cohorts=tuple(cohorts),
    )


def run_trial(
    scenario: Scenario,
    config: DesignConfig,
    smap: StrategyMap,
    spec: UtilitySpec,
    seed: int,
    design: str = "boin12",
) -> TrialResult:
    """Execute one full virtual trial, deterministically in the seed."""
    return _run_trial_stream(
        scenario, config, smap, spec, rngmod.replication_stream(seed, 0), design
    )


@dataclass(frozen=True)
class OperatingCharacteristics:
    """Aggregates over replications of one scenario/design pairing."""

    reps: int
    master_seed: int
    design: str
    scenario_name: str
    obd_selection_pct: dict
    correct_selection_pct: float
    mean_patients: tuple[float, ...]
    mean_total_n: float
    early_termination_pct: float
    mean_dlt_count: float

    def to_dict(self) -> dict:
        return {
            "schema_version": "v1",
            "rng_algorithm": rngmod.ALGORITHM,
            "reps": self.reps,
            "master_seed": self.master_seed,
            "design": self.design,
            "scenario_name": self.scenario_name,
            "obd_selection_pct": self.obd_selection_pct,
            "correct_selection_pct": self.correct_selection_pct,
            "mean_patients": list(self.mean_patients),
            "mean_total_n": self.mean_total_n,
            "early_termination_pct": self.early_termination_pct,
            "mean_dlt_count": self.mean_dlt_count,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    def to_csv(self) -> str:
        """Long-format summary: metric, dose, value; scalars leave dose empty."""
        lines = ["metric,dose,value"]
        doses = sorted((k for k in self.obd_selection_pct if k != "none"), key=int)
        for d in doses:
            lines.append(f"selection_pct,{d},{self.obd_selection_pct[d]:.4f}")
        lines.append(f"selection_pct,none,{self.obd_selection_pct['none']:.4f}")
        for d in doses:
            lines.append(f"mean_patients,{d},{self.mean_patients[int(d) - 1]:.4f}")
        lines.append(f"mean_total_n,,{self.mean_total_n:.4f}")
        lines.append(f"early_termination_pct,,{self.early_termination_pct:.4f}")
        lines.append(f"mean_dlt_count,,{self.mean_dlt_count:.4f}")
        lines.append(f"correct_selection_pct,,{self.correct_selection_pct:.4f}")
        return "\n".join(lines) + "\n"


def _replicate(args) -> dict:
    scenario_d, config_d, smap_d, spec_d, master_seed, rep, design = args
    scenario = Scenario.from_dict(scenario_d)
    config = DesignConfig.from_dict(config_d)
    smap = StrategyMap.from_dict(smap_d)
    spec = UtilitySpec.from_dict(spec_d)
    stream = rngmod.replication_stream(master_seed, rep)
    res = _run_trial_stream(scenario, config, smap, spec, stream, design)
    return {
        "obd": res.obd,
        "per_dose": list(res.per_dose_enrolled),
        "total_n": res.total_n,
        "dlt": res.dlt_count,
        "safety_stop": res.stopped_for_safety,
    }


def operating_characteristics(
    scenario: Scenario,
    config: DesignConfig,
    smap: StrategyMap,
    spec: UtilitySpec,
    reps: int,
    master_seed: int,
    parallelism: int = 1,
    design: str = "boin12",
) -> OperatingCharacteristics:
    """Monte Carlo operating characteristics over seeded replications.

    Replication r draws from the stream keyed (master_seed, r) regardless of
    how replications are scheduled, so any parallelism degree produces the
    same aggregate, byte for byte.
    """
    if reps < 1:
        raise DomainError("need at least one replication")
    args = [
        (
            scenario.to_dict(),
            config.to_dict(),
            smap.to_dict(),
            spec.to_dict(),
            master_seed,
            rep,
            design,
        )
        for rep in range(reps)
    ]
    if parallelism <= 1:
        results = [_replicate(a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(_replicate, args, chunksize=max(1, reps // (parallelism * 4))))

    J = scenario.grid.J
    sel_counts = {str(j): 0 for j in range(1, J + 1)}
    sel_counts["none"] = 0
    per_dose = np.zeros(J)
    total_n = 0.0
    dlt = 0.0
    safety_stops = 0
    truth = true_obd(scenario, spec, config)
    correct = 0
    for r in results:
        key = "none" if r["obd"] is None else str(r["obd"])
        sel_counts[key] += 1
        per_dose += np.asarray(r["per_dose"], dtype=float)
        total_n += r["total_n"]
        dlt += r["dlt"]
        safety_stops += 1 if r["safety_stop"] else 0
        if truth is not None and r["obd"] == truth:
            correct += 1
    return OperatingCharacteristics(
        reps=reps,
        master_seed=master_seed,
        design=design,
        scenario_name=scenario.name,
        obd_selection_pct={k: 100.0 * v / reps for k, v in sel_counts.items()},
        correct_selection_pct=100.0 * correct / reps,
        mean_patients=tuple(per_dose / reps),
        mean_total_n=total_n / reps,
        early_termination_pct=100.0 * safety_stops / reps,
        mean_dlt_count=dlt / reps,
    )
