"""Intercurrent-event handling: from patient timelines to derived outcomes.

A patient record is a time-ordered event list (response assessments,
toxicities, intercurrent events). Each intercurrent event type is mapped to
one of five handling strategies, and the strategies determine how the binary
(efficacy, toxicity) pair is read off the timeline:

* treatment_policy: the event is ignored; observations before and after it
  all contribute.
* while_on_treatment: the timeline is truncated at the event day, inclusive,
  so same-day observations still count.
* composite: the event itself is the outcome. Efficacy is forced to 0 (or to
  1 for entries marked favorable, e.g. surgery on tumor shrinkage), toxicity
  is forced to 1 when the event type is toxicity-linked and otherwise keeps
  its observed value. Terminal: later events change nothing.
* hypothetical: no category can be derived; the patient is flagged for
  sensitivity handling. Terminal.
* principal_stratum: the outcome is derived normally but only counts when
  the patient's stratum label matches the declared analysis stratum.

Events are processed in chronological order; the first terminal strategy
wins, non-terminal strategies compose left to right. A response observed on
or after the day of death never counts toward efficacy, under any strategy.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

from .core import (
    DerivedOutcome,
    DesignConfig,
    DomainError,
    MissingStratumLabel,
    TraceEntry,
    UnmappedIce,
    UtilitySpec,
    classify_outcome,
    states_from_outcomes,
)

ICE_TYPES = (
    "tox_discontinuation",
    "death",
    "additional_therapy",
    "progression_discontinuation",
    "ada_occurrence",
    "dose_switch",
    "surgery",
    "nonadherence",
    "symptomatic_deterioration",
)

SURGERY_REASONS = ("clinician_choice", "tumor_shrinkage", "external_factors")

RESPONSE_GRADES = ("CR", "PR", "SD", "PD", "NE")

STRATEGIES = (
    "treatment_policy",
    "composite",
    "hypothetical",
    "while_on_treatment",
    "principal_stratum",
)

#: Event types whose composite handling also forces toxicity.
TOXICITY_LINKED_ICE = frozenset({"tox_discontinuation", "death"})

#: Event types that end protocol treatment, for analysis-set purposes.
TREATMENT_ENDING_ICE = frozenset(
    {"tox_discontinuation", "progression_discontinuation", "death", "symptomatic_deterioration"}
)

#: The estimand question each strategy answers, used to key comparison tables.
STRATEGY_QUESTIONS = {
    "treatment_policy": "utility of the dose regardless of the event",
    "composite": "utility of the dose counting the event as failure",
    "hypothetical": "utility of the dose had the event not occurred",
    "while_on_treatment": "utility of the dose from data before the event",
    "principal_stratum": "utility of the dose in the stratum unaffected by the event",
}


@dataclass(frozen=True)
class Event:
    """One timeline entry; ``kind`` selects which detail fields apply."""

    day: int
    kind: str  # "assessment" | "toxicity" | "ice"
    response_grade: Optional[str] = None
    grade: Optional[int] = None
    dlt: bool = False
    ice_type: Optional[str] = None
    new_dose_index: Optional[int] = None
    reason: Optional[str] = None

    def __post_init__(self):
        if self.kind == "assessment" and self.response_grade not in RESPONSE_GRADES:
            raise DomainError(f"bad response grade {self.response_grade!r}")
        if self.kind == "toxicity" and not (1 <= (self.grade or 0) <= 5):
            raise DomainError(f"toxicity grade must be 1..5, got {self.grade}")
        if self.kind == "ice":
            if self.ice_type not in ICE_TYPES:
                raise DomainError(f"unknown intercurrent event type {self.ice_type!r}")
            if self.ice_type == "surgery" and self.reason not in SURGERY_REASONS:
                raise DomainError(f"surgery needs a reason from {SURGERY_REASONS}")

    def to_dict(self) -> dict:
        d: dict = {"day": self.day, "kind": self.kind}
        if self.kind == "assessment":
            d["response_grade"] = self.response_grade
        elif self.kind == "toxicity":
            d["grade"] = self.grade
            d["dlt"] = self.dlt
        else:
            d["ice_type"] = self.ice_type
            if self.new_dose_index is not None:
                d["new_dose_index"] = self.new_dose_index
            if self.reason is not None:
                d["reason"] = self.reason
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Event":
        return cls(
            day=int(d["day"]),
            kind=str(d["kind"]),
            response_grade=d.get("response_grade"),
            grade=None if d.get("grade") is None else int(d["grade"]),
            dlt=bool(d.get("dlt", False)),
            ice_type=d.get("ice_type"),
            new_dose_index=None if d.get("new_dose_index") is None else int(d["new_dose_index"]),
            reason=d.get("reason"),
        )


@dataclass(frozen=True)
class PatientRecord:
    """A patient's post-first-dose event timeline.

    Days are measured from ``first_dose_day`` (the landmark at which the
    treatment condition starts); screening events never appear here.
    """

    patient_id: str
    dose_index: int
    events: tuple[Event, ...]
    first_dose_day: int = 0
    stratum_label: Optional[str] = None
    baseline_ok: bool = True

    def __post_init__(self):
        days = [e.day for e in self.events]
        if days != sorted(days):
            raise DomainError(f"events for {self.patient_id} are not sorted by day")
        if any(e.day < self.first_dose_day for e in self.events):
            raise DomainError(f"events for {self.patient_id} precede the first dose")
        deaths = [e for e in self.events if e.kind == "ice" and e.ice_type == "death"]
        if len(deaths) > 1:
            raise DomainError(f"{self.patient_id} has more than one terminal event")

    def ices(self) -> tuple[Event, ...]:
        return tuple(e for e in self.events if e.kind == "ice")

    def to_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "dose_index": self.dose_index,
            "first_dose_day": self.first_dose_day,
            "stratum_label": self.stratum_label,
            "baseline_ok": self.baseline_ok,
            "events": [e.to_dict() for e in self.events],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PatientRecord":
        return cls(
            patient_id=str(d["patient_id"]),
            dose_index=int(d["dose_index"]),
            events=tuple(Event.from_dict(e) for e in d.get("events", [])),
            first_dose_day=int(d.get("first_dose_day", 0)),
            stratum_label=d.get("stratum_label"),
            baseline_ok=bool(d.get("baseline_ok", True)),
        )


@dataclass(frozen=True)
class StrategyEntry:
    """Strategy assignment for one event type; ``favorable`` marks the
    composite variant that counts the event as an efficacy success."""

    strategy: str
    favorable: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise DomainError(f"unknown strategy {self.strategy!r}")


def _entry_from_json(v) -> StrategyEntry:
    if isinstance(v, str):
        return StrategyEntry(v)
    return StrategyEntry(str(v["strategy"]), bool(v.get("favorable", False)))


@dataclass(frozen=True)
class StrategyMap:
    """How each intercurrent event type is handled, plus outcome definitions.

    Surgery entries are keyed ``surgery.<reason>`` so the three causes can
    be handled differently. ``declared_stratum`` names the analysis stratum
    when any entry uses the principal-stratum strategy.
    ``attribute_to_switched_dose`` moves the derived outcome to the new dose
    after a dose switch handled by treatment policy (default keeps the
    starting dose, the intention-to-treat reading).
    """

    entries: dict[str, StrategyEntry]
    efficacy_success_grades: frozenset[str] = frozenset({"CR", "PR"})
    dlt_window_days: int = 28
    declared_stratum: Optional[str] = None
    attribute_to_switched_dose: bool = False

    def lookup(self, event: Event) -> StrategyEntry:
        if event.ice_type == "surgery":
            key = f"surgery.{event.reason}"
        else:
            key = event.ice_type or ""
        entry = self.entries.get(key)
        if entry is None:
            raise UnmappedIce(f"no strategy mapped for intercurrent event {key!r}")
        return entry

    def to_dict(self) -> dict:
        return {
            "schema_version": "v1",
            "entries": {
                k: ({"strategy": v.strategy, "favorable": True} if v.favorable else v.strategy)
                for k, v in self.entries.items()
            },
            "efficacy_success_grades": sorted(self.efficacy_success_grades),
            "dlt_window_days": self.dlt_window_days,
            "declared_stratum": self.declared_stratum,
            "attribute_to_switched_dose": self.attribute_to_switched_dose,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StrategyMap":
        return cls(
            entries={k: _entry_from_json(v) for k, v in d.get("entries", {}).items()},
            efficacy_success_grades=frozenset(d.get("efficacy_success_grades", ("CR", "PR"))),
            dlt_window_days=int(d.get("dlt_window_days", 28)),
            declared_stratum=d.get("declared_stratum"),
            attribute_to_switched_dose=bool(d.get("attribute_to_switched_dose", False)),
        )


def default_strategy_map(dlt_window_days: int = 28) -> StrategyMap:
    """The case-study defaults: failures are composite, care-path events are
    truncated, and events irrelevant to the drug's own effect are ignored."""
    return StrategyMap(
        entries={
            "tox_discontinuation": StrategyEntry("composite"),
            "death": StrategyEntry("composite"),
            "additional_therapy": StrategyEntry("while_on_treatment"),
            "progression_discontinuation": StrategyEntry("composite"),
            "ada_occurrence": StrategyEntry("treatment_policy"),
            "dose_switch": StrategyEntry("treatment_policy"),
            "surgery.clinician_choice": StrategyEntry("while_on_treatment"),
            "surgery.tumor_shrinkage": StrategyEntry("composite", favorable=True),
            "surgery.external_factors": StrategyEntry("hypothetical"),
            "nonadherence": StrategyEntry("treatment_policy"),
            "symptomatic_deterioration": StrategyEntry("hypothetical"),
        },
        dlt_window_days=dlt_window_days,
    )


def uniform_strategy_map(strategy: str, **kwargs) -> StrategyMap:
    """Map every event type to a single strategy (for what-if comparisons)."""
    keys = [t for t in ICE_TYPES if t != "surgery"] + [f"surgery.{r}" for r in SURGERY_REASONS]
    return StrategyMap(entries={k: StrategyEntry(strategy) for k in keys}, **kwargs)


def _observe(
    record: PatientRecord,
    smap: StrategyMap,
    cutoff: Optional[int],
) -> tuple[int, int]:
    """Read the binary (efficacy, toxicity) pair off the (possibly truncated)
    timeline. Toxicity counts dose-limiting events inside the window;
    efficacy counts successful response grades, never on or after death."""
    death_day = None
    for e in record.events:
        if e.kind == "ice" and e.ice_type == "death":
            death_day = e.day
    ye = 0
    yt = 0
    window_end = record.first_dose_day + smap.dlt_window_days
    for e in record.events:
        if cutoff is not None and e.day > cutoff:
            continue
        if e.kind == "assessment":
            if death_day is not None and e.day >= death_day:
                continue
            if e.response_grade in smap.efficacy_success_grades:
                ye = 1
        elif e.kind == "toxicity":
            if e.dlt and e.day <= window_end:
                yt = 1
    return ye, yt


def derive_outcome(
    record: PatientRecord,
    smap: StrategyMap,
    spec: UtilitySpec,
    classifier: Optional[Callable[[int, int], int]] = None,
) -> DerivedOutcome:
    """Apply the strategy map to one patient record.

    ``classifier`` converts the derived binary pair into a category index;
    it defaults to flag lookup in the utility spec and exists so specs with
    more than four levels can plug in their own grading.
    """
    classify = classifier or (lambda e, t: classify_outcome(e, t, spec))
    trace: list[TraceEntry] = []
    cutoff: Optional[int] = None
    dose = record.dose_index
    stratum_excluded = False

    for e in record.ices():
        key = f"surgery.{e.reason}" if e.ice_type == "surgery" else (e.ice_type or "")
        if cutoff is not None and e.day > cutoff:
            trace.append(
                TraceEntry(key, "skipped", f"day {e.day} is past the truncation cutoff {cutoff}")
            )
            continue
        entry = smap.lookup(e)
        s = entry.strategy
        if s == "treatment_policy":
            effect = "ignored; observations before and after the event all count"
            if e.ice_type == "dose_switch" and smap.attribute_to_switched_dose:
                dose = int(e.new_dose_index or dose)
                effect += f"; outcome attributed to switched dose {dose}"
            trace.append(TraceEntry(key, s, effect))
        elif s == "while_on_treatment":
            cutoff = e.day if cutoff is None else min(cutoff, e.day)
            trace.append(
                TraceEntry(key, s, f"timeline truncated at day {e.day} (same-day data kept)")
            )
        elif s == "composite":
            ye_obs, yt_obs = _observe(record, smap, cutoff=e.day)
            ye = 1 if entry.favorable else 0
            yt = 1 if e.ice_type in TOXICITY_LINKED_ICE else yt_obs
            label = "favorable composite" if entry.favorable else "composite"
            trace.append(
                TraceEntry(
                    key,
                    s,
                    f"{label}: event determines the outcome (e={ye}, t={yt}); terminal",
                )
            )
            return DerivedOutcome(
                record.patient_id, dose, classify(ye, yt), not stratum_excluded, tuple(trace), False
            )
        elif s == "hypothetical":
            trace.append(
                TraceEntry(key, s, "no category derivable; flagged for sensitivity analysis")
            )
            return DerivedOutcome(record.patient_id, dose, None, False, tuple(trace), True)
        elif s == "principal_stratum":
            if record.stratum_label is None:
                raise MissingStratumLabel(
                    f"{record.patient_id}: principal-stratum handling without a stratum label"
                )
            if smap.declared_stratum is None:
                raise MissingStratumLabel(
                    "strategy map declares no analysis stratum for principal-stratum handling"
                )
            in_stratum = record.stratum_label == smap.declared_stratum
            trace.append(
                TraceEntry(
                    key,
                    s,
                    f"stratum {record.stratum_label!r}"
                    + ("" if in_stratum else f" outside analysis stratum {smap.declared_stratum!r}"),
                )
            )
            # only evaluability changes; later events still compose normally
            stratum_excluded = stratum_excluded or not in_stratum
        else:  # pragma: no cover
            raise DomainError(f"unhandled strategy {s!r}")

    ye, yt = _observe(record, smap, cutoff)
    return DerivedOutcome(
        record.patient_id, dose, classify(ye, yt), not stratum_excluded, tuple(trace), False
    )


# -- analysis sets ----------------------------------------------------------

DEFAULT_ANALYSIS_RULE = "all_treated_with_baseline_and_postbaseline"


@dataclass(frozen=True)
class AnalysisSet:
    outcomes: tuple[DerivedOutcome, ...]
    exclusions: tuple[tuple[str, str], ...]  # (patient_id, reason)

    def to_dict(self) -> dict:
        return {
            "outcomes": [o.to_dict() for o in self.outcomes],
            "exclusions": [{"patient_id": p, "reason": r} for p, r in self.exclusions],
        }


def _has_adequate_assessment(record: PatientRecord) -> bool:
    return any(
        e.kind == "assessment" and e.response_grade != "NE" for e in record.events
    )


def _discontinued_before_assessment(record: PatientRecord) -> bool:
    first_assessment = min(
        (e.day for e in record.events if e.kind == "assessment" and e.response_grade != "NE"),
        default=None,
    )
    for e in record.ices():
        if e.ice_type in TREATMENT_ENDING_ICE:
            if first_assessment is None or e.day < first_assessment:
                return True
    return False


def build_analysis_set(
    records: Sequence[PatientRecord],
    smap: StrategyMap,
    rule: str | Callable[[PatientRecord], tuple[bool, str]] = DEFAULT_ANALYSIS_RULE,
    spec: Optional[UtilitySpec] = None,
) -> AnalysisSet:
    """Filter records by the denominator rule, then derive the survivors.

    The default rule keeps treated patients with a baseline assessment and
    either at least one adequate post-baseline response assessment or a
    treatment discontinuation before the first such assessment. Excluded
    records are reported with the reason rather than silently dropped.
    """
    spec = spec or UtilitySpec.canonical()
    outcomes = []
    exclusions = []
    for r in records:
        if callable(rule):
            keep, reason = rule(r)
        elif rule == "all_treated":
            keep, reason = True, ""
        elif rule == DEFAULT_ANALYSIS_RULE:
            if not r.baseline_ok:
                keep, reason = False, "no baseline assessment"
            elif _has_adequate_assessment(r) or _discontinued_before_assessment(r):
                keep, reason = True, ""
            else:
                keep, reason = False, "no adequate post-baseline assessment or discontinuation"
        else:
            raise DomainError(f"unknown analysis-set rule {rule!r}")
        if keep:
            outcomes.append(derive_outcome(r, smap, spec))
        else:
            exclusions.append((r.patient_id, reason))
    return AnalysisSet(tuple(outcomes), tuple(exclusions))


# -- strategy comparison ----------------------------------------------------


@dataclass(frozen=True)
class StrategyColumn:
    label: str
    question: str
    outcomes: tuple[DerivedOutcome, ...]
    per_dose_n: tuple[int, ...]
    mean_utilities: tuple[float, ...]
    obd: Optional[int]

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "question": self.question,
            "per_dose_n": list(self.per_dose_n),
            "mean_utilities": list(self.mean_utilities),
            "obd": self.obd,
            "outcomes": [o.to_dict() for o in self.outcomes],
        }


@dataclass(frozen=True)
class StrategyComparison:
    columns: tuple[StrategyColumn, ...]

    def to_dict(self) -> dict:
        return {"columns": [c.to_dict() for c in self.columns]}


def map_label(smap: StrategyMap) -> str:
    strategies = {e.strategy for e in smap.entries.values()}
    if len(strategies) == 1:
        return next(iter(strategies))
    return "mixed"


def compare_strategies(
    records: Sequence[PatientRecord],
    maps: Sequence[StrategyMap],
    spec: UtilitySpec,
    config: DesignConfig,
    n_doses: Optional[int] = None,
) -> StrategyComparison:
    """Derive every record under each map and line the analyses up.

    Each column reports per-dose counts, mean utilities and the resulting
    selected dose, keyed by the estimand question its strategy answers.
    """
    from .decisions import snapshot

    if not maps:
        raise DomainError("need at least one strategy map to compare")
    if n_doses is None:
        n_doses = max((r.dose_index for r in records), default=1)
    columns = []
    for smap in maps:
        outcomes = tuple(derive_outcome(r, smap, spec) for r in records)
        states = states_from_outcomes(outcomes, n_doses, spec.K)
        snap = snapshot(states, spec, config)
        label = map_label(smap)
        columns.append(
            StrategyColumn(
                label=label,
                question=STRATEGY_QUESTIONS.get(label, "custom event handling"),
                outcomes=outcomes,
                per_dose_n=tuple(st.n for st in states),
                mean_utilities=tuple(s.mean_utility for s in snap.summaries),
                obd=snap.obd,
            )
        )
    return StrategyComparison(tuple(columns))


# -- ingestion --------------------------------------------------------------


def load_records_jsonl(path: str | Path) -> list[PatientRecord]:
    """One JSON record per line."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(PatientRecord.from_dict(json.loads(line)))
    return records


def load_records_csv(path: str | Path) -> list[PatientRecord]:
    """Long-format CSV: one event per row.

    Columns: patient_id, dose_index, first_dose_day, baseline_ok,
    stratum_label, day, kind, response_grade, grade, dlt, ice_type,
    new_dose_index, reason. Record-level columns must repeat identically
    across a patient's rows; a patient with an empty ``kind`` contributes a
    record with no events.
    """
    by_patient: dict[str, dict] = {}
    order: list[str] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            pid = row["patient_id"]
            if pid not in by_patient:
                by_patient[pid] = {
                    "patient_id": pid,
                    "dose_index": int(row["dose_index"]),
                    "first_dose_day": int(row.get("first_dose_day") or 0),
                    "baseline_ok": (row.get("baseline_ok") or "true").lower() != "false",
                    "stratum_label": row.get("stratum_label") or None,
                    "events": [],
                }
                order.append(pid)
            kind = (row.get("kind") or "").strip()
            if not kind:
                continue
            by_patient[pid]["events"].append(
                {
                    "day": int(row["day"]),
                    "kind": kind,
                    "response_grade": row.get("response_grade") or None,
                    "grade": int(row["grade"]) if row.get("grade") else None,
                    "dlt": (row.get("dlt") or "").lower() in ("1", "true", "yes"),
                    "ice_type": row.get("ice_type") or None,
                    "new_dose_index": int(row["new_dose_index"]) if row.get("new_dose_index") else None,
                    "reason": row.get("reason") or None,
                }
            )
    for rec in by_patient.values():
        rec["events"].sort(key=lambda e: e["day"])
    return [PatientRecord.from_dict(by_patient[pid]) for pid in order]


def load_strategy_map(path: str | Path) -> StrategyMap:
    with open(path, "r", encoding="utf-8") as fh:
        return StrategyMap.from_dict(json.load(fh))
