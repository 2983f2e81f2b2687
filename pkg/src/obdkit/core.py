"""Shared domain types: outcome categories, utility scores, dose bookkeeping.

All types are immutable values; operations on them are pure functions, so
instances can be shared freely across threads and processes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

SCHEMA_VERSION = "v1"

#: Sentinel used in serialized form for outcomes without a derivable category.
MISSING = "MISSING"


class UnknownOutcomePair(ValueError):
    """No outcome category carries the requested (efficacy, toxicity) flags."""


class DoseMismatch(ValueError):
    """Outcome recorded against a state for a different dose."""


class DimensionMismatch(ValueError):
    """Category counts do not line up between two objects."""


class NonPositivePrior(ValueError):
    """Dirichlet prior components must all be strictly positive."""


class DomainError(ValueError):
    """Numeric argument outside the supported domain."""


class UnanchoredUtility(ValueError):
    """Utility scores must span exactly [0, 100] before standardization."""


class EmptyDose(ValueError):
    """Operation requires at least one evaluable outcome at the dose."""


class UnmappedIce(ValueError):
    """An intercurrent event type has no handling strategy in the map."""


class MissingStratumLabel(ValueError):
    """Principal-stratum handling requested but stratum labels are absent."""


class NoTestedDoses(ValueError):
    """At least one dose with evaluable data is required."""


class EmptyAdmissibleSet(ValueError):
    """Randomization weights need a non-empty admissible set."""


class InfeasibleAssociation(ValueError):
    """Requested marginals/association do not form a valid joint table."""


@dataclass(frozen=True)
class OutcomeCategory:
    """One joint outcome level: its binary flags and elicited score."""

    efficacy: int
    toxicity: int
    psi: float

    def to_dict(self) -> dict:
        return {"efficacy_flag": self.efficacy, "toxicity_flag": self.toxicity, "psi": self.psi}

    @classmethod
    def from_dict(cls, d: dict) -> "OutcomeCategory":
        return cls(int(d["efficacy_flag"]), int(d["toxicity_flag"]), float(d["psi"]))


@dataclass(frozen=True)
class UtilitySpec:
    """Ordered outcome categories with desirability scores anchored to [0, 100].

    Category indices are 1-based throughout; index 1 is the least favorable
    outcome by convention. The canonical 4-level layout pairs binary efficacy
    and toxicity flags as (0,1), (0,0), (1,1), (1,0).
    """

    categories: tuple[OutcomeCategory, ...]

    @property
    def K(self) -> int:
        return len(self.categories)

    @property
    def psi(self) -> tuple[float, ...]:
        return tuple(c.psi for c in self.categories)

    @property
    def efficacy_flags(self) -> tuple[int, ...]:
        return tuple(c.efficacy for c in self.categories)

    @property
    def toxicity_flags(self) -> tuple[int, ...]:
        return tuple(c.toxicity for c in self.categories)

    @classmethod
    def canonical(cls, psi2: float = 10.0, psi3: float = 60.0) -> "UtilitySpec":
        """Standard binary-by-binary spec with the two anchors fixed at 0 and 100."""
        return cls(
            (
                OutcomeCategory(0, 1, 0.0),
                OutcomeCategory(0, 0, float(psi2)),
                OutcomeCategory(1, 1, float(psi3)),
                OutcomeCategory(1, 0, 100.0),
            )
        )

    def with_scores(self, psi: Sequence[float]) -> "UtilitySpec":
        if len(psi) != self.K:
            raise DimensionMismatch(f"expected {self.K} scores, got {len(psi)}")
        return UtilitySpec(
            tuple(replace(c, psi=float(p)) for c, p in zip(self.categories, psi))
        )

    def normalized(self) -> "UtilitySpec":
        """Affine rescale of the scores so min maps to 0 and max to 100.

        Argmax decisions are invariant under this map; only the anchoring
        changes. Raises DomainError when all scores are equal.
        """
        lo, hi = min(self.psi), max(self.psi)
        if hi == lo:
            raise DomainError("cannot rescale a constant score vector")
        return self.with_scores([(p - lo) / (hi - lo) * 100.0 for p in self.psi])

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "K": self.K,
            "categories": [c.to_dict() for c in self.categories],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UtilitySpec":
        _check_schema_version(d)
        return cls(tuple(OutcomeCategory.from_dict(c) for c in d["categories"]))


def classify_outcome(e: int, t: int, spec: UtilitySpec) -> int:
    """Return the 1-based category whose flags match (e, t)."""
    for idx, c in enumerate(spec.categories, start=1):
        if c.efficacy == e and c.toxicity == t:
            return idx
    raise UnknownOutcomePair(f"no category with flags (e={e}, t={t})")


def validate_utility_spec(spec: UtilitySpec) -> list[str]:
    """Check every structural invariant; returns the list of violations.

    An empty list means the utility spec is valid. Anchoring requires min score 0 and
    max score 100, with (e=1, t=0) scoring the maximum and (e=0, t=1) the
    minimum when those flag pairs are present.
    """
    issues: list[str] = []
    if spec.K < 2:
        issues.append(f"K must be >= 2, got {spec.K}")
        return issues
    scores = spec.psi
    if min(scores) != 0.0:
        issues.append(f"minimum score must be 0 (anchor), got {min(scores)}")
    if max(scores) != 100.0:
        issues.append(f"maximum score must be 100 (anchor), got {max(scores)}")
    pairs = [(c.efficacy, c.toxicity) for c in spec.categories]
    if len(set(pairs)) != len(pairs):
        issues.append("duplicate (efficacy, toxicity) flag pair")
    for c in spec.categories:
        if c.efficacy not in (0, 1) or c.toxicity not in (0, 1):
            issues.append(f"flags must be binary, got ({c.efficacy}, {c.toxicity})")
        if not (0.0 <= c.psi <= 100.0):
            issues.append(f"score {c.psi} outside [0, 100]")
    by_pair = {(c.efficacy, c.toxicity): c.psi for c in spec.categories}
    if (1, 0) in by_pair and by_pair[(1, 0)] != max(scores):
        issues.append("score for (e=1, t=0) must be the maximum")
    if (0, 1) in by_pair and by_pair[(0, 1)] != min(scores):
        issues.append("score for (e=0, t=1) must be the minimum")
    return issues


@dataclass(frozen=True)
class DoseLevel:
    index: int
    label: str
    amount: float
    unit: str = "mg"

    def to_dict(self) -> dict:
        return {"index": self.index, "label": self.label, "amount": self.amount, "unit": self.unit}

    @classmethod
    def from_dict(cls, d: dict) -> "DoseLevel":
        return cls(int(d["index"]), str(d["label"]), float(d["amount"]), str(d.get("unit", "mg")))


@dataclass(frozen=True)
class DoseGrid:
    """Ordered dose levels; amounts must strictly increase with index."""

    doses: tuple[DoseLevel, ...]

    def __post_init__(self):
        if not self.doses:
            raise DomainError("dose grid needs at least one level")
        for i, d in enumerate(self.doses, start=1):
            if d.index != i:
                raise DomainError(f"dose indices must run 1..J, got {d.index} at position {i}")
        amounts = [d.amount for d in self.doses]
        if any(b <= a for a, b in zip(amounts, amounts[1:])):
            raise DomainError("dose amounts must be strictly increasing")

    @property
    def J(self) -> int:
        return len(self.doses)

    @classmethod
    def from_amounts(cls, amounts: Sequence[float], unit: str = "mg") -> "DoseGrid":
        return cls(
            tuple(
                DoseLevel(i, f"{a:g} {unit}", float(a), unit)
                for i, a in enumerate(amounts, start=1)
            )
        )

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "doses": [d.to_dict() for d in self.doses]}

    @classmethod
    def from_dict(cls, d: dict) -> "DoseGrid":
        _check_schema_version(d)
        return cls(tuple(DoseLevel.from_dict(x) for x in d["doses"]))


@dataclass(frozen=True)
class DoseState:
    """Per-dose outcome tallies.

    ``counts[k-1]`` holds the number of evaluable patients with category k.
    ``n_enrolled`` also counts patients whose outcome is pending or not
    evaluable, so sample-size caps act on enrollment rather than evaluability.
    """

    dose_index: int
    counts: tuple[int, ...]
    n_enrolled: int

    def __post_init__(self):
        if any(c < 0 for c in self.counts):
            raise DomainError("counts must be non-negative")
        if self.n_enrolled < sum(self.counts):
            raise DomainError("n_enrolled cannot be below the evaluable count")

    @property
    def n(self) -> int:
        """Number of evaluable outcomes at this dose."""
        return sum(self.counts)

    def n_flagged(self, flags: Sequence[int]) -> int:
        return sum(c for c, f in zip(self.counts, flags) if f)

    @classmethod
    def empty(cls, dose_index: int, K: int) -> "DoseState":
        return cls(dose_index, (0,) * K, 0)

    def to_dict(self) -> dict:
        return {"dose_index": self.dose_index, "counts": list(self.counts), "n_enrolled": self.n_enrolled}

    @classmethod
    def from_dict(cls, d: dict) -> "DoseState":
        return cls(int(d["dose_index"]), tuple(int(c) for c in d["counts"]), int(d["n_enrolled"]))


@dataclass(frozen=True)
class TitrationRule:
    """Single-patient escalation until an AE of trigger_grade or the trigger dose."""

    trigger_grade: int = 2
    trigger_dose_index: int = 5

    def to_dict(self) -> dict:
        return {"trigger_grade": self.trigger_grade, "trigger_dose_index": self.trigger_dose_index}

    @classmethod
    def from_dict(cls, d: dict) -> "TitrationRule":
        return cls(int(d["trigger_grade"]), int(d["trigger_dose_index"]))


ASSIGNMENT_MODES = ("deterministic", "adaptive_randomization", "equal_randomization")


@dataclass(frozen=True)
class DesignConfig:
    """All tuning constants of the design.

    ``lambda_e``/``lambda_d`` may be left unset, in which case they are
    derived from ``target_phi`` with the usual 0.6/1.4 interval convention.
    ``futility_tail`` selects the direction of the futility gate; "lower"
    (the standard reading, probability of efficacy below the limit) is the
    default, "upper" is kept only for fidelity experiments.
    """

    prior_alpha: tuple[float, ...] = (0.25, 0.25, 0.25, 0.25)
    target_phi: float = 0.3
    phi_t: float = 0.35
    phi_e: float = 0.25
    delta_t: float = 0.95
    delta_e: float = 0.90
    lambda_e: Optional[float] = None
    lambda_d: Optional[float] = None
    cohort_size: int = 3
    max_n: int = 27
    per_dose_cap: int = 12
    assignment_mode: str = "deterministic"
    accelerated_titration: Optional[TitrationRule] = None
    futility_tail: str = "lower"

    def validate(self) -> list[str]:
        issues: list[str] = []
        if sum(self.prior_alpha) <= 0 or any(a <= 0 for a in self.prior_alpha):
            issues.append("prior_alpha components must be positive")
        if not (0 < self.target_phi < 1):
            issues.append("target_phi must lie in (0, 1)")
        for name in ("phi_t", "phi_e"):
            v = getattr(self, name)
            if not (0 <= v <= 1):
                issues.append(f"{name} must lie in [0, 1]")
        for name in ("delta_t", "delta_e"):
            v = getattr(self, name)
            if not (0 < v < 1):
                issues.append(f"{name} must lie in (0, 1)")
        if self.phi_t < self.target_phi:
            issues.append("phi_t must be at least target_phi")
        if self.lambda_e is not None and self.lambda_d is not None:
            if not (self.lambda_e < self.target_phi < self.lambda_d):
                issues.append("need lambda_e < target_phi < lambda_d")
        if not (1 <= self.cohort_size <= self.per_dose_cap <= self.max_n):
            issues.append("need cohort_size <= per_dose_cap <= max_n")
        if self.assignment_mode not in ASSIGNMENT_MODES:
            issues.append(f"assignment_mode must be one of {ASSIGNMENT_MODES}")
        if self.futility_tail not in ("lower", "upper"):
            issues.append("futility_tail must be 'lower' or 'upper'")
        return issues

    def to_dict(self) -> dict:
        d = {
            "schema_version": SCHEMA_VERSION,
            "prior_alpha": list(self.prior_alpha),
            "target_phi": self.target_phi,
            "phi_t": self.phi_t,
            "phi_e": self.phi_e,
            "delta_t": self.delta_t,
            "delta_e": self.delta_e,
            "lambda_e": self.lambda_e,
            "lambda_d": self.lambda_d,
            "cohort_size": self.cohort_size,
            "max_n": self.max_n,
            "per_dose_cap": self.per_dose_cap,
            "assignment_mode": self.assignment_mode,
            "accelerated_titration": (
                self.accelerated_titration.to_dict() if self.accelerated_titration else None
            ),
            "futility_tail": self.futility_tail,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DesignConfig":
        _check_schema_version(d)
        tr = d.get("accelerated_titration")
        cfg = cls(
            prior_alpha=tuple(float(a) for a in d.get("prior_alpha", (0.25,) * 4)),
            target_phi=float(d.get("target_phi", 0.3)),
            phi_t=float(d.get("phi_t", 0.35)),
            phi_e=float(d.get("phi_e", 0.25)),
            delta_t=float(d.get("delta_t", 0.95)),
            delta_e=float(d.get("delta_e", 0.90)),
            lambda_e=None if d.get("lambda_e") is None else float(d["lambda_e"]),
            lambda_d=None if d.get("lambda_d") is None else float(d["lambda_d"]),
            cohort_size=int(d.get("cohort_size", 3)),
            max_n=int(d.get("max_n", 27)),
            per_dose_cap=int(d.get("per_dose_cap", 12)),
            assignment_mode=str(d.get("assignment_mode", "deterministic")),
            accelerated_titration=TitrationRule.from_dict(tr) if tr else None,
            futility_tail=str(d.get("futility_tail", "lower")),
        )
        issues = cfg.validate()
        if issues:
            raise DomainError("; ".join(issues))
        return cfg


@dataclass(frozen=True)
class TraceEntry:
    """One step of an intercurrent-event derivation, for audit trails."""

    ice_type: str
    strategy: str
    effect: str

    def to_dict(self) -> dict:
        return {"ice_type": self.ice_type, "strategy": self.strategy, "effect": self.effect}

    @classmethod
    def from_dict(cls, d: dict) -> "TraceEntry":
        return cls(d["ice_type"], d["strategy"], d["effect"])


@dataclass(frozen=True)
class DerivedOutcome:
    """A patient's outcome after intercurrent-event handling.

    ``category`` is None when no category could be derived (the patient is
    then either unevaluable or flagged for sensitivity analysis). The trace
    explains what each intercurrent event did to the derivation.
    """

    patient_id: str
    dose_index: int
    category: Optional[int]
    evaluable: bool
    strategy_trace: tuple[TraceEntry, ...] = ()
    sensitivity_flag: bool = False

    def to_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "dose_index": self.dose_index,
            "category": MISSING if self.category is None else self.category,
            "evaluable": self.evaluable,
            "strategy_trace": [t.to_dict() for t in self.strategy_trace],
            "sensitivity_flag": self.sensitivity_flag,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DerivedOutcome":
        cat = d["category"]
        return cls(
            patient_id=str(d["patient_id"]),
            dose_index=int(d["dose_index"]),
            category=None if cat in (None, MISSING) else int(cat),
            evaluable=bool(d["evaluable"]),
            strategy_trace=tuple(TraceEntry.from_dict(t) for t in d.get("strategy_trace", [])),
            sensitivity_flag=bool(d.get("sensitivity_flag", False)),
        )


def record_outcomes(state: DoseState, outcomes: Iterable[DerivedOutcome]) -> DoseState:
    """Fold derived outcomes into a dose state; pure, order-independent.

    Every outcome increments enrollment; only evaluable outcomes with a
    category increment the per-category counts.
    """
    counts = list(state.counts)
    enrolled = state.n_enrolled
    for o in outcomes:
        if o.dose_index != state.dose_index:
            raise DoseMismatch(
                f"outcome for dose {o.dose_index} recorded against dose {state.dose_index}"
            )
        enrolled += 1
        if o.evaluable and o.category is not None:
            if not (1 <= o.category <= len(counts)):
                raise DimensionMismatch(f"category {o.category} outside 1..{len(counts)}")
            counts[o.category - 1] += 1
    return DoseState(state.dose_index, tuple(counts), enrolled)


def states_from_outcomes(outcomes: Iterable[DerivedOutcome], n_doses: int, K: int) -> list[DoseState]:
    """Group outcomes by dose into fresh states for doses 1..n_doses."""
    buckets: dict[int, list[DerivedOutcome]] = {j: [] for j in range(1, n_doses + 1)}
    for o in outcomes:
        if o.dose_index not in buckets:
            raise DoseMismatch(f"outcome dose {o.dose_index} outside grid 1..{n_doses}")
        buckets[o.dose_index].append(o)
    return [record_outcomes(DoseState.empty(j, K), buckets[j]) for j in range(1, n_doses + 1)]


def _check_schema_version(d: dict) -> None:
    v = d.get("schema_version")
    if v is not None and v != SCHEMA_VERSION:
        raise DomainError(f"unsupported schema version {v!r}, expected {SCHEMA_VERSION!r}")
