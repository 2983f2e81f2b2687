"""Dose-level decision rules: interval boundaries, admissibility, assignment.

The toxicity interval boundaries come from the optimal-interval construction
(likelihood-ratio comparison of the target rate against under- and
over-dosing rates). Admissibility combines a toxicity gate and a futility
gate on posterior tail probabilities. Dose assignment composes the interval
rule with a utility argmax over safety-permitted neighbors, and the final
selection caps the utility argmax at the isotonically estimated maximum
tolerated dose.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .core import (
    DesignConfig,
    DomainError,
    DoseState,
    EmptyAdmissibleSet,
    NoTestedDoses,
    UtilitySpec,
)
from .posterior import PosteriorSummary, dirichlet_posterior, mean_utility, qbb_posterior, summarize

ESCALATE = "escalate"
STAY = "stay"
DE_ESCALATE = "de_escalate"
ELIMINATE_AND_DE_ESCALATE = "eliminate_and_de_escalate"
TERMINATE = "terminate"

# termination reasons, used verbatim in Decision rationales so callers can
# classify safety stops without string heuristics
TERM_MAX_N = "maximum sample size reached"
TERM_LOWEST_ELIMINATED = "lowest dose eliminated for toxicity"
TERM_NO_CANDIDATE = "no dose available within the safety-gated neighborhood"
TERM_NO_ADMISSIBLE = "no admissible dose among the safety-gated candidates"
TERM_DOSE_CAP = "assigned dose has reached its per-dose cap"
SAFETY_TERMINATIONS = frozenset({TERM_LOWEST_ELIMINATED, TERM_NO_ADMISSIBLE})


def boin_boundaries(
    target_phi: float, phi1: Optional[float] = None, phi2: Optional[float] = None
) -> tuple[float, float]:
    """Escalation/de-escalation boundaries for the interval design.

    phi1 and phi2 are the highest rate treated as sub-therapeutic and the
    lowest rate treated as overly toxic; they default to 0.6 and 1.4 times
    the target. The boundaries are the likelihood-ratio crossing points:

        lambda_e = log((1-phi1)/(1-phi)) / log(phi (1-phi1) / (phi1 (1-phi)))
        lambda_d = log((1-phi)/(1-phi2)) / log(phi2 (1-phi) / (phi (1-phi2)))
    """
    phi = target_phi
    if not (0 < phi < 1):
        raise DomainError(f"target rate must lie in (0, 1), got {phi}")
    phi1 = 0.6 * phi if phi1 is None else phi1
    phi2 = 1.4 * phi if phi2 is None else phi2
    if not (0 < phi1 < phi < phi2 < 1):
        raise DomainError(f"need 0 < phi1 < phi < phi2 < 1, got ({phi1}, {phi}, {phi2})")
    lam_e = math.log((1 - phi1) / (1 - phi)) / math.log(phi * (1 - phi1) / (phi1 * (1 - phi)))
    lam_d = math.log((1 - phi) / (1 - phi2)) / math.log(phi2 * (1 - phi) / (phi * (1 - phi2)))
    return lam_e, lam_d


def effective_boundaries(config: DesignConfig) -> tuple[float, float]:
    """Boundaries from the config, derived from target_phi when unset."""
    if config.lambda_e is not None and config.lambda_d is not None:
        return config.lambda_e, config.lambda_d
    return boin_boundaries(config.target_phi)


def resolve_config(config: DesignConfig) -> DesignConfig:
    """Copy of the config with boundaries filled in, for pinned outputs."""
    lam_e, lam_d = effective_boundaries(config)
    return replace(config, lambda_e=lam_e, lambda_d=lam_d)


def boin_toxicity_decision(n_tox: int, n: int, lambda_e: float, lambda_d: float) -> str:
    """Interval rule on the observed toxicity rate.

    At or below lambda_e escalates, at or above lambda_d de-escalates, and
    strictly between the boundaries stays at the current dose.
    """
    if n < 1 or not (0 <= n_tox <= n):
        raise DomainError(f"need 0 <= n_tox <= n with n >= 1, got n_tox={n_tox}, n={n}")
    rate = n_tox / n
    if rate <= lambda_e:
        return ESCALATE
    if rate >= lambda_d:
        return DE_ESCALATE
    return STAY


@dataclass(frozen=True)
class DoseFlags:
    dose_index: int
    toxic: bool
    futile: bool
    untested: bool

    @property
    def admissible(self) -> bool:
        return not (self.toxic or self.futile or self.untested)

    def to_dict(self) -> dict:
        return {
            "dose_index": self.dose_index,
            "toxic": self.toxic,
            "futile": self.futile,
            "untested": self.untested,
            "admissible": self.admissible,
        }


@dataclass(frozen=True)
class AdmissibleSet:
    flags: tuple[DoseFlags, ...]

    @property
    def dose_indices(self) -> tuple[int, ...]:
        return tuple(f.dose_index for f in self.flags if f.admissible)

    def flag(self, dose_index: int) -> DoseFlags:
        for f in self.flags:
            if f.dose_index == dose_index:
                return f
        raise DomainError(f"dose {dose_index} not covered by the admissibility flags")

    def to_dict(self) -> dict:
        return {"dose_indices": list(self.dose_indices), "flags": [f.to_dict() for f in self.flags]}


def admissible_set(summaries: Sequence[PosteriorSummary], config: DesignConfig) -> AdmissibleSet:
    """Apply the toxicity and futility gates to each summarized dose.

    A dose is toxic when the posterior probability of its toxicity rate
    exceeding phi_t is above delta_t, and futile when the probability of its
    efficacy rate falling short of phi_e is above delta_e. Untested doses
    (no evaluable outcomes) are flagged and kept out of the admissible set;
    they stay reachable through the escalation gate only.
    """
    flags = []
    for s in summaries:
        toxic = s.prob_toxic > config.delta_t
        if config.futility_tail == "lower":
            futile = s.prob_futile > config.delta_e
        else:
            # inverted-gate variant, retained for fidelity experiments only
            futile = (1.0 - s.prob_futile) > config.delta_e
        flags.append(DoseFlags(s.dose_index, toxic=toxic, futile=futile, untested=s.n == 0))
    return AdmissibleSet(tuple(flags))


def isotonic_tox_estimates(tested: Sequence[tuple[int, int]]) -> list[float]:
    """Monotone (nondecreasing) weighted least-squares fit of toxicity rates.

    Pool-adjacent-violators with the per-dose sample sizes as weights.
    Input is one (n_tox, n) pair per tested dose, in dose order.
    """
    if not tested:
        raise NoTestedDoses("no tested doses to estimate")
    vals: list[float] = []
    wts: list[float] = []
    cnts: list[int] = []
    for n_tox, n in tested:
        if n < 1 or not (0 <= n_tox <= n):
            raise DomainError(f"need 0 <= n_tox <= n with n >= 1, got ({n_tox}, {n})")
        vals.append(n_tox / n)
        wts.append(float(n))
        cnts.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            merged = (vals[-2] * wts[-2] + vals[-1] * wts[-1]) / (wts[-2] + wts[-1])
            wts[-2] += wts[-1]
            cnts[-2] += cnts[-1]
            vals.pop()
            wts.pop()
            cnts.pop()
            vals[-1] = merged
    out: list[float] = []
    for v, c in zip(vals, cnts):
        out.extend([v] * c)
    return out


def estimate_mtd(tested: Sequence[tuple[int, int]], phi_t: float) -> int:
    """Dose (1-based position) whose isotonic estimate is closest to phi_t.

    Distance ties break toward the higher dose when the tied estimate sits
    at or below phi_t and toward the lower dose when it exceeds phi_t.
    """
    iso = isotonic_tox_estimates(tested)
    dists = [abs(v - phi_t) for v in iso]
    best = min(dists)
    tied = [i for i, d in enumerate(dists) if d == best]
    at_or_below = [i for i in tied if iso[i] <= phi_t]
    pick = max(at_or_below) if at_or_below else min(tied)
    return pick + 1


def select_obd(
    summaries: Sequence[PosteriorSummary],
    tested: Sequence[tuple[int, int]],
    config: DesignConfig,
) -> Optional[int]:
    """Admissible tested dose with the highest mean utility, capped at the MTD.

    Returns None when no tested dose at or below the MTD is admissible,
    which is the trial-terminated-without-selection case.
    """
    adm = admissible_set(summaries, config)
    if not tested:
        return None
    mtd = estimate_mtd(tested, config.phi_t)
    candidates = [
        s for s in summaries if s.dose_index in adm.dose_indices and s.dose_index <= mtd
    ]
    if not candidates:
        return None
    best = max(c.mean_utility for c in candidates)
    return min(c.dose_index for c in candidates if c.mean_utility == best)


@dataclass(frozen=True)
class RandomizationWeights:
    dose_indices: tuple[int, ...]
    weights: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"dose_indices": list(self.dose_indices), "weights": list(self.weights)}


def randomization_weights(
    summaries: Sequence[PosteriorSummary], admissible: AdmissibleSet
) -> RandomizationWeights:
    """Assignment weights proportional to mean utility over the admissible set.

    Falls back to uniform when every admissible utility is zero.
    """
    by_dose = {s.dose_index: s for s in summaries}
    indices = tuple(j for j in admissible.dose_indices if j in by_dose)
    if not indices:
        raise EmptyAdmissibleSet("no admissible dose with a posterior summary")
    utils = [by_dose[j].mean_utility for j in indices]
    total = sum(utils)
    if total == 0.0:
        w = 1.0 / len(indices)
        return RandomizationWeights(indices, (w,) * len(indices))
    return RandomizationWeights(indices, tuple(u / total for u in utils))


@dataclass(frozen=True)
class Decision:
    """A dosing decision plus the rule trace that produced it."""

    kind: str
    next_dose: Optional[int]
    rationale: tuple[str, ...]
    cohort_size: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "next_dose": self.next_dose,
            "rationale": list(self.rationale),
            "cohort_size": self.cohort_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Decision":
        return cls(
            kind=d["kind"],
            next_dose=d.get("next_dose"),
            rationale=tuple(d.get("rationale", ())),
            cohort_size=d.get("cohort_size"),
        )


def _toxic_eliminated(summaries: Sequence[PosteriorSummary], config: DesignConfig) -> set[int]:
    """Doses failing the toxicity gate, cascaded to every higher dose."""
    eliminated: set[int] = set()
    max_dose = max((s.dose_index for s in summaries), default=0)
    for s in summaries:
        if s.prob_toxic > config.delta_t:
            eliminated.update(range(s.dose_index, max_dose + 1))
    return eliminated


def next_dose(
    current: int,
    states: Sequence[DoseState],
    summaries: Sequence[PosteriorSummary],
    config: DesignConfig,
    rng: Optional[np.random.Generator] = None,
    titration_active: bool = False,
) -> Decision:
    """Assign the next cohort.

    Composition, in order: stop at the sample cap; eliminate doses failing
    the toxicity gate together with everything above them (terminating the
    trial when that removes the lowest dose); run the interval rule at the
    current dose to fix which neighbors are reachable; drop capped doses;
    take an untested next-higher dose directly when escalating (it is never
    skipped, and never reachable through a prior-only argmax); then let the
    assignment mode pick among the remaining admissible neighbors by
    posterior mean utility. While accelerated titration is active the whole
    ladder collapses to escalate-on-no-toxicity with single-patient cohorts.
    """
    by_dose = {s.dose_index: s for s in summaries}
    state_by_dose = {st.dose_index: st for st in states}
    n_doses = max(state_by_dose)
    lam_e, lam_d = effective_boundaries(config)
    rationale: list[str] = []
    cohort = 1 if titration_active else config.cohort_size

    total_enrolled = sum(st.n_enrolled for st in states)
    if total_enrolled >= config.max_n:
        return Decision(TERMINATE, None, (TERM_MAX_N,))

    eliminated = _toxic_eliminated(summaries, config)
    if eliminated:
        rationale.append(
            "toxicity gate eliminates doses " + ", ".join(str(j) for j in sorted(eliminated))
        )
    if 1 in eliminated:
        rationale.append(TERM_LOWEST_ELIMINATED)
        return Decision(TERMINATE, None, tuple(rationale))

    cur = by_dose[current]
    if cur.n == 0:
        rationale.append(f"no evaluable outcomes at dose {current} yet; stay to collect")
        return Decision(STAY, current, tuple(rationale), cohort)

    if titration_active and cur.n_tox == 0:
        target = current + 1
        if (
            target <= n_doses
            and target not in eliminated
            and state_by_dose[target].n_enrolled < config.per_dose_cap
        ):
            rationale.append("titration: no toxicity observed, escalate with a single patient")
            return Decision(ESCALATE, target, tuple(rationale), 1)
        rationale.append("titration escalation blocked; falling back to interval rules")
        cohort = config.cohort_size

    gate = boin_toxicity_decision(cur.n_tox, cur.n, lam_e, lam_d)
    rationale.append(
        f"interval rule at dose {current}: {cur.n_tox}/{cur.n} toxicities, {gate}"
    )

    if gate == ESCALATE:
        ladder = [current + 1, current, current - 1]
    elif gate == STAY:
        ladder = [current, current - 1]
    elif current > 1:
        ladder = [current - 1]
    else:
        # cannot de-escalate below the lowest dose; staying is the interval
        # behavior there, and the elimination gate handles true overdosing
        ladder = [current]

    candidates = [j for j in ladder if 1 <= j <= n_doses and j not in eliminated]
    if not candidates:
        rationale.append(TERM_NO_CANDIDATE)
        return Decision(TERMINATE, None, tuple(rationale))

    if (
        gate == ESCALATE
        and current + 1 in candidates
        and by_dose[current + 1].n == 0
        and state_by_dose[current + 1].n_enrolled < config.per_dose_cap
    ):
        chosen = current + 1
        rationale.append(f"escalate to untested dose {chosen}")
    else:
        gated = [by_dose[j] for j in candidates]
        adm = admissible_set(gated, config)
        open_doses = [j for j in candidates if j in adm.dose_indices]
        if not open_doses:
            rationale.append(TERM_NO_ADMISSIBLE)
            return Decision(TERMINATE, None, tuple(rationale))
        mode = config.assignment_mode
        if mode == "deterministic":
            best = max(by_dose[j].mean_utility for j in open_doses)
            chosen = min(j for j in open_doses if by_dose[j].mean_utility == best)
            rationale.append(f"highest posterior mean utility among candidates: dose {chosen}")
        elif mode == "adaptive_randomization":
            if rng is None:
                raise DomainError("adaptive randomization needs an explicit rng")
            w = randomization_weights(gated, adm)
            chosen = int(w.dose_indices[rng.choice(len(w.dose_indices), p=np.asarray(w.weights))])
            rationale.append(f"adaptive randomization over candidates {list(w.dose_indices)}")
        elif mode == "equal_randomization":
            if rng is None:
                raise DomainError("equal randomization needs an explicit rng")
            chosen = int(sorted(open_doses)[rng.choice(len(open_doses))])
            rationale.append(f"equal randomization over candidates {sorted(open_doses)}")
        else:
            raise DomainError(f"unknown assignment mode {mode!r}")

    # sample-cap stop: assigning a full dose means the design is done there
    if state_by_dose[chosen].n_enrolled >= config.per_dose_cap:
        rationale.append(TERM_DOSE_CAP)
        return Decision(TERMINATE, None, tuple(rationale))

    if chosen > current:
        kind = ESCALATE
    elif chosen == current:
        kind = STAY
    elif current in eliminated:
        kind = ELIMINATE_AND_DE_ESCALATE
    else:
        kind = DE_ESCALATE
    return Decision(kind, chosen, tuple(rationale), cohort)


@dataclass(frozen=True)
class Snapshot:
    """Materialized analysis of a set of dose states: everything the
    selection and reporting paths need, computed once."""

    summaries: tuple[PosteriorSummary, ...]
    admissible: AdmissibleSet
    tested: tuple[tuple[int, int], ...]
    obd: Optional[int]
    mtd: Optional[int]

    def to_dict(self) -> dict:
        return {
            "summaries": [s.to_dict() for s in self.summaries],
            "admissible": self.admissible.to_dict(),
            "obd": self.obd,
            "mtd": self.mtd,
        }


def snapshot(states: Sequence[DoseState], spec: UtilitySpec, config: DesignConfig) -> Snapshot:
    """Summaries, admissibility, MTD and selected dose for the given states.

    Tested doses are the contiguous leading run of doses with evaluable
    outcomes; the MTD estimate and the selection cap run over that set.
    """
    summaries = tuple(summarize(st, spec, config) for st in states)
    tested: list[tuple[int, int]] = []
    for s in summaries:
        if s.n == 0:
            break
        tested.append((s.n_tox, s.n))
    adm = admissible_set(summaries, config)
    if tested:
        mtd = estimate_mtd(tested, config.phi_t)
        obd = select_obd(summaries, tested, config)
    else:
        mtd = None
        obd = None
    return Snapshot(summaries, adm, tuple(tested), obd, mtd)


DECISION_TABLE_COLUMNS = (
    "n",
    "counts",
    "n_tox",
    "n_eff",
    "interval_decision",
    "toxic",
    "futile",
    "admissible",
    "mean_utility",
    "qbb_mean_x100",
    "prob_toxic",
    "prob_futile",
)


@dataclass(frozen=True)
class DecisionTable:
    """Pre-tabulated per-dose decisions for protocol appendices.

    Rows cover every outcome-count vector with at most ``max_per_dose``
    evaluable patients, in deterministic order (by n, then lexicographically
    by counts). All real-valued cells are rendered with four fixed decimals
    so repeated generation is byte-identical.
    """

    columns: tuple[str, ...]
    rows: tuple[tuple, ...]

    def to_json(self) -> str:
        payload = {"columns": list(self.columns), "rows": [list(r) for r in self.rows]}
        return json.dumps(payload, separators=(",", ":"), sort_keys=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for r in self.rows:
            writer.writerow(r)
        return buf.getvalue()


def _compositions(total: int, parts: int):
    """All count vectors of the given length summing to total, lexicographic."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def decision_table(config: DesignConfig, spec: UtilitySpec, max_per_dose: int) -> DecisionTable:
    """Tabulate the per-dose decision for every reachable count vector."""
    if max_per_dose > config.per_dose_cap:
        raise DomainError("max_per_dose cannot exceed the per-dose cap")
    lam_e, lam_d = effective_boundaries(config)
    rows = []
    for n in range(max_per_dose + 1):
        for counts in _compositions(n, spec.K):
            state = DoseState(1, counts, n)
            s = summarize(state, spec, config)
            qbb = qbb_posterior(state, spec, config.prior_alpha)
            if n == 0:
                decision = ""
            else:
                decision = boin_toxicity_decision(s.n_tox, n, lam_e, lam_d)
            toxic = s.prob_toxic > config.delta_t
            if config.futility_tail == "lower":
                futile = s.prob_futile > config.delta_e
            else:
                futile = (1.0 - s.prob_futile) > config.delta_e
            rows.append(
                (
                    n,
                    "/".join(str(c) for c in counts),
                    s.n_tox,
                    state.n_flagged(spec.efficacy_flags),
                    decision,
                    int(toxic),
                    int(futile),
                    int(not (toxic or futile)),
                    f"{s.mean_utility:.4f}",
                    f"{qbb.mean * 100.0:.4f}",
                    f"{s.prob_toxic:.4f}",
                    f"{s.prob_futile:.4f}",
                )
            )
    return DecisionTable(DECISION_TABLE_COLUMNS, tuple(rows))
