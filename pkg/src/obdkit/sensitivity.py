"""Robustness checks on the selected dose.

Tipping-point scans flip patients to a worst-case category one at a time
(missing-data patients first, then the most favorable observed outcomes at
the currently selected dose) and report the smallest number of flips that
changes the selection. An exhaustive-subset variant exists as the oracle
for small pools. Prior sensitivity re-runs the posterior summaries under a
near-improper prior; strategy sensitivity re-derives outcomes under
alternative event-handling maps.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import combinations
from typing import Optional, Sequence

from .core import DesignConfig, DerivedOutcome, DomainError, UtilitySpec, states_from_outcomes
from .decisions import Snapshot, snapshot
from .estimand import PatientRecord, StrategyComparison, StrategyMap, compare_strategies, derive_outcome
from .posterior import haldane_sensitivity, summarize

SCAN_MODES = ("missing", "favorable", "both")


@dataclass(frozen=True)
class TippingRow:
    num_flipped: int
    flip_target: int
    resulting_obd: Optional[int]
    mean_utilities: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "num_flipped": self.num_flipped,
            "flip_target": self.flip_target,
            "resulting_obd": self.resulting_obd,
            "mean_utilities": list(self.mean_utilities),
        }


@dataclass(frozen=True)
class TippingReport:
    baseline_obd: Optional[int]
    flip_target: int
    pool_patient_ids: tuple[str, ...]
    scan: tuple[TippingRow, ...]
    tipping_point: Optional[int]
    exhaustive_tipping_point: Optional[int] = None
    exhaustive_checked: bool = False

    def to_dict(self) -> dict:
        d = {
            "baseline_obd": self.baseline_obd,
            "flip_target": self.flip_target,
            "pool_patient_ids": list(self.pool_patient_ids),
            "scan": [r.to_dict() for r in self.scan],
            "tipping_point": self.tipping_point,
        }
        if self.exhaustive_checked:
            d["exhaustive_tipping_point"] = self.exhaustive_tipping_point
        return d

    def render_text(self) -> str:
        lines = [
            f"baseline selection: {self.baseline_obd if self.baseline_obd else 'none'}",
            f"flippable patients: {len(self.pool_patient_ids)}",
            "flips  selection  utilities",
        ]
        for row in self.scan:
            utils = " ".join(f"{u:7.2f}" for u in row.mean_utilities)
            sel = row.resulting_obd if row.resulting_obd else "none"
            lines.append(f"{row.num_flipped:5d}  {str(sel):>9}  {utils}")
        tip = self.tipping_point if self.tipping_point is not None else "not reached"
        lines.append(f"tipping point: {tip}")
        if self.exhaustive_checked:
            ex = (
                self.exhaustive_tipping_point
                if self.exhaustive_tipping_point is not None
                else "not reached"
            )
            lines.append(f"exhaustive tipping point: {ex}")
        return "\n".join(lines)


def _flip_pool(
    outcomes: Sequence[DerivedOutcome],
    spec: UtilitySpec,
    baseline_obd: Optional[int],
    mode: str,
) -> list[int]:
    """Indices of flippable outcomes, worst-case-first.

    Evaluable responders at the selected dose come first, highest score
    first, so every flip removes the largest remaining contribution to that
    dose; missing-category patients follow in record order (each flip is a
    worst-case imputation that only adds denominator).
    """
    if mode not in SCAN_MODES:
        raise DomainError(f"scan mode must be one of {SCAN_MODES}")
    missing = [i for i, o in enumerate(outcomes) if o.sensitivity_flag and o.category is None]
    favorable: list[int] = []
    if baseline_obd is not None:
        scored = [
            (spec.psi[o.category - 1], i)
            for i, o in enumerate(outcomes)
            if o.dose_index == baseline_obd
            and o.evaluable
            and o.category is not None
            and spec.categories[o.category - 1].efficacy == 1
        ]
        scored.sort(key=lambda t: (-t[0], t[1]))
        favorable = [i for _, i in scored]
    if mode == "missing":
        return missing
    if mode == "favorable":
        return favorable
    return favorable + missing


def _flip(outcomes: list[DerivedOutcome], indices: Sequence[int], flip_to: int) -> list[DerivedOutcome]:
    out = list(outcomes)
    for i in indices:
        out[i] = replace(out[i], category=flip_to, evaluable=True)
    return out


def _resnapshot(
    outcomes: Sequence[DerivedOutcome], spec: UtilitySpec, config: DesignConfig, n_doses: int
) -> Snapshot:
    return snapshot(states_from_outcomes(outcomes, n_doses, spec.K), spec, config)


def tipping_scan(
    records: Sequence[PatientRecord],
    smap: StrategyMap,
    spec: UtilitySpec,
    config: DesignConfig,
    flip_to: Optional[int] = None,
    mode: str = "both",
    n_doses: Optional[int] = None,
    exhaustive: bool = False,
) -> TippingReport:
    """Greedy worst-first tipping scan; optionally verified exhaustively.

    ``flip_to`` defaults to the lowest-scoring category. With ``exhaustive``
    the minimal flip count is also searched over all subsets of the pool
    (kept for small pools; the scan itself stays linear in the pool size).
    """
    if flip_to is None:
        flip_to = min(range(1, spec.K + 1), key=lambda k: spec.psi[k - 1])
    if not (1 <= flip_to <= spec.K):
        raise DomainError(f"flip target {flip_to} outside 1..{spec.K}")
    if n_doses is None:
        n_doses = max((r.dose_index for r in records), default=1)
    outcomes = [derive_outcome(r, smap, spec) for r in records]
    base = _resnapshot(outcomes, spec, config, n_doses)
    pool = _flip_pool(outcomes, spec, base.obd, mode)

    rows = []
    tipping: Optional[int] = None
    for m in range(len(pool) + 1):
        snap = base if m == 0 else _resnapshot(_flip(outcomes, pool[:m], flip_to), spec, config, n_doses)
        rows.append(
            TippingRow(m, flip_to, snap.obd, tuple(s.mean_utility for s in snap.summaries))
        )
        if tipping is None and m > 0 and snap.obd != base.obd:
            tipping = m

    ex_tip: Optional[int] = None
    if exhaustive:
        if len(pool) > 12:
            raise DomainError("exhaustive search is limited to pools of at most 12 patients")
        for m in range(1, len(pool) + 1):
            if any(
                _resnapshot(_flip(outcomes, subset, flip_to), spec, config, n_doses).obd != base.obd
                for subset in combinations(pool, m)
            ):
                ex_tip = m
                break
    return TippingReport(
        baseline_obd=base.obd,
        flip_target=flip_to,
        pool_patient_ids=tuple(outcomes[i].patient_id for i in pool),
        scan=tuple(rows),
        tipping_point=tipping,
        exhaustive_tipping_point=ex_tip,
        exhaustive_checked=exhaustive,
    )


@dataclass(frozen=True)
class PriorSensitivityRow:
    dose_index: int
    n: int
    mean_utility_design: float
    mean_utility_flat: float

    @property
    def delta(self) -> float:
        return self.mean_utility_flat - self.mean_utility_design

    def to_dict(self) -> dict:
        return {
            "dose_index": self.dose_index,
            "n": self.n,
            "mean_utility_design": self.mean_utility_design,
            "mean_utility_flat": self.mean_utility_flat,
            "delta": self.delta,
        }


@dataclass(frozen=True)
class PriorSensitivityReport:
    rows: tuple[PriorSensitivityRow, ...]
    obd_design: Optional[int]
    obd_flat: Optional[int]

    @property
    def obd_agrees(self) -> bool:
        return self.obd_design == self.obd_flat

    def to_dict(self) -> dict:
        return {
            "rows": [r.to_dict() for r in self.rows],
            "obd_design_prior": self.obd_design,
            "obd_flat_prior": self.obd_flat,
            "obd_agrees": self.obd_agrees,
        }

    def render_text(self) -> str:
        lines = ["dose      n  design-prior U  flat-prior U   delta"]
        for r in self.rows:
            lines.append(
                f"{r.dose_index:4d} {r.n:6d} {r.mean_utility_design:15.4f} "
                f"{r.mean_utility_flat:13.4f} {r.delta:7.3f}"
            )
        lines.append(
            f"selection: design prior -> {self.obd_design or 'none'}, "
            f"flat prior -> {self.obd_flat or 'none'}"
            + ("" if self.obd_agrees else "  (DISAGREES)")
        )
        return "\n".join(lines)


def prior_sensitivity(
    records: Sequence[PatientRecord],
    smap: StrategyMap,
    spec: UtilitySpec,
    config: DesignConfig,
    epsilon: float = 1e-6,
    n_doses: Optional[int] = None,
) -> PriorSensitivityReport:
    """Design prior versus near-improper prior, side by side.

    Tested doses are compared dose by dose; the selection is recomputed
    under each prior and a disagreement is surfaced rather than resolved.
    """
    if n_doses is None:
        n_doses = max((r.dose_index for r in records), default=1)
    outcomes = [derive_outcome(r, smap, spec) for r in records]
    states = states_from_outcomes(outcomes, n_doses, spec.K)
    base = snapshot(states, spec, config)

    rows = []
    flat_summaries = []
    for st, design_summary in zip(states, base.summaries):
        if st.n > 0:
            flat = haldane_sensitivity(st, spec, config, epsilon=epsilon)
            rows.append(
                PriorSensitivityRow(st.dose_index, st.n, design_summary.mean_utility, flat.mean_utility)
            )
            flat_summaries.append(flat)
        else:
            # untested doses stay excluded from selection under either prior
            flat_summaries.append(design_summary)

    from .decisions import select_obd

    obd_flat = select_obd(flat_summaries, base.tested, config) if base.tested else None
    return PriorSensitivityReport(tuple(rows), base.obd, obd_flat)


@dataclass(frozen=True)
class StrategySensitivityReport:
    comparison: StrategyComparison
    obds: tuple[Optional[int], ...]

    @property
    def obd_agrees(self) -> bool:
        return len({o for o in self.obds}) <= 1

    def to_dict(self) -> dict:
        return {
            "comparison": self.comparison.to_dict(),
            "obds": list(self.obds),
            "obd_agrees": self.obd_agrees,
        }


def strategy_sensitivity(
    records: Sequence[PatientRecord],
    maps: Sequence[StrategyMap],
    spec: UtilitySpec,
    config: DesignConfig,
    n_doses: Optional[int] = None,
) -> StrategySensitivityReport:
    """Selection under each candidate event-handling map."""
    if len(maps) < 2:
        raise DomainError("strategy sensitivity needs at least two maps")
    comparison = compare_strategies(records, maps, spec, config, n_doses=n_doses)
    return StrategySensitivityReport(comparison, tuple(c.obd for c in comparison.columns))
