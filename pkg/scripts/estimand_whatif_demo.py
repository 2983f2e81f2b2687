"""How the intercurrent-event strategy changes a patient's derived outcome.

Builds the canonical diverging timeline (stable disease at the day treatment
stops for toxicity, complete response later in follow-up) plus a small
supporting cohort, derives it under each single-strategy map and under the
case-study default map, and shows the per-dose utilities and selection each
analysis implies.
"""

from obdkit.core import DesignConfig, UtilitySpec
from obdkit.estimand import (
    Event,
    PatientRecord,
    compare_strategies,
    default_strategy_map,
    uniform_strategy_map,
)

CANON = UtilitySpec.canonical()


def diverging_patient(pid="p-fig", dose=2):
    return PatientRecord(
        pid,
        dose,
        (
            Event(day=10, kind="toxicity", grade=3, dlt=True),
            Event(day=12, kind="assessment", response_grade="SD"),
            Event(day=12, kind="ice", ice_type="tox_discontinuation"),
            Event(day=40, kind="assessment", response_grade="CR"),
        ),
    )


def plain(pid, dose, grade):
    return PatientRecord(pid, dose, (Event(day=28, kind="assessment", response_grade=grade),))


def main() -> int:
    records = [diverging_patient()]
    records += [plain(f"d1-{i}", 1, g) for i, g in enumerate(["SD", "PR", "SD"])]
    records += [plain(f"d2-{i}", 2, g) for i, g in enumerate(["PR", "PR", "SD"])]

    maps = [
        uniform_strategy_map("treatment_policy"),
        uniform_strategy_map("while_on_treatment"),
        uniform_strategy_map("composite"),
        default_strategy_map(),
    ]
    comparison = compare_strategies(records, maps, CANON, DesignConfig(), n_doses=2)

    print("diverging patient: DLT day 10, SD at discontinuation day 12, CR day 40\n")
    header = f"{'analysis':<22} {'derived Y':>9} {'U(dose 1)':>10} {'U(dose 2)':>10} {'selection':>10}"
    print(header)
    print("-" * len(header))
    for col in comparison.columns:
        y = col.outcomes[0].category
        label = col.label if col.label != "mixed" else "case-study defaults"
        print(
            f"{label:<22} {str(y if y is not None else 'missing'):>9}"
            f" {col.mean_utilities[0]:>10.2f} {col.mean_utilities[1]:>10.2f}"
            f" {str(col.obd if col.obd else 'none'):>10}"
        )
    print("\ntrace under the case-study defaults:")
    for entry in comparison.columns[-1].outcomes[0].strategy_trace:
        print(f"  [{entry.ice_type}] {entry.strategy}: {entry.effect}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
