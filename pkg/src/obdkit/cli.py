"""Command-line entry points.

Every subcommand is a thin wrapper over the library: data goes to stdout as
JSON (CSV where asked), logs go to stderr, exit code 0 on success, 1 on
input/validation problems, 2 on unexpected runtime failures. Output is
deterministic given the inputs and any seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional

from .core import DesignConfig, DomainError, DoseGrid, DoseState, UtilitySpec
from .decisions import (
    Snapshot,
    boin_boundaries,
    decision_table,
    next_dose,
    randomization_weights,
    resolve_config,
    snapshot,
)
from .estimand import (
    PatientRecord,
    StrategyMap,
    compare_strategies,
    default_strategy_map,
    load_records_csv,
    load_records_jsonl,
    load_strategy_map,
)
from .rng import replication_stream
from .sensitivity import tipping_scan
from .simulator import Scenario, operating_characteristics


def _read_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _load_utility(path: Optional[str]) -> UtilitySpec:
    if path is None:
        return UtilitySpec.canonical()
    d = _read_json(path)
    if "categories" in d:
        return UtilitySpec.from_dict(d)
    if "psi" in d:  # shorthand: four scores in canonical order
        psi = [float(x) for x in d["psi"]]
        if len(psi) != 4:
            raise DomainError("psi shorthand requires exactly four scores")
        return UtilitySpec.canonical().with_scores(psi)
    raise DomainError(f"{path}: expected a utility spec with 'categories' or 'psi'")


def _load_config(path: Optional[str]) -> DesignConfig:
    if path is None:
        return DesignConfig()
    return DesignConfig.from_dict(_read_json(path))


def _load_records(path: str) -> list[PatientRecord]:
    if path.endswith(".csv"):
        return load_records_csv(path)
    return load_records_jsonl(path)


def _load_state(path: str) -> dict:
    doc = _read_json(path)
    config = DesignConfig.from_dict(doc["config"])
    spec = UtilitySpec.from_dict(doc["utility"])
    states = [DoseState.from_dict(s) for s in doc["dose_states"]]
    records = [PatientRecord.from_dict(r) for r in doc.get("records", [])]
    decide_dose = doc.get("last_cohort_dose") or doc.get("current_dose", 1)
    titration = doc.get("titration_active")
    if titration is None and config.accelerated_titration is not None:
        grades = [e.grade or 0 for r in records for e in r.events if e.kind == "toxicity"]
        titration = (
            max(grades, default=0) < config.accelerated_titration.trigger_grade
            and decide_dose < config.accelerated_titration.trigger_dose_index
        )
    return {
        "config": config,
        "spec": spec,
        "states": states,
        "records": records,
        "decide_dose": int(decide_dose),
        "titration_active": bool(titration),
        "strategy_map": (
            StrategyMap.from_dict(doc["strategy_map"]) if doc.get("strategy_map") else None
        ),
    }


def _print_json(payload) -> None:
    print(json.dumps(payload, indent=2))


def _decision_payload(state: dict, seed: int) -> dict:
    config = state["config"]
    snap: Snapshot = snapshot(state["states"], state["spec"], config)
    rng = None
    if config.assignment_mode != "deterministic":
        rng = replication_stream(seed, 0)
    decision = next_dose(
        state["decide_dose"],
        state["states"],
        snap.summaries,
        config,
        rng=rng,
        titration_active=state["titration_active"],
    )
    weights = None
    if snap.admissible.dose_indices:
        weights = randomization_weights(snap.summaries, snap.admissible).to_dict()
    return {
        "decision": decision.to_dict(),
        "summaries": [s.to_dict() for s in snap.summaries],
        "admissible": snap.admissible.to_dict(),
        "weights": weights,
    }


def cmd_boundaries(args) -> int:
    lam_e, lam_d = boin_boundaries(args.phi, args.phi1, args.phi2)
    print(f"lambda_e={lam_e:.4f} lambda_d={lam_d:.4f}")
    return 0


def cmd_table(args) -> int:
    config = resolve_config(_load_config(args.config))
    spec = _load_utility(args.utility)
    tbl = decision_table(config, spec, args.max_n)
    if args.format == "csv":
        sys.stdout.write(tbl.to_csv())
    else:
        print(tbl.to_json())
    return 0


def cmd_decide(args) -> int:
    state = _load_state(args.state)
    _print_json(_decision_payload(state, args.seed))
    return 0


def cmd_derive(args) -> int:
    records = _load_records(args.records)
    smap = load_strategy_map(args.map) if args.map else default_strategy_map()
    spec = _load_utility(args.utility)
    from .estimand import derive_outcome

    _print_json([derive_outcome(r, smap, spec).to_dict() for r in records])
    return 0


def cmd_whatif(args) -> int:
    records = _load_records(args.records)
    maps = [load_strategy_map(p) for p in args.maps]
    spec = _load_utility(args.utility)
    config = _load_config(args.config)
    comparison = compare_strategies(records, maps, spec, config, n_doses=args.doses)
    _print_json(comparison.to_dict())
    return 0


def cmd_obd(args) -> int:
    state = _load_state(args.state)
    snap = snapshot(state["states"], state["spec"], state["config"])
    rationale = (
        [
            f"dose {snap.obd} has the highest posterior mean utility among admissible "
            f"tested doses at or below the estimated MTD ({snap.mtd})"
        ]
        if snap.obd is not None
        else ["no admissible tested dose at or below the estimated MTD"]
    )
    _print_json(
        {
            "obd": snap.obd,
            "mtd": snap.mtd,
            "rationale": rationale,
            "summaries": [s.to_dict() for s in snap.summaries],
            "admissible": snap.admissible.to_dict(),
        }
    )
    return 0


def cmd_simulate(args) -> int:
    scenario = Scenario.from_dict(_read_json(args.scenario))
    config = _load_config(args.config)
    spec = _load_utility(args.utility)
    smap = load_strategy_map(args.map) if args.map else default_strategy_map()
    oc = operating_characteristics(
        scenario,
        config,
        smap,
        spec,
        reps=args.reps,
        master_seed=args.seed,
        parallelism=args.jobs,
        design=args.design,
    )
    payload = oc.to_json()
    if args.out:
        Path(args.out).write_text(payload, encoding="utf-8")
        print(f"wrote {args.out}", file=sys.stderr)
    if args.out_csv:
        Path(args.out_csv).write_text(oc.to_csv(), encoding="utf-8")
        print(f"wrote {args.out_csv}", file=sys.stderr)
    print(payload)
    return 0


def cmd_tipping(args) -> int:
    state = _load_state(args.state)
    if not state["records"]:
        raise DomainError("tipping analysis needs patient records in the state file")
    smap = state["strategy_map"] or default_strategy_map()
    report = tipping_scan(
        state["records"],
        smap,
        state["spec"],
        state["config"],
        flip_to=args.flip_to,
        mode=args.mode,
        n_doses=len(state["states"]),
        exhaustive=args.exhaustive,
    )
    _print_json(report.to_dict())
    print(report.render_text(), file=sys.stderr)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.data_dir, max_parallelism=args.max_parallelism)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


SCHEMA_HELP = """\
file formats (all JSON, schema_version "v1"):
  utility spec   categories: [{efficacy_flag, toxicity_flag, psi}] with scores
                 spanning [0, 100]; or the shorthand {"psi": [s1, s2, s3, s4]}
  dose grid      doses: [{index, label, amount, unit}], amounts increasing
  design config  prior_alpha, target_phi, phi_t, phi_e, delta_t, delta_e,
                 lambda_e, lambda_d (optional), cohort_size, max_n,
                 per_dose_cap, assignment_mode, accelerated_titration
                 {trigger_grade, trigger_dose_index}, futility_tail
  records        .jsonl (one record per line) or long CSV; each record:
                 patient_id, dose_index, first_dose_day, baseline_ok,
                 stratum_label, events: [{day, kind, response_grade | grade,
                 dlt | ice_type, reason, new_dose_index}]
  strategy map   entries: {ice_type or surgery.<reason>: strategy or
                 {strategy, favorable}}, efficacy_success_grades,
                 dlt_window_days, declared_stratum, attribute_to_switched_dose
  scenario       grid, true_tox, true_eff, eff_tox_odds_ratio,
                 ice_probabilities, stratum_fraction, assessment_day,
                 late_response_prob, name, description
  trial state    the document served by GET /v1/trials/{id}: config, utility,
                 grid, strategy_map, current_dose, last_cohort_dose,
                 dose_states: [{dose_index, counts, n_enrolled}], records
"""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="obdkit",
        description="Utility-based dose-optimization: boundaries, tables, decisions, "
        "estimand handling, simulation, sensitivity, and the conduct service.",
        epilog=SCHEMA_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("boundaries", help="escalation/de-escalation boundaries for a target rate")
    p.add_argument("--phi", type=float, required=True, help="target toxicity rate")
    p.add_argument("--phi1", type=float, default=None, help="sub-therapeutic rate (default 0.6*phi)")
    p.add_argument("--phi2", type=float, default=None, help="over-toxic rate (default 1.4*phi)")
    p.set_defaults(func=cmd_boundaries)

    p = sub.add_parser("table", help="pre-tabulated protocol decision table")
    p.add_argument("--config", default=None, help="design config JSON")
    p.add_argument("--utility", default=None, help="utility spec JSON (categories or psi shorthand)")
    p.add_argument("--max-n", type=int, required=True, dest="max_n", help="max evaluable patients per dose")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("decide", help="next-dose decision for a trial state file")
    p.add_argument("--state", required=True, help="trial state JSON (service export format)")
    p.add_argument("--seed", type=int, default=0, help="seed for randomized assignment modes")
    p.set_defaults(func=cmd_decide)

    p = sub.add_parser("derive", help="derive outcomes from patient records under a strategy map")
    p.add_argument("--records", required=True, help="patient records (.jsonl or .csv)")
    p.add_argument("--map", default=None, help="strategy map JSON (default: case-study map)")
    p.add_argument("--utility", default=None)
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("whatif", help="compare derived analyses under alternative strategy maps")
    p.add_argument("--records", required=True)
    p.add_argument("--maps", nargs="+", required=True)
    p.add_argument("--utility", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--doses", type=int, default=None, help="number of dose levels (default: max in records)")
    p.set_defaults(func=cmd_whatif)

    p = sub.add_parser("obd", help="selected dose, MTD cap and rationale for a trial state file")
    p.add_argument("--state", required=True)
    p.set_defaults(func=cmd_obd)

    p = sub.add_parser("simulate", help="operating characteristics over seeded replications")
    p.add_argument("--scenario", required=True, help="scenario JSON")
    p.add_argument("--config", default=None)
    p.add_argument("--utility", default=None)
    p.add_argument("--map", default=None)
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--design", choices=("boin12", "boin_tox_only"), default="boin12")
    p.add_argument("--out", default=None, help="also write the OC JSON to this path")
    p.add_argument("--out-csv", default=None, dest="out_csv", help="also write a CSV summary")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tipping", help="tipping-point scan on a trial state file with records")
    p.add_argument("--state", required=True)
    p.add_argument("--exhaustive", action="store_true", help="also search all flip subsets (small pools)")
    p.add_argument("--flip-to", type=int, default=None, dest="flip_to")
    p.add_argument("--mode", choices=("missing", "favorable", "both"), default="both")
    p.set_defaults(func=cmd_tipping)

    p = sub.add_parser("serve", help="run the HTTP conduct service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=int(os.environ.get("OBDKIT_PORT", "8080")))
    p.add_argument("--data-dir", default=os.environ.get("OBDKIT_DATA_DIR", "./data"), dest="data_dir")
    p.add_argument(
        "--max-parallelism",
        type=int,
        default=int(os.environ.get("OBDKIT_MAX_PARALLELISM", "2")),
        dest="max_parallelism",
    )
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DomainError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover
        print(f"unexpected error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
