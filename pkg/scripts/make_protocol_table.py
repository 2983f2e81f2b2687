"""Generate the pre-tabulated per-dose decision table for a protocol appendix.

Every outcome-count vector up to the per-dose cap gets one row with the
interval decision, admissibility flags and fixed-4-decimal utilities, so
the clinical team can run the design from paper if need be.
"""

import argparse
import sys

from obdkit.core import DesignConfig, TitrationRule, UtilitySpec
from obdkit.decisions import decision_table, resolve_config


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--max-per-dose", type=int, default=12, dest="max_per_dose")
    parser.add_argument("--target", type=float, default=0.3, help="target toxicity rate")
    parser.add_argument("--psi", type=float, nargs=4, default=[0, 10, 60, 100],
                        help="four utility scores in canonical category order")
    parser.add_argument("--format", choices=("csv", "json"), default="csv")
    parser.add_argument("--out", default=None)
    args = parser.parse_args()

    spec = UtilitySpec.canonical().with_scores(args.psi)
    config = resolve_config(
        DesignConfig(
            target_phi=args.target,
            phi_t=args.target + 0.05,
            accelerated_titration=TitrationRule(trigger_grade=2, trigger_dose_index=5),
        )
    )
    print(
        f"boundaries: escalate at <= {config.lambda_e:.4f}, de-escalate at >= {config.lambda_d:.4f}",
        file=sys.stderr,
    )
    table = decision_table(config, spec, args.max_per_dose)
    payload = table.to_csv() if args.format == "csv" else table.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload)
        print(f"wrote {args.out} ({len(table.rows)} rows)", file=sys.stderr)
    else:
        sys.stdout.write(payload)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
