#!/usr/bin/env python3
"""Run a baseline-ladder experiment plan and print the success-rate table.

Example:
    python3 scripts/run_ladder.py configs/peg_quick.json --table out/table.txt
"""

import argparse
import json
import sys
from pathlib import Path

from corrgen import evalbench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("plan", help="experiment plan JSON")
    ap.add_argument("--out", help="write the full result JSON here")
    ap.add_argument("--table", help="write the formatted table here")
    ap.add_argument("--assert", dest="check", action="store_true",
                    help="exit nonzero if the ladder orderings fail")
    args = ap.parse_args()

    plan = evalbench.ExperimentPlan.load(args.plan)
    result = evalbench.run_experiment(plan, progress=print)
    table = evalbench.format_table(result)
    print(table)
    if args.table:
        Path(args.table).write_text(table + "\n", encoding="utf-8")
    if args.out:
        Path(args.out).write_text(
            json.dumps(evalbench.result_to_json(result), indent=2) + "\n",
            encoding="utf-8")
    if result.errors:
        sys.exit(1)
    if args.check:
        fails = evalbench.ordering_assertions(result)
        for f in fails:
            print(f"ASSERTION FAILED: {f}", file=sys.stderr)
        if fails:
            sys.exit(1)


if __name__ == "__main__":
    main()
