"""Run every acceptance criterion and print one PASS/FAIL line each.

    python3 scripts/run_acceptance.py [--fast] [--json results.json]

``--fast`` skips the five-seed ablation behind criteria 6 and 7 (about 20 minutes).
"""
import argparse
import json
import sys

from graphfuse.acceptance import run_all


def main() -> int:
    p = argparse.ArgumentParser()
    p.add_argument("--fast", action="store_true", help="skip criteria 6 and 7")
    p.add_argument("--json", help="write per-criterion results here")
    args = p.parse_args()
    results = run_all(include_slow=not args.fast, log=lambda s: print(s, flush=True))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump([{"criterion": r.number, "name": r.name, "passed": r.passed,
                        "detail": r.detail, "seconds": r.seconds} for r in results], fh, indent=1)
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed"
          + (f"; failing: {failed}" if failed else ""))
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
