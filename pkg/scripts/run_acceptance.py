"""Run the acceptance checks and print one status line per criterion.

    python3 scripts/run_acceptance.py            # full suite
    python3 scripts/run_acceptance.py --fast     # reduced sample sizes
    python3 scripts/run_acceptance.py 4 7        # selected criteria
"""

import argparse
import sys

from ugibbs import cli


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("criteria", nargs="*", type=int)
    ap.add_argument("--fast", action="store_true")
    args = ap.parse_args()
    todo = args.criteria or [num for num, _, _ in cli.CHECKS]
    failed = 0
    for num in todo:
        res = cli.run_check(num, full=not args.fast)
        print(res.line(), flush=True)
        failed += not res.passed
    print(f"{len(todo) - failed}/{len(todo)} passed")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
