"""Tabulate lambda_{k,p,n} and kappa^- over (delta, q, n) for one system.

    python3 scripts/exponent_sweep.py cat2_perturbed:eps=0.1 --k 1 > sweep.csv
"""

import argparse
import csv
import sys

from ugibbs import exponents, systems


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("system")
    ap.add_argument("--point", type=float, nargs="+")
    ap.add_argument("--k", type=int, default=1)
    ap.add_argument("--deltas", type=float, nargs="+", default=[0.05, 0.1, 0.2, 0.5])
    ap.add_argument("--qs", type=int, nargs="+", default=[10, 30, 100])
    ap.add_argument("--ns", type=int, nargs="+", default=[500, 1000, 2000])
    args = ap.parse_args()
    system = systems.make_system(args.system)
    x = systems.TorusPoint(tuple(args.point or [0.1234 + 0.1 * i for i in range(system.d)]))
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(("delta", "q", "n", "kappa_minus"))
    for row in exponents.kappa_sweep(system, x, args.k, deltas=args.deltas, qs=args.qs, ns=args.ns):
        out.writerow(row)
    out.writerow(())
    out.writerow(("k", "p", "n", "lambda_kpn"))
    for k in range(1, system.d + 1):
        for p in (1, 2, 4, 8):
            out.writerow((k, p, max(args.ns), exponents.lambda_kpn(system, x, k, p, max(args.ns)).value))
    return 0


if __name__ == "__main__":
    sys.exit(main())
