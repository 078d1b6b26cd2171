"""Convergence table for sin2d/sin3d on the standard mesh families.

    python3 scripts/convergence_study.py --out results/convergence.csv
"""

import argparse
import csv
import sys

from ncvem.analysis import run_convergence

CASES_2D = [(kind, k) for kind in ("tri-structured", "voronoi-2d") for k in (1, 2, 3)]
CASES_3D = [("cube-structured", 1), ("cube-structured", 2)]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="-", help="CSV path, '-' for stdout")
    parser.add_argument("--stab", nargs="+", default=["mfd-trace", "vem-identity"])
    parser.add_argument("--skip-3d", action="store_true")
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args(argv)

    cases = [("sin2d", kind, k, (4, 8, 16, 32)) for kind, k in CASES_2D]
    if not args.skip_3d:
        cases += [("sin3d", kind, k, (2, 4, 8)) for kind, k in CASES_3D]

    handle = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    writer = csv.writer(handle)
    writer.writerow(["problem", "kind", "k", "stabilization", "energy_rate", "l2_rate",
                     "expected_energy", "expected_l2", "energy_passed", "l2_passed"])
    for problem, kind, k, res in cases:
        for stab in args.stab:
            r = run_convergence(problem, kind, k, res, stab, threads=args.threads)
            writer.writerow([problem, kind, k, stab, f"{r.energy_rate:.3f}", f"{r.l2_rate:.3f}",
                             r.expected_energy_rate, r.expected_l2_rate, r.energy_passed, r.l2_passed])
            handle.flush()
    if handle is not sys.stdout:
        handle.close()


if __name__ == "__main__":
    main()
