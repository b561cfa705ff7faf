#!/usr/bin/env python3
"""Sweep the friction parameter and emit a plot-ready CSV.

Columns: gamma, bound, corollary, exact, margin, converged.  The corollary
column is only populated for the langevin model.

Example:
    python scripts/friction_sweep.py --potential "1:0.5,0" \
        --gamma 0.01:100:log15 --out friction.csv
"""

import argparse
import sys

from hypoco.basis import BasisSpec, Potential
from hypoco.cli import _fmt
from hypoco.config import parse_range
from hypoco.constants import constants_summary
from hypoco.models import model_bound_report
from hypoco.operators import ModelSpec


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--model", default="langevin",
                        choices=["langevin", "boltzmann_rhmc"])
    parser.add_argument("--potential", default="1:0.5,0",
                        help="Fourier coefficient list, '0' for flat")
    parser.add_argument("--beta", type=float, default=1.0)
    parser.add_argument("--mass", type=float, default=1.0)
    parser.add_argument("--gamma", default="0.01:100:log15",
                        help="value or start:stop:logN|linN range")
    parser.add_argument("--n-q", type=int, default=8)
    parser.add_argument("--n-p", type=int, default=8)
    parser.add_argument("--out", help="CSV path (default: stdout)")
    args = parser.parse_args(argv)

    potential = Potential.from_string(args.potential, d=1)
    spec = BasisSpec(d=1, n_q=args.n_q, n_p=args.n_p,
                     beta=args.beta, mass=args.mass)
    constants = constants_summary(potential, args.beta, args.mass, 1,
                                  n_q=max(32, 2 * args.n_q))
    lines = ["gamma,bound,corollary,exact,margin,converged"]
    for gamma in parse_range(args.gamma):
        model = ModelSpec(model=args.model, gamma=float(gamma),
                          beta=args.beta, mass=args.mass, d=1)
        report = model_bound_report(model, spec, potential,
                                    constants=constants)
        corollary = report.details.get("bound_corollary")
        lines.append(",".join(_fmt(v) for v in (
            float(gamma), report.bound, corollary, report.exact,
            report.margin, report.converged)))
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write(text)
        sys.stderr.write(f"wrote {args.out}\n")
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
