"""Radius functions of the optimal circle morph for a small and a large multiplier.

Writes ``(t, psi)`` tables for both cases and prints the multipliers.  The
large-multiplier case is also solved from the rounded six-digit level
``A = 0.480456`` to show how badly ``mu`` is determined there: ``f`` is
within ``2e-3 / mu`` of its limit ``log(R)^2``.
"""

import argparse
import math
from pathlib import Path

import numpy as np

from morphforge.circlemorph import CircleProblem, f_mu, solve_circle, solve_multipliers


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--R", type=float, default=2.0)
    ap.add_argument("--t-samples", type=int, default=201)
    ap.add_argument("--outdir", type=Path, default=Path("radius_profiles"))
    args = ap.parse_args()
    args.outdir.mkdir(parents=True, exist_ok=True)

    cases = {"small_mu": 1.56296, "large_mu": f_mu(500.0, args.R)}
    for name, A in cases.items():
        sol = solve_circle(args.R, A, t_samples=args.t_samples)
        path = args.outdir / f"{name}.csv"
        np.savetxt(path, np.column_stack([sol.t, sol.psi]), delimiter=",", header="t,psi", comments="")
        print(f"{name}: A={A:.10g} mu={sol.mu:.6g} lambda={sol.lam:.6g} J={sol.J_value:.6g} -> {path}")

    print("\nsensitivity of mu to the sixth digit of A:")
    for A in (0.4804555, 0.480456, 0.4804565):
        mu, lam = solve_multipliers(CircleProblem(args.R, A))
        print(f"  A={A:.7f}: mu={mu:9.2f} lambda={lam:9.2f}  (A - log(R)^2 = {A - math.log(args.R) ** 2:.3e})")


if __name__ == "__main__":
    main()
