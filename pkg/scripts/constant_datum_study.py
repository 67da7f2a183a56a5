"""How close does the p-continuation get to u = 1 for f = 1?

Prints, per grid and p, the L1 distance to 1, max u_p and max |z_p|, next to
the shooting estimate of the plateau height m_p solving m^(p/(p-1)) = (p-1)/p
(from z = -x/m on the plateau and u' = -|z|^(1/(p-1))).

    python3 scripts/constant_datum_study.py [--gamma 1] [--n 513 2049 8193]
"""
import argparse

from onelap.continuation import Schedule, limit_estimate, run_schedule
from onelap.grid import build_grid, flux_inf_norm
from onelap.oracle import preset_f
from onelap.psolver import ProblemSpec, PSolveConfig


def plateau_estimate(p: float, gamma: float = 1.0) -> float:
    # u(1) = m - ((p-1)/p) m^(-gamma/(p-1)) = 0
    return ((p - 1) / p) ** ((p - 1) / (p - 1 + gamma))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--gamma", type=float, default=1.0)
    ap.add_argument("--n", type=int, nargs="+", default=[513, 2049, 8193])
    ap.add_argument("--tol", type=float, default=2e-7)
    args = ap.parse_args()
    print("n,p,l1_error,u_max,plateau_estimate,z_max,converged")
    for n in args.n:
        g = build_grid((-1, 1), n)
        res = run_schedule(ProblemSpec(g, preset_f("one", g), args.gamma), Schedule(),
                           PSolveConfig(tol=args.tol))
        for r in res.records:
            err = g.cell_volume * abs(r.solution.u - 1).sum()
            print(f"{n},{r.p},{err:.4f},{r.u_max:.4f},{plateau_estimate(r.p, args.gamma):.4f},"
                  f"{flux_inf_norm(r.solution.z, g):.4f},{r.converged}")
        rich = g.cell_volume * abs(limit_estimate(res, "richardson")[0] - 1).sum()
        print(f"# n={n} richardson L1 error {rich:.4f}")


if __name__ == "__main__":
    main()
