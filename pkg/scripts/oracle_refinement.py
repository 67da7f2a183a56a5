"""Certificate defects of the closed-form pairs under grid refinement.

    python3 scripts/oracle_refinement.py [--n 1001 2001 4001]
"""
import argparse

from onelap.certificate import certify
from onelap.grid import build_grid
from onelap.oracle import example1_pairs, example2_pairs, sample_pair
from onelap.psolver import ProblemSpec

DEFECTS = ("defect_c", "defect_d_u", "defect_d_chi", "defect_e", "defect_var")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, nargs="+", default=[1001, 2001, 4001])
    args = ap.parse_args()
    print("pair,n,h," + ",".join(DEFECTS) + ",verdict")
    for pair in example1_pairs() + example2_pairs():
        for n in args.n:
            g = build_grid((-1, 1), n)
            u, z, f = sample_pair(pair, g)
            rep = certify(u, z, ProblemSpec(g, f, pair.gamma))
            vals = ",".join(f"{getattr(rep, d):.4e}" for d in DEFECTS)
            print(f"{pair.name},{n},{g.h[0]:.3e},{vals},{'PASS' if rep.passed else 'FAIL'}")


if __name__ == "__main__":
    main()
