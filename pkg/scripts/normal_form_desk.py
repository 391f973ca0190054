"""Birkhoff normal form of truncated Klein-Gordon with a certificate summary.

Writes the generators and the resonant part to --out and prints the step
certificate, the conjugacy check and the remainder-gradient slope.
"""
import argparse
import json

import numpy as np

from lowreg_bnf.cli import kg_normal_form
from lowreg_bnf.dynamics import Nonlinearity
from lowreg_bnf.normalform import remainder_scaling, verify_conjugacy


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--mass", type=float, default=1.0)
    ap.add_argument("--K", type=int, default=12)
    ap.add_argument("--power", type=int, default=2)
    ap.add_argument("--r", type=int, default=5)
    ap.add_argument("--N", type=float, default=4.0)
    ap.add_argument("--samples", type=int, default=20)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    nf = kg_normal_form(args.mass, args.K, Nonlinearity.power(1.0, args.power), args.r, args.N)
    if args.out:
        nf.to_directory(args.out)
    conj = verify_conjugacy(nf, samples=args.samples)
    radii = nf.epsilon0 / 2 * 0.5 ** np.arange(5)
    rs = remainder_scaling(nf, radii)
    steps = [{k: s[k] for k in ("r_star", "min_divisor", "chi_norm", "homological_residual")}
             for s in nf.certificate["steps"]]
    print(json.dumps({"epsilon0": nf.epsilon0, "steps": steps,
                      "max_conjugacy_residual": conj["max_conjugacy_residual"],
                      "remainder_slope": rs["slope"], "target": rs["target"]}, indent=1, default=float))


if __name__ == "__main__":
    main()
