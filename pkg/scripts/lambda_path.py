"""Sweep the regularization weight on a small dataset and watch knots die.

Writes one CSV row per lambda with the objective split and the number of
surviving knots after pruning, plus a dense profile of the fit at three
chosen weights for plotting.

Usage: python3 scripts/lambda_path.py [--out-dir OUT] [--seed SEED]
"""

import argparse
import pathlib

import numpy as np

import splinetool as st
from splinetool.fit import fit, make_problem, prune_knots


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out-dir", default="out")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(args.seed)
    x = np.linspace(-3, 3, 25)
    y = np.abs(x) - 0.5 * x + 0.35 * rng.standard_normal(x.size)
    grid = np.linspace(-4, 4, 41)
    bounds = st.SlopeBounds(-2.0, 2.0)

    lams = np.logspace(-3, 3, 13)
    rows = []
    for lam in lams:
        problem = make_problem(np.column_stack((x, y)), grid=grid, lam=lam, bounds=bounds)
        result = fit(problem)
        pruned = prune_knots(result.spline, 1e-6)
        rows.append((lam, result.data_term, result.reg_term, pruned.grid.n - 2))
        print(
            f"lambda {lam:9.3g}  data {result.data_term:9.4f}  "
            f"tv2 {result.reg_term:9.4f}  knots {pruned.grid.n - 2:3d}"
        )

    with open(out / "lambda_path.csv", "w") as fh:
        fh.write("lambda,data_term,reg_term,knots\n")
        for lam, data, reg, knots in rows:
            fh.write(f"{lam:.17g},{data:.17g},{reg:.17g},{knots}\n")

    dense = np.linspace(-4, 4, 400)
    with open(out / "lambda_path_fits.csv", "w") as fh:
        fh.write("x," + ",".join(f"lam_{lam:.3g}" for lam in lams[::6]) + "\n")
        fits = []
        for lam in lams[::6]:
            problem = make_problem(np.column_stack((x, y)), grid=grid, lam=lam, bounds=bounds)
            fits.append(st.eval_spline(fit(problem).spline, dense))
        for i, xv in enumerate(dense):
            fh.write(f"{xv:.17g}," + ",".join(f"{f[i]:.17g}" for f in fits) + "\n")
    print(f"wrote {out / 'lambda_path.csv'} and {out / 'lambda_path_fits.csv'}")


if __name__ == "__main__":
    main()
