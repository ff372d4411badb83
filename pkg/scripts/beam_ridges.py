"""Ridges and trenches of the cantilever beam tip response, written as CSV files."""
import argparse
import time
from pathlib import Path

from ssmfrs import (AmplitudeSpec, assemble_first_order, beam_tip_index, build_beam_model, build_fonc_L2,
                    compute_autonomous_ssm, run_successive_L2)
from ssmfrs.ridge import default_scale, simple_bifurcation_eps


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--elements", type=int, default=25)
    ap.add_argument("--order", type=int, default=5)
    ap.add_argument("--out", type=Path, default=Path("out/beam_ridges"))
    args = ap.parse_args()
    window, eps_bounds = (6.96, 7.04), (1e-4, 1e-2)
    t0 = time.perf_counter()
    mech = build_beam_model(n_elements=args.elements)
    fos = assemble_first_order(mech)
    ssm = compute_autonomous_ssm(fos, order=args.order)
    tip = AmplitudeSpec.l2([beam_tip_index(mech)], name="tip")
    zp = build_fonc_L2(ssm, tip, "TI", fos, scale=default_scale(ssm, tip, window, eps_bounds, mode="TI", fos=fos))
    curves, merges = [], []
    # one start above the merge and one inside the isola regime
    for eps0 in (0.01, 0.000855):
        res = run_successive_L2(zp, eps0, window, eps_bounds, existing=curves)
        curves += res.curves
        merges += simple_bifurcation_eps(res)
    args.out.mkdir(parents=True, exist_ok=True)
    for i, c in enumerate(curves):
        c.to_csv(args.out / f"curve_{i}_{c.kind}.csv")
        print(f"{c.kind}: eps in [{c.eps.min():.4g}, {c.eps.max():.4g}], ends {c.termination}")
    print(f"simple bifurcation at eps = {', '.join(f'{e:.6g}' for e in merges)}")
    print(f"{time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
