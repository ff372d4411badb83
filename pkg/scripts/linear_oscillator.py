"""Forced response surface and ridge of the damped linear oscillator, checked against closed form."""
import argparse

import numpy as np

from ssmfrs import (AmplitudeSpec, analytic_frs_m1, assemble_first_order, build_fonc_L2, build_linear_oscillator,
                    compute_autonomous_ssm, run_successive_L2)
from ssmfrs.oracle import linear_frs_analytic, linear_ridge_frequency
from ssmfrs.ridge import default_scale


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--zeta", type=float, default=0.1)
    args = ap.parse_args()
    window, eps_bounds = (0.8, 1.2), (0.005, 0.05)
    fos = assemble_first_order(build_linear_oscillator(args.zeta))
    ssm = compute_autonomous_ssm(fos, order=3)
    x = AmplitudeSpec.opt(0, name="x")
    mesh = analytic_frs_m1(ssm, np.linspace(0.005, 0.3, 60), np.linspace(*eps_bounds, 12), window, [x], "TV", fos)
    err = np.abs(mesh.amplitudes["x"] - linear_frs_analytic(args.zeta, mesh.Omega, mesh.eps)).max()
    print(f"surface: {mesh.n_vertices} vertices, max error vs closed form {err:.2e}")

    rms = AmplitudeSpec.l2([0], name="rms")
    zp = build_fonc_L2(ssm, rms, "TV", fos, scale=default_scale(ssm, rms, window, eps_bounds, mode="TV", fos=fos))
    for c in run_successive_L2(zp, 0.02, window, eps_bounds).curves:
        dev = np.abs(c.Omega - linear_ridge_frequency(args.zeta)).max()
        print(f"{c.kind}: {len(c)} points, eps in [{c.eps.min():.3g}, {c.eps.max():.3g}], "
              f"max |Omega - sqrt(1 - 2 zeta^2)| = {dev:.2e}")


if __name__ == "__main__":
    main()
