"""FRC peak against SSM expansion order for a run configuration."""
import argparse

from ssmfrs.cli import RunConfig, convergence_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("config")
    ap.add_argument("--orders", default="3,5,7")
    ap.add_argument("--eps", type=float, default=None)
    args = ap.parse_args()
    out = convergence_sweep(RunConfig.from_json(args.config), [int(o) for o in args.orders.split(",")], args.eps)
    for o, p in zip(out["orders"], out["peaks"]):
        print(f"order {o}: peak {p['amplitude']:.8g} at Omega {p['Omega']:.6f}")
    print("relative changes:", ", ".join(f"{d:.2e}" for d in out["deltas"]))
    print("smallest adequate order:", out["recommended"])


if __name__ == "__main__":
    main()
