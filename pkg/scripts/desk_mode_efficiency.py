"""Desk-scale mode-efficiency sweep on example 2 (m=800, n=840).

Every method runs with the same iteration cap. The table lists the final
full-order cost per mode count and the smallest mode count that comes
within 25% of the full-order optimiser's cost.
"""
import argparse
from dataclasses import replace

from spodcontrol.experiments import ExperimentSpec, run_mode_sweep
from spodcontrol.optimizer import OptimizerConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-iter", type=int, default=200)
    ap.add_argument("--pod-modes", default="5,10,20,40,60,80,160")
    ap.add_argument("--spod-modes", default="1,2,3,4,5,10,20")
    ap.add_argument("--out", default="results/desk_mode_efficiency")
    ap.add_argument("--within", type=float, default=0.25)
    args = ap.parse_args()

    base = ExperimentSpec(example=2, scale=0.25, out=args.out, optimizer=OptimizerConfig(n_iter=args.n_iter))
    outcomes = run_mode_sweep(replace(base, methods=("fom",), modes=()))
    J_ref = outcomes[0].J_final
    print(f"fom   J={J_ref:.4f}")
    for method, modes in (("spod", args.spod_modes), ("pod", args.pod_modes)):
        spec = replace(base, methods=(method,), modes=tuple(int(p) for p in modes.split(",")),
                       out=f"{args.out}/{method}")
        rows = run_mode_sweep(spec)
        good = [int(o.setting) for o in rows if o.J_final <= (1 + args.within) * J_ref]
        for o in rows:
            print(f"{method:5s} p={int(o.setting):<4d} J={o.J_final:.4f} {o.exit_reason} {o.status}")
        print(f"{method:5s} minimal modes within {args.within:.0%}: {min(good) if good else None}", flush=True)


if __name__ == "__main__":
    main()
