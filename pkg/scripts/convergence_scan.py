"""Field-free volume of accessible states for several hierarchy depths.

Writes one map run per depth plus convergence.csv, then prints the bumps and
the consecutive-depth differences over the full window and an early window.
"""

import argparse

import numpy as np

from nmcontrol import config, pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--levels", default="3,4,5,6")
    ap.add_argument("--t-final", type=float, default=100.0)
    ap.add_argument("--early", type=float, default=5.0, help="early window for differences, fs")
    ap.add_argument("--out", default="runs/convergence")
    args = ap.parse_args()

    levels = [int(x) for x in args.levels.split(",")]
    cfg = config.merge(config.preset("fig2"), {"propagation": {"t_final_fs": args.t_final}})
    rep = pipeline.cmd_converge(cfg, levels, args.out)
    print(f"status {rep.status}, {rep.wall_time_s:.0f} s, monotone={rep.flags.get('monotone')}")

    tab = pipeline.read_csv(f"{args.out}/convergence.csv")
    t = tab["t_fs"]
    early = t <= args.early
    for a, b in zip(levels[:-1], levels[1:]):
        d = np.abs(tab[f"V_L{b}"] - tab[f"V_L{a}"])
        print(f"L{a}->L{b}: max |dV| {d.max():.3e} (full), {d[early].max():.3e} (t <= {args.early} fs)")
    for L in levels:
        ana = pipeline.read_csv(f"{args.out}/L{L}/analysis.csv")
        v = ana["V"]
        print(f"L={L}: V(10 fs) {v[np.argmin(abs(t - 10))]:.4f}, min V {v.min():.4f}")


if __name__ == "__main__":
    main()
