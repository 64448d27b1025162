"""Single-cycle sine pulse of both signs against the field-free run.

Prints the first bump of each, V at the end, and the largest diagonal first
moment of the |1> run in a window around the pulse maximum.
"""

import argparse

import numpy as np

from nmcontrol import config, pipeline


def x1_peak(out, t_lo, t_hi):
    traj = pipeline.read_csv(f"{out}/trajectory.csv")
    win = (traj["t_fs"] >= t_lo) & (traj["t_fs"] <= t_hi)
    x1 = max(np.abs(traj["re_x1_11"][win] + 1j * traj["im_x1_11"][win]).max(),
             np.abs(traj["re_x1_22"][win] + 1j * traj["im_x1_22"][win]).max())
    return x1


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--l-max", type=int, default=6)
    ap.add_argument("--t-final", type=float, default=60.0)
    ap.add_argument("--out", default="runs/sine_control")
    args = ap.parse_args()

    base = config.merge(config.preset("fig7"), {"propagation": {"l_max": args.l_max,
                                                                "t_final_fs": args.t_final}})
    runs = {"free": {"field": {"shape": "none", "intensity_w_cm2": 0.0}},
            "sine+": {"field": {"sign": 1}}, "sine-": {"field": {"sign": -1}}}
    for name, over in runs.items():
        out = f"{args.out}/{name}"
        rep = pipeline.cmd_map(config.merge(base, over), out)
        x1 = x1_peak(out, 8.0, 12.0)
        bump = rep.bumps[0] if rep.bumps else None
        print(f"{name:6s} status {rep.status}  V(end) {rep.metrics['volume_final']}  first bump {bump}  "
              f"max|X1 diag| 8-12 fs {x1:.4e}")


if __name__ == "__main__":
    main()
