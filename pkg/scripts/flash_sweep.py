"""Intensity x sign sweep of the flash pulse; prints V at the end of each run."""

import argparse

from nmcontrol import config, pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--intensities", default="5e11,1e12,2e12,3.5e12")
    ap.add_argument("--l-max", type=int, default=6)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="runs/flash_sweep")
    args = ap.parse_args()

    cfg = config.merge(config.preset("fig4"), {"propagation": {"l_max": args.l_max}})
    intens = [float(x) for x in args.intensities.split(",")]
    rep = pipeline.cmd_sweep(cfg, intens, [1, -1], args.out, args.workers)
    print(f"status {rep.status}, {rep.wall_time_s:.0f} s")
    for p in rep.points:
        bump = p["first_bump"]
        b = f"{bump['t_fs']:.1f} fs, V={bump['V']:.4f}" if bump else "none"
        print(f"I={p['intensity_w_cm2']:.2e} sign={p['sign']:+d} gap={p['dressed_gap_au']:.5f} "
              f"first bump {b}, V(60 fs)={p['volume_60fs']}")


if __name__ == "__main__":
    main()
