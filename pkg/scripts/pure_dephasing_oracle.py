"""Hierarchy vs the closed-form pure-dephasing coherence (W = 0, no field).

Pass --scale < 1 to weaken the bath; the hierarchy converges much faster there.
"""

import argparse
import warnings

import numpy as np

from nmcontrol.analysis import projector, pure_dephasing_coherence
from nmcontrol.bath import BathSpec, LorentzianSet, dephasing_exponent, expansion_with
from nmcontrol.fields import PulseSpec
from nmcontrol.heom import PropagationConfig, build_hierarchy, propagate
from nmcontrol.model import SystemParams, default_params


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--levels", default="2,3,4,5,6")
    ap.add_argument("--t-final", type=float, default=60.0)
    ap.add_argument("--scale", type=float, default=1.0)
    ap.add_argument("--n-matsubara", type=int, default=4)
    args = ap.parse_args()

    base = LorentzianSet.table_one()
    lor = LorentzianSet(tuple(args.scale * p for p in base.p), base.omega, base.gamma)
    spec = BathSpec(lor, 300.0, args.n_matsubara)
    exp = expansion_with(spec, args.n_matsubara)
    params = SystemParams(default_params().delta, 0.0)
    for L in (int(x) for x in args.levels.split(",")):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            tr = propagate(projector("plus"), PropagationConfig(l_max=L, t_final_fs=args.t_final),
                           build_hierarchy(exp.count, L), exp, params, PulseSpec())
        t = tr.times_au[::10]
        exact = pure_dephasing_coherence(t, 0.5, params.delta, dephasing_exponent(t, spec))
        rel = np.abs(tr.rho[::10, 0, 0, 1] - exact) / np.abs(exact)
        print(f"L={L}  size={tr.hierarchy_size:6d}  max rel err {rel.max():.3e}  "
              f"|rho12| end exact {abs(exact[-1]):.3e} heom {abs(tr.rho[-1, 0, 0, 1]):.3e}")


if __name__ == "__main__":
    main()
