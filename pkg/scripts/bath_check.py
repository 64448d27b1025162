"""Spectral density, correlation function and expansion error vs Matsubara count."""

import argparse

import numpy as np

from nmcontrol.bath import (BathSpec, LorentzianSet, correlation_numeric, expansion_with,
                            spectral_peak)
from nmcontrol.model import fs_to_au


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--temperature", type=float, default=300.0)
    ap.add_argument("--max-n", type=int, default=16)
    args = ap.parse_args()

    spec = BathSpec(LorentzianSet.table_one(), args.temperature, 0)
    t = fs_to_au(np.linspace(0.0, 100.0, 201))
    ref = correlation_numeric(t, spec)
    print(f"omega_max = {spectral_peak(spec.lorentzians):.6f} a.u., C(0) = {ref[0].real:.6e} a.u.^2")
    print(f"|C(60 fs)|/C(0) = {abs(ref[120]) / abs(ref[0]):.3f}")
    print(" n   max |C_exp - C| / |C(0)|")
    for n in range(0, args.max_n + 1, 2):
        err = np.max(np.abs(expansion_with(spec, n)(t) - ref)) / abs(ref[0])
        print(f"{n:2d}   {err:.3e}")


if __name__ == "__main__":
    main()
