"""From trap frequencies to a per-ion field map.

Loads the bundled 10^4-ion crystal (or solves a smaller one), evaluates the
coil-pair field at each ion and reports how the fractional deviation grows
along the trap axis.  The axial spread dominates the ensemble dephasing.

    python3 demos/crystal_field_map.py [--solve 500]
"""

import argparse

import numpy as np

from ionmag import CoilPair, TrapConfig, inhomogeneity_map, reference_crystal, solve_equilibrium
from ionmag.crystal import crystal_extents


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--solve", type=int, default=0, help="solve a fresh crystal of this size instead")
    args = ap.parse_args()

    ens = solve_equilibrium(args.solve, TrapConfig(), seed=0) if args.solve else reference_crystal()
    ext = crystal_extents(ens) * 1e3
    print(f"{len(ens)} ions, extents z x y x x = {ext[2]:.3f} x {ext[1]:.3f} x {ext[0]:.3f} mm")

    pair = CoilPair()
    fmap = inhomogeneity_map(pair, ens)
    print(f"coil current for {pair.b0 * 1e3:.3f} mT at the center: {pair.current:.3f} A")
    print(f"fractional deviation: max axial {fmap.max_axial:.3g}, max radial {fmap.max_radial:.3g}")

    z = np.abs(ens.positions[:, 2])
    edges = np.linspace(0, z.max(), 6)
    print("  |z| band (mm)     mean fraction   field offset (nT)")
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (z >= lo) & (z <= hi)
        f = fmap.fractional[sel].mean()
        print(f"  {lo * 1e3:.3f}-{hi * 1e3:.3f}     {f:12.4g}   {f * pair.b0 * 1e9:10.3f}")


if __name__ == "__main__":
    main()
