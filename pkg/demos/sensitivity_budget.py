"""Field sensitivity of a single ion and of a 10^4-ion crystal.

Each case measures T2 from a simulated trace, fits the stretched-exponential
contrast model and evaluates the projection-noise-limited sensitivity at the
points of steepest slope.  The ensemble trace averages a stratified 500-ion
subsample of the crystal; the ion count in the noise budget is 10^4.

    python3 demos/sensitivity_budget.py [--ensemble-shots 100]
"""

import argparse

import numpy as np

from ionmag import CoilPair, IonSelection, inhomogeneity_map, measure_t2, reference_crystal, sensitivity


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--shots", type=int, default=1000)
    ap.add_argument("--ensemble-shots", type=int, default=100)
    ap.add_argument("--workers", type=int, default=4)
    args = ap.parse_args()

    crystal = reference_crystal()
    fmap = inhomogeneity_map(CoilPair(), crystal)
    subsample = IonSelection.stratified(crystal.positions, fmap.fractional, fmap.b0, n_select=500)

    omega_0 = 2 * np.pi * 1.0
    print("case                 T2 (s)    t_opt (s)   S_B")
    for method in ("dressed", "mdd"):
        for ensemble, n_ions, shots in ((None, 1, args.shots), (subsample, 10_000, args.ensemble_shots)):
            m = measure_t2(method, omega_0, 0.05e-6, shots=shots, ensemble=ensemble, workers=args.workers)
            rep = sensitivity(m.fit, omega_0, n_ions=n_ions, duty=m.spec.protocol.duty_factor)
            label = f"{method}, {n_ions} ion{'s' if n_ions > 1 else ''}"
            print(f"{label:18s} {m.t2:9.4g} {rep.optimal_time:10.4g}   {rep.S_B * 1e15:9.4g} fT/rtHz")


if __name__ == "__main__":
    main()
