"""Coherence of one ion at the trap center under dressing alone and under MDD.

Both protocols see the same common-mode field noise (0.05 uT rms per shot).
Dressing removes first-order field sensitivity; the pi-pulse train of MDD
also refocuses the residual quasi-static detuning, which lengthens the
coherence time by orders of magnitude.

    python3 demos/single_ion_coherence.py [--shots 1000] [--out demo-out]
"""

import argparse
from pathlib import Path

import numpy as np

from ionmag import measure_t2

TWO_PI = 2 * np.pi


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--shots", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("demo-out"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    omega_0 = TWO_PI * 1.0
    for method in ("dressed", "mdd"):
        m = measure_t2(method, omega_0, 0.05e-6, shots=args.shots, seed=args.seed)
        fit = m.fit
        print(f"{method:8s} T2 = {m.t2:9.4g} s   stretch n = {fit.stretch:.2f}   "
              f"1/e crossing = {m.crossing.t2:.4g} s   trace span = {m.trace.times[-1]:.4g} s")
        (args.out / f"trace_{method}.csv").write_text(m.trace.to_csv())
    print(f"traces written to {args.out}/")


if __name__ == "__main__":
    main()
