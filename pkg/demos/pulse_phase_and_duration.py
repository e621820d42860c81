"""Two knobs of the pi-pulse train: its phase and its duration.

A signal whose phase is in quadrature with the pi pulses is suppressed by the
echo train, so the sequence acts as a phase filter.  The pulse duration trades
the time spent unprotected during pulses against how well the pulses
refocus; in the four-level model the best duration lies inside the scanned
range, while an idealized two-level model only prefers ever shorter pulses.

    python3 demos/pulse_phase_and_duration.py [--shots 200]
"""

import argparse

import numpy as np

from ionmag import phase_scan, scan_pi_duration


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--shots", type=int, default=200)
    args = ap.parse_args()

    offsets, contrast = phase_scan(np.linspace(0, np.pi, 9))
    print("phase offset (rad)   contrast")
    for off, c in zip(offsets, contrast):
        print(f"  {off:6.3f}            {c:.4f}")

    t_pi = np.array([0.5, 1, 2, 4, 6.3, 10, 20, 50]) * 1e-3
    print("\nt_pi (ms)   T2 four-level (s)   T2 two-level (s)")
    _, four, _ = scan_pi_duration(t_pi, model="four_level", shots=args.shots)
    _, two, _ = scan_pi_duration(t_pi, model="two_level", shots=args.shots)
    for tp, a, b in zip(t_pi, four, two):
        print(f"  {tp * 1e3:6.1f}    {a:12.4g}       {b:12.4g}")


if __name__ == "__main__":
    main()
