"""Regenerate loadlike.csv: half-hourly loads with weekday and weekend dynamics.

Each consumer has a three-block daily level (night, day, evening) carried by
A4, a slow seasonal swing, and D4/D3 detail coefficients that follow
``f_d = M f_{d-1} + e`` where ``M = +0.7 I`` when day d is a weekday and
``M = -0.7 I`` on Saturdays and Sundays. Run from this directory.
"""

import csv
import datetime as dt

import numpy as np

from loadmix.wavelet import WaveletDecomp, haar_idwt

N_CONSUMERS = 6
N_DAYS = 140
START = dt.date(2011, 1, 3)  # a Monday
SEED = 20110103


def main(path="loadlike.csv"):
    rng = np.random.default_rng(SEED)
    days = [START + dt.timedelta(days=j) for j in range(N_DAYS)]
    rows = []
    for c in range(N_CONSUMERS):
        blocks = rng.uniform([0.15, 0.3, 0.5], [0.3, 0.6, 1.2])
        f = rng.standard_normal(9) * 0.4
        for j, d in enumerate(days):
            coef = -0.7 if d.weekday() >= 5 else 0.7
            f = coef * f + 0.3 * rng.standard_normal(9)
            season = 1.0 + 0.25 * np.cos(2 * np.pi * j / 365.0)
            dec = WaveletDecomp(4.0 * season * blocks, 0.05 * f[:3], 0.05 * f[3:],
                                0.005 * rng.standard_normal(12), 0.005 * rng.standard_normal(24))
            curve = haar_idwt(dec)
            assert curve.min() > 0
            rows.append([f"C{c + 1:03d}", d.isoformat()] + [f"{v:.5f}" for v in curve])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["consumer", "date"] + [f"h{t:02d}" for t in range(48)])
        w.writerows(rows)


if __name__ == "__main__":
    main()
