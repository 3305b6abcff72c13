"""Lorenz class verdict across horizons.

    python scripts/lorenz_verdict.py --horizons 2.5 5 7.5 10 --samples 10000
"""
import argparse
import json
import time

import numpy as np

from starverify.hyperbolicity import analyze_class, sectional_rates

from _common import lorenz_setup


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--depth", type=int, default=7)
    ap.add_argument("--horizons", type=float, nargs="+", default=[5.0, 10.0])
    ap.add_argument("--samples", type=int, default=10_000)
    ap.add_argument("--literal", action="store_true", help="use the unswapped S_-/S_+ convention")
    ap.add_argument("--json", help="write the reports to this file")
    a = ap.parse_args()

    spec, g, recs = lorenz_setup(a.depth)
    cls = g.box_set(g.classes[0])
    out = {}
    for T in a.horizons:
        t0 = time.perf_counter()
        rep = analyze_class(spec, cls, recs, T=T, samples=a.samples, swap_sides=not a.literal)
        sect = sectional_rates(rep.split)
        m = rep.margins
        print(f"T={T:5.2f}  {rep.label:30s} s={rep.s}  dom {m['dom']:8.3f}  contractE {m['contractE']:8.3f}  "
              f"expandF {m['expandF']:7.3f}  sectional {m['sectional']:7.3f} "
              f"(negative at {np.mean(sect <= 0):.2%})  {time.perf_counter() - t0:.1f}s")
        out[str(T)] = rep.to_json()
    if a.json:
        with open(a.json, "w") as fh:
            json.dump(out, fh, indent=1)


if __name__ == "__main__":
    main()
