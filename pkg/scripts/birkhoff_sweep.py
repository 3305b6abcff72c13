"""Finite-n Birkhoff averages of log(h_- ||psi^1|E||) from Lorenz extended-set samples."""
import argparse

import numpy as np

from starverify.bundle import CocycleConfig
from starverify.hyperbolicity import analyze_class, birkhoff_batch

from _common import lorenz_setup


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--starts", type=int, default=300)
    ap.add_argument("--windows", type=int, default=50)
    ap.add_argument("--samples", type=int, default=2000)
    a = ap.parse_args()

    spec, g, recs = lorenz_setup()
    cls = g.box_set(g.classes[0])
    rep = analyze_class(spec, cls, recs, T=5.0, samples=a.samples, swap_sides=True)
    sp = rep.split
    c, k = sp.chains.samples.T
    sel = np.flatnonzero(np.array(sp.tags) == "lift")[: a.starts]
    cfg = CocycleConfig.from_records(recs, swap_sides=True)
    args = (sp.chains.pts[c, k][sel], sp.chains.lines[c, k][sel], sp.ambient("E")[sel], 1.0, a.windows)
    with_h = birkhoff_batch(spec, cfg, *args, neighborhood=cls.grown(1), on_escape="nan")
    plain = birkhoff_batch(spec, None, *args, neighborhood=cls.grown(1), on_escape="nan")
    for name, b in (("h_- psi", with_h), ("psi", plain)):
        fin = b[np.isfinite(b)]
        print(f"{name:8s} starts {len(b)}  escaped {len(b) - len(fin)}  negative {np.mean(fin < 0):.1%}  "
              f"median {np.median(fin):.3f}  max {fin.max():.3f}")


if __name__ == "__main__":
    main()
