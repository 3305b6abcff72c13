"""Chain classes, cycle verdict and periodic-orbit rate for the planar limit cycle with a contracting z."""
import numpy as np

from starverify import parse_field
from starverify.flow import Section, find_periodic_orbit
from starverify.hyperbolicity import analyze_class, check_periodic_uniform_hyp
from starverify.recurrence import build_box_graph

from _common import records

SRC = """dim = 3
x' = x*(1 - x^2 - y^2) - y
y' = y*(1 - x^2 - y^2) + x
z' = -z
"""


def main():
    spec = parse_field(SRC)
    region = (np.full(3, -2.0), np.full(3, 2.0))
    g = build_box_graph(spec, region, 7)
    recs = records(spec, region)
    for ci, rows in enumerate(g.classes):
        rep = analyze_class(spec, g.box_set(rows), recs, T=2.0, samples=1000)
        print(f"class {ci}: {len(rows)} boxes, {rep.label}, s={rep.s}, margins {rep.margins}")
    orb = find_periodic_orbit(spec, [1.3, 0, 0.1], Section((0, 1, 0), (0, 0, 0)))
    print(f"period {orb.period:.10f}, Floquet exponents {np.round(orb.floquet_exponents, 6)}")
    for T in (1.0, orb.period / 6):
        rep = check_periodic_uniform_hyp(spec, orb, T=T)
        print(f"T={T:.4f}: {rep.windows} windows, eta {rep.eta:.6f}")


if __name__ == "__main__":
    main()
