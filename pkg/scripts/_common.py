import time

import numpy as np

from starverify import LORENZ_SOURCE, parse_field
from starverify.recurrence import build_box_graph
from starverify.singularity import classify_singularity, find_singularities

LORENZ_REGION = (np.array([-30.0, -30.0, 0.0]), np.array([30.0, 30.0, 60.0]))


def records(spec, region):
    out = []
    for i, z in enumerate(find_singularities(spec, region)):
        r = classify_singularity(spec, z)
        r.ident = i
        out.append(r)
    return out


def lorenz_setup(depth=7):
    spec = parse_field(LORENZ_SOURCE)
    t0 = time.perf_counter()
    g = build_box_graph(spec, LORENZ_REGION, depth)
    print(f"cover: depth {depth}, {g.n_boxes} boxes, {len(g.classes)} classes, {time.perf_counter() - t0:.1f}s")
    return spec, g, records(spec, LORENZ_REGION)
