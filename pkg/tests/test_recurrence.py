import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from starverify import parse_field
from starverify.flow import dopri5_many
from starverify.recurrence import (
    GraphOptions, NoIsolatingNeighborhood, ResourceCapExceeded, build_box_graph, chain_classes, filtrating_neighborhood,
    is_chain_transitive, tarjan_scc, write_boxes_csv, write_classes_csv, write_edges_csv, write_plot_csv,
)
from conftest import LIMIT_CYCLE

CUBE2 = (np.full(3, -2.0), np.full(3, 2.0))


@pytest.fixture(scope="module")
def lc_graph():
    return build_box_graph(parse_field(LIMIT_CYCLE), CUBE2, 7)


def _hausdorff(A, B):
    from scipy.spatial import cKDTree
    return max(cKDTree(B).query(A)[0].max(), cKDTree(A).query(B)[0].max())


def _circle(n=2000):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return np.column_stack([np.cos(t), np.sin(t), np.zeros(n)])


def test_global_sink_single_class():
    spec = parse_field("dim = 3\nx' = -x\ny' = -y\nz' = -z\n")
    g = build_box_graph(spec, ([-1] * 3, [1] * 3), 4)
    assert len(g.classes) == 1
    assert g.box_set(g.classes[0]).contains(np.zeros((1, 3)))[0]


def test_gradient_system_single_class():
    spec = parse_field("dim = 2\nx' = -2*x\ny' = -4*y^3 - y\n")
    g = build_box_graph(spec, ([-1, -1], [1, 1]), 5)
    assert len(chain_classes(g)) == 1


def test_no_recurrence_no_classes():
    spec = parse_field("dim = 2\nx' = 1\ny' = 0.5\n")
    g = build_box_graph(spec, ([0, 0], [1, 1]), 4)
    assert g.classes == []
    assert len(g.escaping_rows()) == g.n_boxes


def test_limit_cycle_classes(lc_graph):
    g = lc_graph
    assert len(g.classes) == 2
    diam = g.box_diameter
    annulus, origin = (g.centers(c) for c in g.classes)
    assert _hausdorff(annulus, _circle()) <= 2 * diam
    assert _hausdorff(origin, np.zeros((1, 3))) <= 2 * diam
    for c in g.classes:
        assert is_chain_transitive(g, c)
    assert not is_chain_transitive(g, np.concatenate(g.classes))


def test_single_box_self_edge():
    spec = parse_field("dim = 2\nx' = -x\ny' = -y\n")
    g = build_box_graph(spec, ([-1, -1], [1, 1]), 3)
    rows = [r for r in range(g.n_boxes) if g.has_self_edge(r)]
    assert rows
    assert is_chain_transitive(g, rows[:1])


def test_edges_and_labels_consistent(lc_graph):
    g = lc_graph
    m = g.n_boxes
    A = g.adj.tocoo()
    assert A.row.max() < m and A.col.max() <= m
    _, ref = connected_components(g.adj[:m, :m], directed=True, connection="strong")
    pairs = set(zip(g.labels[:m].tolist(), ref.tolist()))
    assert len(pairs) == len(set(ref.tolist()))
    # the class union has no edge to itself missing: it is invariant under the induced relation
    union = np.concatenate(g.classes)
    sub = g.adj[union][:, union]
    assert (np.asarray(sub.sum(axis=1)).ravel() > 0).all()
    assert (np.asarray(sub.sum(axis=0)).ravel() > 0).all()


def test_outer_approximation_of_the_circle():
    spec = parse_field(LIMIT_CYCLE)
    for depth in (5, 6, 7):
        g = build_box_graph(spec, CUBE2, depth)
        covered = np.zeros(len(_circle()), bool)
        for cls in g.class_sets():
            covered |= cls.contains(_circle())
        assert covered.all(), depth


def test_refinement_monotone(lc_graph):
    spec = parse_field(LIMIT_CYCLE)
    coarse = build_box_graph(spec, CUBE2, 6)
    union6 = coarse.box_set(np.concatenate(coarse.classes)).grown(1)
    pts = lc_graph.centers(np.concatenate(lc_graph.classes))
    assert union6.contains(pts).all()


def test_time_reversal_same_classes(lc_graph):
    r = lc_graph.reversed()
    m = r.n_boxes
    _, fwd = connected_components(lc_graph.adj[:m, :m], directed=True, connection="strong")
    _, bwd = connected_components(r.adj[:m, :m], directed=True, connection="strong")
    assert len(set(zip(fwd.tolist(), bwd.tolist()))) == len(set(fwd.tolist()))
    for c in lc_graph.classes:
        assert is_chain_transitive(r, c)
    assert r.reversed_time and not r.reversed().reversed_time


def test_filtrating_neighbourhoods(lc_graph):
    annulus, origin = lc_graph.classes
    U = filtrating_neighborhood(lc_graph, annulus, margin=2)
    assert U.direction == "attracting"
    assert np.isin(U.class_keys, U.keys).all()
    # in 3D the origin is a saddle (z contracts), so it has no isolating neighbourhood either way
    with pytest.raises(NoIsolatingNeighborhood):
        filtrating_neighborhood(lc_graph, origin, margin=2)


def test_planar_origin_is_repelling():
    spec = parse_field("dim = 2\nx' = x*(1 - x^2 - y^2) - y\ny' = y*(1 - x^2 - y^2) + x\n")
    g = build_box_graph(spec, ([-2, -2], [2, 2]), 7)
    directions = [filtrating_neighborhood(g, c, 2).direction for c in g.classes]
    assert directions == ["attracting", "repelling"]


def test_sink_neighbourhood_absorbs():
    spec = parse_field("dim = 3\nx' = -x\ny' = -y\nz' = -z\n")
    g = build_box_graph(spec, ([-1] * 3, [1] * 3), 4)
    for margin in (1, 2, 3):
        assert filtrating_neighborhood(g, g.classes[0], margin).direction == "attracting"


def test_orbits_stay_in_attracting_neighbourhood(lc_graph, limit_cycle):
    U = filtrating_neighborhood(lc_graph, lc_graph.classes[0], margin=2).box_set()
    rng = np.random.default_rng(0)
    X = U.centers()[rng.choice(len(U), 40, replace=False)]
    f = lambda Y: limit_cycle.fn(Y.T).T
    for _ in range(1000):
        X, ok = dopri5_many(f, X, 1.0, rtol=1e-8, atol=1e-8)
        assert U.contains(X).all()


def test_lorenz_single_class(lorenz_graph, lorenz):
    g = lorenz_graph
    assert len(g.classes) == 1
    cls = g.box_set(g.classes[0])
    q = np.sqrt(72)
    assert cls.contains(np.array([[0, 0, 0], [q, q, 27], [-q, -q, 27]])).all()
    # a long orbit (10^4 time units in 100 pieces) after a transient shadows inside the class
    f = lambda Y: lorenz.fn(Y.T).T
    X = np.random.default_rng(1).uniform(-10, 10, (100, 3)) + [0, 0, 25]
    X, _ = dopri5_many(f, X, 20.0)
    near = cls.grown(1)
    hits = 0
    for _ in range(100):
        X, ok = dopri5_many(f, X, 1.0)
        hits += int(cls.contains(X).sum())
        # every visited point is within one box (the cover's resolution) of the class
        assert near.contains(X).all()
    assert hits >= 0.999 * 100 * len(X)


def test_resource_cap():
    spec = parse_field(LIMIT_CYCLE)
    with pytest.raises(ResourceCapExceeded) as e:
        build_box_graph(spec, CUBE2, 8, opts=GraphOptions(max_boxes=5000))
    assert e.value.depth_fit < 8


def test_bad_arguments(limit_cycle):
    with pytest.raises(ValueError):
        build_box_graph(limit_cycle, CUBE2, 0)
    with pytest.raises(ValueError):
        build_box_graph(limit_cycle, CUBE2, 3, tau=0.5)
    with pytest.raises(ValueError):
        build_box_graph(limit_cycle, CUBE2, 3, samples_per_box=4)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.floats(0.01, 0.3), st.integers(0, 10_000))
def test_tarjan_matches_scipy(n, density, seed):
    rng = np.random.default_rng(seed)
    A = sparse.random(n, n, density=density, random_state=rng, format="csr")
    succ = lambda v: A.indices[A.indptr[v]:A.indptr[v + 1]].tolist()
    lab = tarjan_scc(n, succ)
    _, ref = connected_components(A, directed=True, connection="strong")
    # same partition up to relabelling
    pairs = set(zip(lab.tolist(), ref.tolist()))
    assert len(pairs) == len(set(lab.tolist())) == len(set(ref.tolist()))


def test_csv_exports(tmp_path, lc_graph):
    g = lc_graph
    write_boxes_csv(g, tmp_path / "b.csv")
    write_edges_csv(g, tmp_path / "e.csv")
    write_classes_csv(g, tmp_path / "c.csv")
    write_plot_csv(g, tmp_path / "p.csv")
    boxes = list(csv.reader(open(tmp_path / "b.csv")))
    assert boxes[0] == ["box", "i_1", "i_2", "i_3", "depth"] and len(boxes) == g.n_boxes + 1
    edges = list(csv.reader(open(tmp_path / "e.csv")))
    assert len(edges) - 1 <= g.adj.nnz
    classes = list(csv.reader(open(tmp_path / "c.csv")))
    assert len(classes) - 1 == sum(len(c) for c in g.classes)
    plot = np.loadtxt(tmp_path / "p.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(plot[plot[:, 0] == 1, 1:], g.centers(np.sort(g.classes[1])))
