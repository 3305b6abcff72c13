import numpy as np
import pytest

from starverify import LORENZ_SOURCE, parse_field

LIMIT_CYCLE = """\
dim = 3
x' = x*(1 - x^2 - y^2) - y
y' = y*(1 - x^2 - y^2) + x
z' = -z
"""

NEUTRAL_CYCLE = LIMIT_CYCLE.replace("z' = -z", "z' = 0")


def linear_source(A) -> str:
    """Field text for x' = A x in coordinates x, y, z, w, ..."""
    A = np.asarray(A, float)
    names = "xyzwuv"[: A.shape[0]]
    lines = [f"dim = {A.shape[0]}"]
    for i, n in enumerate(names):
        terms = [f"({float(A[i, j])!r})*{names[j]}" for j in range(A.shape[0]) if A[i, j] != 0]
        lines.append(f"{n}' = " + (" + ".join(terms) if terms else "0"))
    return "\n".join(lines) + "\n"


def _rand_expr(rng, names, depth):
    if depth == 0 or rng.random() < 0.25:
        if rng.random() < 0.6:
            return str(rng.choice(names))
        c = rng.uniform(-3, 3)
        return f"{c:.6g}" if c >= 0 else f"({c:.6g})"
    a = _rand_expr(rng, names, depth - 1)
    b = _rand_expr(rng, names, depth - 1)
    k = rng.integers(0, 10)
    if k == 0:
        return f"({a} + {b})"
    if k == 1:
        return f"({a} - {b})"
    if k == 2:
        return f"{a}*{b}"
    if k == 3:
        return f"{a}/(2 + ({b})^2)"
    if k == 4:
        return f"({a})^{int(rng.integers(2, 4))}"
    if k == 5:
        return f"sin({a})"
    if k == 6:
        return f"cos({a}) * p"
    if k == 7:
        return f"exp(tanh({a}))"
    if k == 8:
        return f"sqrt(1 + ({a})^2)"
    return f"log(2 + sin({a}))"


def random_spec_source(seed: int, d=None) -> str:
    """A random smooth field (no domain errors anywhere) built from the grammar."""
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 5)) if d is None else d
    names = ["x", "y", "z", "w"][:d]
    lines = [f"dim = {d}", f"param p = {rng.uniform(0.5, 2):.6g}"]
    for n in names:
        lines.append(f"{n}' = {_rand_expr(rng, names, 3)}")
    return "\n".join(lines) + "\n"


@pytest.fixture(scope="session")
def lorenz():
    return parse_field(LORENZ_SOURCE)


@pytest.fixture(scope="session")
def limit_cycle():
    return parse_field(LIMIT_CYCLE)


LORENZ_REGION = (np.array([-30.0, -30.0, 0.0]), np.array([30.0, 30.0, 60.0]))
_BUILD_SECONDS = {}


@pytest.fixture(scope="session")
def lorenz_graph(lorenz):
    """Depth-7 Lorenz box graph, built once per session (about a minute)."""
    import time
    from starverify.recurrence import build_box_graph

    t0 = time.perf_counter()
    g = build_box_graph(lorenz, LORENZ_REGION, 7)
    _BUILD_SECONDS["lorenz_graph"] = time.perf_counter() - t0
    return g


def build_seconds(name):
    return _BUILD_SECONDS.get(name, 0.0)


@pytest.fixture(scope="session")
def lorenz_records(lorenz):
    from starverify.singularity import classify_singularity, find_singularities

    recs = []
    for i, z in enumerate(find_singularities(lorenz, LORENZ_REGION)):
        r = classify_singularity(lorenz, z)
        r.ident = i
        recs.append(r)
    return recs


@pytest.fixture(scope="session")
def lorenz_report(lorenz, lorenz_graph, lorenz_records):
    """Full verdict for the Lorenz class at T=5 with 10^4 samples, swapped cocycle sides."""
    import copy
    from starverify.hyperbolicity import analyze_class

    recs = copy.deepcopy(lorenz_records)
    cls = lorenz_graph.box_set(lorenz_graph.classes[0])
    return analyze_class(lorenz, cls, recs, T=5.0, samples=10_000, swap_sides=True), recs


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
