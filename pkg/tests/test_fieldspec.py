import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from starverify.fieldspec import (
    DimensionMismatch, FieldDomainError, FieldSyntaxError, UndeclaredIdentifier,
    diff, eval_field, eval_jacobian, evaluate, parse_field, to_text, add, mul, Const,
)
from conftest import random_spec_source


def test_one_dimensional_linear():
    spec = parse_field("dim=1\nx' = -x")
    assert spec.dim == 1
    assert eval_field(spec, [2.0])[0] == -2.0
    assert eval_jacobian(spec, [5.0])[0, 0] == -1.0


def test_lorenz_values(lorenz):
    assert eval_field(lorenz, [1, 2, 0])[0] == 10.0
    np.testing.assert_array_equal(eval_field(lorenz, [0, 0, 0]), 0.0)
    # hand evaluation: (10*0, 1*27 - 1, 1 - 8/3)
    np.testing.assert_allclose(eval_field(lorenz, [1, 1, 1]), [0, 26, 1 - 8 / 3], rtol=1e-15)


def test_lorenz_jacobian_at_origin(lorenz):
    J = eval_jacobian(lorenz, [0, 0, 0])
    np.testing.assert_allclose(J, [[-10, 10, 0], [28, -1, 0], [0, 0, -8 / 3]], rtol=1e-15)


def test_diagonal_jacobian():
    spec = parse_field("dim = 2\nx' = -x\ny' = -2*y\n")
    for p in np.random.default_rng(0).normal(size=(5, 2)):
        np.testing.assert_array_equal(eval_jacobian(spec, p), np.diag([-1.0, -2.0]))


def test_primed_identifier_on_rhs():
    with pytest.raises(FieldSyntaxError) as e:
        parse_field("dim = 1\nx' = y' + 1\n")
    assert e.value.line == 2


def test_undeclared_and_dimension_errors():
    with pytest.raises(UndeclaredIdentifier):
        parse_field("dim = 1\nx' = q*x\n")
    with pytest.raises(DimensionMismatch):
        parse_field("dim = 2\nx' = x\n")


def test_domain_error_reports_component():
    spec = parse_field("dim = 2\nx' = 1\ny' = 1/x\n")
    with pytest.raises(FieldDomainError) as e:
        eval_field(spec, [0.0, 1.0])
    assert e.value.component == 2
    spec = parse_field("dim = 1\nx' = 1/x\n")
    with pytest.raises(FieldDomainError) as e:
        eval_field(spec, [0.0])
    assert e.value.component == 1


def test_comments_and_functions():
    src = "# header comment\ndim = 2\nparam a = 0.5  # trailing\nx' = sin(x) + a*exp(y)\ny' = sqrt(4)*tanh(x) - log(2)\n"
    spec = parse_field(src)
    v = eval_field(spec, [0.3, -0.2])
    assert v[0] == pytest.approx(np.sin(0.3) + 0.5 * np.exp(-0.2), rel=1e-15)
    assert v[1] == pytest.approx(2 * np.tanh(0.3) - np.log(2), rel=1e-15)


def test_batch_evaluation_matches_pointwise(lorenz):
    P = np.random.default_rng(1).normal(size=(3, 7)) * 10
    out = lorenz.fn(P)
    for k in range(7):
        np.testing.assert_allclose(out[:, k], eval_field(lorenz, P[:, k]), rtol=1e-15)


def _fd_jacobian(spec, x, h=1e-5):
    d = spec.dim
    J = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        J[:, j] = (eval_field(spec, x + e) - eval_field(spec, x - e)) / (2 * h)
    return J


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_roundtrip_is_exact(seed):
    spec = parse_field(random_spec_source(seed))
    again = parse_field(spec.to_text())
    pts = np.random.default_rng(seed).uniform(-2, 2, size=(20, spec.dim))
    for p in pts:
        np.testing.assert_array_equal(eval_field(again, p), eval_field(spec, p))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_jacobian_matches_finite_differences(seed):
    spec = parse_field(random_spec_source(seed))
    for p in np.random.default_rng(seed).uniform(-1.5, 1.5, size=(5, spec.dim)):
        J = eval_jacobian(spec, p)
        fd = _fd_jacobian(spec, p)
        scale = max(1.0, np.abs(J).max())
        assert np.abs(J - fd).max() <= 1e-6 * scale


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
def test_derivative_is_linear(seed, a, b):
    f = parse_field(random_spec_source(seed, d=2)).components
    combo = add(mul(Const(a), f[0]), mul(Const(b), f[1]))
    x = np.random.default_rng(seed).uniform(-1, 1, 2)
    params = {"p": 1.0}
    for j in range(2):
        lhs = evaluate(diff(combo, j), x, params)
        rhs = a * evaluate(diff(f[0], j), x, params) + b * evaluate(diff(f[1], j), x, params)
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_printed_text_reparses_to_same_text(lorenz):
    assert parse_field(lorenz.to_text()).to_text() == lorenz.to_text()
    assert to_text(lorenz.components[0]) == "(sigma * (y - x))"
