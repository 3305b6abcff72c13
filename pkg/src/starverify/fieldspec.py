"""Vector-field definition language: tokenizer, parser, AST, symbolic derivatives.

A field file looks like::

    # classical Lorenz system
    dim = 3
    param sigma = 10
    param rho = 28
    param beta = 2.6666666666666665
    x' = sigma*(y - x)
    y' = x*(rho - z) - y
    z' = x*y - beta*z

Coordinates are the primed identifiers, in declaration order.  Parameters are
bound at parse time.  Every component is differentiated symbolically so the
Jacobian is exact; the only simplification performed is constant folding.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "tanh")


class FieldSpecError(ValueError):
    """Base class for problems with a field definition."""


class FieldSyntaxError(FieldSpecError):
    def __init__(self, message: str, line: int, column: int, expected=()):
        self.line = line
        self.column = column
        self.expected = tuple(expected)
        where = f"line {line}, column {column}"
        exp = f" (expected {' or '.join(self.expected)})" if self.expected else ""
        super().__init__(f"{where}: {message}{exp}")


class UndeclaredIdentifier(FieldSpecError):
    pass


class DimensionMismatch(FieldSpecError):
    pass


class FieldDomainError(ArithmeticError):
    """Evaluation hit log/sqrt of a non-positive number, a division by zero, or overflow."""

    def __init__(self, component: int, point=None, what: str = "field"):
        self.component = component  # 1-based
        self.point = point
        super().__init__(f"domain error in {what} component {component} at {point!r}")


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


class Expr:
    """Immutable expression node."""

    __slots__ = ()

    def children(self) -> tuple["Expr", ...]:
        return ()


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    index: int
    name: str


@dataclass(frozen=True)
class Param(Expr):
    name: str


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr

    def children(self):
        return (self.arg,)


@dataclass(frozen=True)
class Bin(Expr):
    op: str  # one of + - * /
    left: Expr
    right: Expr

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: float

    def children(self):
        return (self.base,)


@dataclass(frozen=True)
class Func(Expr):
    name: str
    arg: Expr

    def children(self):
        return (self.arg,)


ZERO = Const(0.0)
ONE = Const(1.0)


# -- constant-folding constructors -------------------------------------------


def _is(e: Expr, v: float) -> bool:
    return isinstance(e, Const) and e.value == v


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    return Bin("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    return Bin("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if _is(a, -1.0):
        return neg(b)
    if _is(b, -1.0):
        return neg(a)
    return Bin("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0.0:
        return Const(a.value / b.value)
    if _is(a, 0.0):
        return ZERO
    if _is(b, 1.0):
        return a
    return Bin("/", a, b)


def power(a: Expr, c: float) -> Expr:
    if c == 0.0:
        return ONE
    if c == 1.0:
        return a
    if isinstance(a, Const):
        with np.errstate(all="ignore"):
            v = float(np.power(a.value, c))
        if math.isfinite(v):
            return Const(v)
    return Pow(a, float(c))


def func(name: str, a: Expr) -> Expr:
    if isinstance(a, Const):
        with np.errstate(all="ignore"):
            v = float(getattr(np, name)(a.value))
        if math.isfinite(v):
            return Const(v)
    return Func(name, a)


# ---------------------------------------------------------------------------
# differentiation
# ---------------------------------------------------------------------------


def diff(e: Expr, j: int) -> Expr:
    """Exact partial derivative of ``e`` with respect to coordinate ``j``."""
    if isinstance(e, (Const, Param)):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.index == j else ZERO
    if isinstance(e, Neg):
        return neg(diff(e.arg, j))
    if isinstance(e, Bin):
        da, db = diff(e.left, j), diff(e.right, j)
        if e.op == "+":
            return add(da, db)
        if e.op == "-":
            return sub(da, db)
        if e.op == "*":
            return add(mul(da, e.right), mul(e.left, db))
        # quotient rule
        return div(sub(mul(da, e.right), mul(e.left, db)), power(e.right, 2.0))
    if isinstance(e, Pow):
        d = diff(e.base, j)
        if _is(d, 0.0):
            return ZERO
        return mul(mul(Const(e.exponent), power(e.base, e.exponent - 1.0)), d)
    if isinstance(e, Func):
        d = diff(e.arg, j)
        if _is(d, 0.0):
            return ZERO
        a = e.arg
        if e.name == "sin":
            outer = func("cos", a)
        elif e.name == "cos":
            outer = neg(func("sin", a))
        elif e.name == "exp":
            outer = e
        elif e.name == "log":
            return div(d, a)
        elif e.name == "sqrt":
            return div(d, mul(Const(2.0), e))
        elif e.name == "tanh":
            outer = sub(ONE, power(e, 2.0))
        else:  # pragma: no cover - parser rejects other names
            raise FieldSpecError(f"unknown function {e.name}")
        return mul(outer, d)
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# printing / code generation
# ---------------------------------------------------------------------------


def _num(v: float) -> str:
    s = repr(float(v))
    if s in ("inf", "-inf", "nan"):
        raise FieldSpecError(f"cannot print non-finite constant {s}")
    return s


def to_text(e: Expr) -> str:
    """Fully parenthesised text in the field language (re-parses to the same values)."""
    if isinstance(e, Const):
        s = _num(e.value)
        return f"(-{s[1:]})" if s.startswith("-") else s
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Param):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_text(e.arg)})"
    if isinstance(e, Bin):
        return f"({to_text(e.left)} {e.op} {to_text(e.right)})"
    if isinstance(e, Pow):
        s = _num(e.exponent)
        return f"({to_text(e.base)}^{s})"
    if isinstance(e, Func):
        return f"{e.name}({to_text(e.arg)})"
    raise TypeError(e)


def to_python(e: Expr, params: dict[str, float]) -> str:
    if isinstance(e, Const):
        return f"({_num(e.value)})"
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, Param):
        return f"({_num(params[e.name])})"
    if isinstance(e, Neg):
        return f"(-{to_python(e.arg, params)})"
    if isinstance(e, Bin):
        return f"({to_python(e.left, params)} {e.op} {to_python(e.right, params)})"
    if isinstance(e, Pow):
        return f"_np.power({to_python(e.base, params)}, {_num(e.exponent)})"
    if isinstance(e, Func):
        return f"_np.{e.name}({to_python(e.arg, params)})"
    raise TypeError(e)


def evaluate(e: Expr, x, params: dict[str, float]):
    """Tree-walking evaluator (reference path; the compiled one is used in hot loops)."""
    if isinstance(e, Const):
        return np.float64(e.value)
    if isinstance(e, Var):
        return np.float64(x[e.index])
    if isinstance(e, Param):
        return np.float64(params[e.name])
    if isinstance(e, Neg):
        return -evaluate(e.arg, x, params)
    if isinstance(e, Bin):
        a, b = evaluate(e.left, x, params), evaluate(e.right, x, params)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        return a / b
    if isinstance(e, Pow):
        return np.power(evaluate(e.base, x, params), e.exponent)
    if isinstance(e, Func):
        return getattr(np, e.name)(evaluate(e.arg, x, params))
    raise TypeError(e)


def _compile(exprs: list[Expr], shape: tuple[int, ...], d: int, params, name: str) -> Callable:
    lines = [f"def {name}(x):"]
    for i in range(d):
        lines.append(f"    x{i} = x[{i}]")
    lines.append(f"    out = _np.empty({shape!r} + _np.shape(x0))")
    for k, e in enumerate(exprs):
        idx = np.unravel_index(k, shape)
        lines.append(f"    out[{', '.join(str(int(i)) for i in idx)}] = {to_python(e, params)}")
    lines.append("    return out")
    ns: dict = {"_np": np}
    exec(compile("\n".join(lines), f"<{name}>", "exec"), ns)
    return ns[name]


# ---------------------------------------------------------------------------
# FieldSpec
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FieldSpec:
    """A parsed vector field on R^d with its exact Jacobian.

    ``fn(x)`` and ``jac_fn(x)`` accept a point of shape (d,) or a batch of
    shape (d, n) and return arrays of shape (d,) / (d, n) and (d, d) /
    (d, d, n).  They never raise; use :meth:`eval_field` for checked
    evaluation.
    """

    dim: int
    names: tuple[str, ...]
    params: dict[str, float]
    components: tuple[Expr, ...]
    jacobian: tuple[tuple[Expr, ...], ...]
    fn: Callable = field(repr=False, compare=False)
    jac_fn: Callable = field(repr=False, compare=False)

    @classmethod
    def build(cls, names, params, components) -> "FieldSpec":
        d = len(components)
        jac = tuple(tuple(diff(c, j) for j in range(d)) for c in components)
        fn = _compile(list(components), (d,), d, params, "field")
        jfn = _compile([e for row in jac for e in row], (d, d), d, params, "jacobian")
        return cls(d, tuple(names), dict(params), tuple(components), jac, fn, jfn)

    def eval_field(self, point) -> np.ndarray:
        x = _point(point, self.dim)
        with np.errstate(all="ignore"):
            out = self.fn(x)
        bad = np.flatnonzero(~np.isfinite(out))
        if bad.size:
            raise FieldDomainError(int(bad[0]) + 1, tuple(x), "field")
        return out

    def eval_jacobian(self, point) -> np.ndarray:
        x = _point(point, self.dim)
        with np.errstate(all="ignore"):
            out = self.jac_fn(x)
        bad = np.argwhere(~np.isfinite(out))
        if bad.size:
            raise FieldDomainError(int(bad[0][0]) + 1, tuple(x), "jacobian")
        return out

    def __reduce__(self):
        # compiled callables do not pickle; rebuild from the AST
        return (FieldSpec.build, (self.names, self.params, self.components))

    def negated(self) -> "FieldSpec":
        """The time-reversed field -X (Jacobian entries are negated exactly)."""
        return FieldSpec.build(self.names, self.params, tuple(neg(c) for c in self.components))

    def to_text(self) -> str:
        lines = [f"dim = {self.dim}"]
        lines += [f"param {k} = {_num(v)}" for k, v in self.params.items()]
        lines += [f"{n}' = {to_text(c)}" for n, c in zip(self.names, self.components)]
        return "\n".join(lines) + "\n"


def _point(point, d: int) -> np.ndarray:
    x = np.asarray(point, dtype=float)
    if x.shape != (d,):
        raise ValueError(f"expected a point of length {d}, got shape {x.shape}")
    return x


def eval_field(spec: FieldSpec, point) -> np.ndarray:
    return spec.eval_field(point)


def eval_jacobian(spec: FieldSpec, point) -> np.ndarray:
    return spec.eval_jacobian(point)


# ---------------------------------------------------------------------------
# tokenizer and recursive-descent parser
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<newline>\n)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^=()'])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # number | ident | op | newline | eof
    text: str
    line: int
    col: int


def tokenize(source: str) -> list[Token]:
    toks: list[Token] = []
    line, line_start, pos = 1, 0, 0
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if m is None:
            raise FieldSyntaxError(f"unexpected character {source[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "newline":
            toks.append(Token("newline", "\n", line, pos - line_start + 1))
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            toks.append(Token(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    toks.append(Token("newline", "\n", line, pos - line_start + 1))
    toks.append(Token("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, source: str):
        self.toks = tokenize(source)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def error(self, msg: str, expected=()):
        t = self.tok
        raise FieldSyntaxError(msg, t.line, t.col, expected)

    def accept(self, kind: str, text: str | None = None) -> Token | None:
        t = self.tok
        if t.kind == kind and (text is None or t.text == text):
            self.i += 1
            return t
        return None

    def expect(self, kind: str, text: str | None = None, what: str | None = None) -> Token:
        t = self.accept(kind, text)
        if t is None:
            found = self.tok.text or self.tok.kind
            self.error(f"unexpected {found!r}", [what or text or kind])
        return t

    def skip_newlines(self):
        while self.accept("newline"):
            pass

    # file := header stmt*
    def parse_file(self):
        self.skip_newlines()
        self.expect("ident", "dim", "'dim'")
        self.expect("op", "=", "'='")
        t = self.expect("number", what="integer dimension")
        if not re.fullmatch(r"\d+", t.text) or int(t.text) < 1:
            raise FieldSyntaxError("dimension must be a positive integer", t.line, t.col, ["INT"])
        dim = int(t.text)
        self.expect("newline", what="newline")
        params: dict[str, float] = {}
        eqs: list[tuple[Token, Expr]] = []
        self.skip_newlines()
        while self.tok.kind != "eof":
            if self.tok.kind == "ident" and self.tok.text == "param":
                self.i += 1
                name = self.expect("ident", what="parameter name")
                self.expect("op", "=", "'='")
                sign = -1.0 if self.accept("op", "-") else 1.0
                num = self.expect("number", what="NUMBER")
                if name.text in params:
                    raise FieldSyntaxError(f"parameter {name.text!r} declared twice", name.line, name.col)
                params[name.text] = sign * float(num.text)
            else:
                name = self.expect("ident", what="coordinate name or 'param'")
                self.expect("op", "'", "\"'\"")
                self.expect("op", "=", "'='")
                eqs.append((name, self.parse_expr()))
            self.expect("newline", what="newline")
            self.skip_newlines()
        return dim, params, eqs

    # expr := term (("+"|"-") term)*
    def parse_expr(self) -> Expr:
        e = self.parse_term()
        while True:
            if self.accept("op", "+"):
                e = Bin("+", e, self.parse_term())
            elif self.accept("op", "-"):
                e = Bin("-", e, self.parse_term())
            else:
                return e

    # term := factor (("*"|"/") factor)*
    def parse_term(self) -> Expr:
        e = self.parse_factor()
        while True:
            if self.accept("op", "*"):
                e = Bin("*", e, self.parse_factor())
            elif self.accept("op", "/"):
                e = Bin("/", e, self.parse_factor())
            else:
                return e

    # factor := ("-")? atom ("^" NUMBER)?
    def parse_factor(self) -> Expr:
        negate = self.accept("op", "-") is not None
        e = self.parse_atom()
        if self.accept("op", "^"):
            sign = -1.0 if self.accept("op", "-") else 1.0
            num = self.expect("number", what="NUMBER exponent")
            e = Pow(e, sign * float(num.text))
        return Neg(e) if negate else e

    # atom := NUMBER | IDENT | FUNC "(" expr ")" | "(" expr ")"
    def parse_atom(self) -> Expr:
        t = self.tok
        if self.accept("number"):
            return Const(float(t.text))
        if self.accept("op", "("):
            e = self.parse_expr()
            self.expect("op", ")", "')'")
            return e
        if self.accept("ident"):
            if t.text in FUNCTIONS and self.tok.kind == "op" and self.tok.text == "(":
                self.i += 1
                e = self.parse_expr()
                self.expect("op", ")", "')'")
                return Func(t.text, e)
            if self.tok.kind == "op" and self.tok.text == "'":
                raise FieldSyntaxError(
                    f"primed identifier {t.text}' is not allowed in an expression", t.line, t.col,
                    ["operator", "newline"],
                )
            return _Name(t.text, t.line, t.col)
        self.error(f"unexpected {(t.text or t.kind)!r}", ["NUMBER", "identifier", "function", "'('"])


@dataclass(frozen=True)
class _Name(Expr):
    # unresolved identifier, replaced by Var or Param after the whole file is read
    name: str
    line: int
    col: int


def _resolve(e: Expr, coords: dict[str, int], params: dict[str, float]) -> Expr:
    if isinstance(e, _Name):
        if e.name in coords:
            return Var(coords[e.name], e.name)
        if e.name in params:
            return Param(e.name)
        raise UndeclaredIdentifier(f"line {e.line}, column {e.col}: undeclared identifier {e.name!r}")
    if isinstance(e, Neg):
        return Neg(_resolve(e.arg, coords, params))
    if isinstance(e, Bin):
        return Bin(e.op, _resolve(e.left, coords, params), _resolve(e.right, coords, params))
    if isinstance(e, Pow):
        return Pow(_resolve(e.base, coords, params), e.exponent)
    if isinstance(e, Func):
        return Func(e.name, _resolve(e.arg, coords, params))
    return e


def parse_field(source: str) -> FieldSpec:
    """Parse field-definition text into a :class:`FieldSpec`."""
    dim, params, eqs = _Parser(source).parse_file()
    coords: dict[str, int] = {}
    for tok, _ in eqs:
        if tok.text in coords:
            raise DimensionMismatch(f"line {tok.line}: coordinate {tok.text!r} defined twice")
        if tok.text in params or tok.text in FUNCTIONS or tok.text in ("dim", "param"):
            raise FieldSyntaxError(f"{tok.text!r} cannot be a coordinate name", tok.line, tok.col)
        coords[tok.text] = len(coords)
    if len(coords) != dim:
        raise DimensionMismatch(f"dim = {dim} but {len(coords)} primed coordinates are defined")
    comps = tuple(_resolve(e, coords, params) for _, e in eqs)
    return FieldSpec.build(tuple(coords), params, comps)


def load_field(path) -> FieldSpec:
    with open(path) as fh:
        return parse_field(fh.read())


LORENZ_SOURCE = """\
# classical Lorenz system
dim = 3
param sigma = 10
param rho = 28
param beta = 2.6666666666666665
x' = sigma*(y - x)
y' = x*(rho - z) - y
z' = x*y - beta*z
"""
