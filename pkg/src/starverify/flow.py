"""Orbits of the flow, the variational (tangent) flow, and periodic orbits by shooting.

The integrator is a Dormand-Prince 5(4) pair with PI step-size control and its
native 4th-order dense output.  Negative final times integrate backwards with
negative steps, so integrating ``-X`` backwards reproduces integrating ``X``
forwards bit for bit.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .fieldspec import FieldSpec

# Dormand-Prince coefficients
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
_D = np.array([
    -12715105075 / 11282082432, 0.0, 87487479700 / 32700410799, -10690763975 / 1880347072,
    701980252875 / 199316789632, -1453857185 / 822651844, 69997945 / 29380423,
])

_SAFE, _FAC_MIN, _FAC_MAX, _BETA = 0.9, 0.2, 10.0, 0.04
_EXPO = 0.2 - 0.75 * _BETA


class IntegrationError(RuntimeError):
    def __init__(self, message: str, t: float, y):
        self.t = t
        self.y = np.array(y, copy=True)
        super().__init__(f"{message} at t={t!r}")


class StepSizeUnderflow(IntegrationError):
    pass


@dataclass
class FlowOptions:
    tol: float = 1e-9
    atol: Optional[float] = None
    max_steps: int = 1_000_000
    region: Optional[tuple] = None  # (lo, hi) analysis box; leaving it truncates the orbit
    renorm_time: float = 1.0  # QR renormalisation interval for frames
    newton_tol: float = 1e-10
    max_newton: int = 25
    max_return_time: float = 100.0
    min_return_time: float = 1e-3
    floquet_tol: float = 1e-6

    @property
    def abs_tol(self) -> float:
        return self.tol if self.atol is None else self.atol


@dataclass
class Solution:
    """Accepted steps of one integration with dense output."""

    t: np.ndarray
    y: np.ndarray
    coeffs: np.ndarray  # (nsteps, 5, m) dense-output polynomial data
    status: str = "ok"  # ok | escaped | stopped

    def __call__(self, s):
        s = float(s)
        t = self.t
        forward = t[-1] >= t[0]
        if len(t) == 1:
            return self.y[0].copy()
        if forward:
            k = int(np.clip(np.searchsorted(t, s, side="right") - 1, 0, len(t) - 2))
        else:
            k = int(np.clip(np.searchsorted(-t, -s, side="right") - 1, 0, len(t) - 2))
        h = t[k + 1] - t[k]
        th = (s - t[k]) / h
        r = self.coeffs[k]
        th1 = 1.0 - th
        return r[0] + th * (r[1] + th1 * (r[2] + th * (r[3] + th1 * r[4])))

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    @property
    def y_end(self) -> np.ndarray:
        return self.y[-1]


def _rms(e, sc):
    return math.sqrt(float(np.mean((e / sc) ** 2)))


def _initial_step(f, t0, y0, f0, direction, order, rtol, atol):
    sc = atol + rtol * np.abs(y0)
    d0, d1 = _rms(y0, sc), _rms(f0, sc)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + direction * h0 * f0
    f1 = f(t0 + direction * h0, y1)
    d2 = _rms(f1 - f0, sc) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / (order + 1))
    return min(100 * h0, h1)


def dopri5(
    f: Callable,
    t0: float,
    y0,
    t1: float,
    rtol: float = 1e-9,
    atol: float = 1e-9,
    max_steps: int = 1_000_000,
    stop: Optional[Callable] = None,
    h_init: Optional[float] = None,
    h_max: float = math.inf,
) -> Solution:
    """Integrate ``y' = f(t, y)`` from ``t0`` to ``t1`` (either direction).

    ``stop(t, y)`` is checked after every accepted step; returning True ends
    the integration with status "stopped".
    """
    y = np.array(y0, dtype=float)
    ts, ys, cs = [float(t0)], [y.copy()], []
    span = t1 - t0
    if span == 0.0:
        return Solution(np.array(ts), np.array(ys), np.zeros((0, 5, y.size)))
    direction = 1.0 if span > 0 else -1.0
    t = float(t0)
    k1 = f(t, y)
    h = abs(h_init) if h_init else _initial_step(f, t, y, k1, direction, 4, rtol, atol)
    h = min(h, abs(span), h_max)
    facold = 1e-4
    reject = False
    k = [None] * 7
    for _ in range(max_steps):
        if abs(h) < 1e-14 * max(1.0, abs(t)):
            raise StepSizeUnderflow("step size underflow", t, y)
        last = False
        if direction * (t + direction * h - t1) >= 0:
            h = abs(t1 - t)
            last = True
        hs = direction * h
        k[0] = k1
        for i in range(1, 7):
            acc = _A[i][0] * k[0]
            for j in range(1, i):
                if _A[i][j] != 0.0:
                    acc = acc + _A[i][j] * k[j]
            k[i] = f(t + _C[i] * hs, y + hs * acc)
        ynew = y + hs * (
            _A[6][0] * k[0] + _A[6][2] * k[2] + _A[6][3] * k[3] + _A[6][4] * k[4] + _A[6][5] * k[5]
        )
        err_vec = hs * (_E[0] * k[0] + _E[2] * k[2] + _E[3] * k[3] + _E[4] * k[4] + _E[5] * k[5] + _E[6] * k[6])
        sc = atol + rtol * np.maximum(np.abs(y), np.abs(ynew))
        err = _rms(err_vec, sc)
        if not math.isfinite(err):
            if not np.all(np.isfinite(y)):
                raise IntegrationError("non-finite state", t, y)
            h *= 0.2
            reject = True
            continue
        fac11 = err ** _EXPO if err > 0 else 0.0
        fac = fac11 / facold ** _BETA
        fac = max(1.0 / _FAC_MAX, min(1.0 / _FAC_MIN, fac / _SAFE))
        if err <= 1.0:
            facold = max(err, 1e-4)
            ydiff = ynew - y
            bspl = hs * k[0] - ydiff
            cs.append(np.stack([
                y, ydiff, bspl, ydiff - hs * k[6] - bspl,
                hs * (_D[0] * k[0] + _D[2] * k[2] + _D[3] * k[3] + _D[4] * k[4] + _D[5] * k[5] + _D[6] * k[6]),
            ]))
            t = t1 if last else t + hs
            y = ynew
            k1 = k[6]
            ts.append(t)
            ys.append(y.copy())
            if not np.all(np.isfinite(y)):
                raise IntegrationError("non-finite state", t, y)
            if stop is not None and stop(t, y):
                return Solution(np.array(ts), np.array(ys), np.array(cs), "stopped")
            if last:
                return Solution(np.array(ts), np.array(ys), np.array(cs))
            hnew = h / fac
            if reject:
                hnew = min(hnew, h)
            h = min(hnew, h_max)
            reject = False
        else:
            h = h / min(1.0 / _FAC_MIN, fac11 / _SAFE)
            reject = True
    raise IntegrationError("maximum number of steps exceeded", t, y)


def dopri5_batch(f: Callable, Y0: np.ndarray, T: float, rtol=1e-6, atol=1e-6,
                 alive: Optional[Callable] = None, max_steps: int = 100_000):
    """Integrate many initial conditions (rows of ``Y0``) over [0, T] with a shared step.

    ``f`` maps an (n, m) array to an (n, m) array.  ``alive(Y)`` returns a
    boolean mask; rows that die are frozen and reported.  Returns (Y, ok).
    """
    Y = np.array(Y0, dtype=float)
    n = Y.shape[0]
    ok = np.ones(n, bool)
    if n == 0 or T == 0:
        return Y, ok
    direction = 1.0 if T > 0 else -1.0
    idx = np.arange(n)
    y = Y.copy()
    t = 0.0
    k1 = f(y)
    h = min(abs(T), 0.01)
    facold = 1e-4
    k = [None] * 7
    for _ in range(max_steps):
        if y.shape[0] == 0:
            break
        last = False
        if direction * (t + direction * h - T) >= 0:
            h = abs(T - t)
            last = True
        hs = direction * h
        k[0] = k1
        with np.errstate(all="ignore"):
            for i in range(1, 7):
                acc = _A[i][0] * k[0]
                for j in range(1, i):
                    if _A[i][j] != 0.0:
                        acc = acc + _A[i][j] * k[j]
                k[i] = f(y + hs * acc)
            ynew = y + hs * (_A[6][0] * k[0] + _A[6][2] * k[2] + _A[6][3] * k[3] + _A[6][4] * k[4] + _A[6][5] * k[5])
            ev = hs * (_E[0] * k[0] + _E[2] * k[2] + _E[3] * k[3] + _E[4] * k[4] + _E[5] * k[5] + _E[6] * k[6])
            sc = atol + rtol * np.maximum(np.abs(y), np.abs(ynew))
            errs = np.sqrt(np.mean((ev / sc) ** 2, axis=1))
        bad = ~np.isfinite(errs) | ~np.all(np.isfinite(ynew), axis=1)
        if bad.any():
            # rows blowing up are dropped rather than shrinking everyone's step
            ok[idx[bad]] = False
            Y[idx[bad]] = np.nan
            keep = ~bad
            idx, y, k1 = idx[keep], y[keep], k1[keep]
            continue
        err = float(errs.max()) if errs.size else 0.0
        fac11 = err ** _EXPO if err > 0 else 0.0
        fac = max(1.0 / _FAC_MAX, min(1.0 / _FAC_MIN, fac11 / facold ** _BETA / _SAFE))
        if err <= 1.0:
            facold = max(err, 1e-4)
            t = T if last else t + hs
            y = ynew
            k1 = k[6]
            if alive is not None:
                m = alive(y)
                if not m.all():
                    ok[idx[~m]] = False
                    Y[idx[~m]] = y[~m]
                    idx, y, k1 = idx[m], y[m], k1[m]
            if last:
                break
            h = h / fac
        else:
            h = h / min(1.0 / _FAC_MIN, fac11 / _SAFE)
            if h < 1e-12:
                raise StepSizeUnderflow("batch step size underflow", t, y[0] if len(y) else [])
    Y[idx] = y
    return Y, ok


def dopri5_many(f: Callable, Y0: np.ndarray, t1: float = 1.0, rtol: float = 1e-9, atol: float = 1e-9,
                hook: Optional[Callable] = None, max_steps: int = 1_000_000, h_max: float = math.inf):
    """Integrate every row of ``Y0`` over [0, t1] with one shared step sequence.

    Unlike :func:`dopri5_batch` no row is ever dropped, so ``f`` always sees
    the full (n, m) array.  Rows whose state turns non-finite are frozen and
    reported in the returned mask.  ``hook(ya, yb, dense)`` runs after every
    accepted step; ``dense(theta, rows=None)`` evaluates the step's
    interpolant at the fraction ``theta`` (scalar or per-row array), optionally
    on a subset of rows.
    """
    Y = np.array(Y0, dtype=float)
    n = Y.shape[0]
    ok = np.ones(n, bool)
    if n == 0 or t1 == 0:
        return Y, ok
    direction = 1.0 if t1 > 0 else -1.0
    t = 0.0

    def F(y):
        with np.errstate(all="ignore"):
            k = f(y)
        k[~ok] = 0.0
        return k

    k1 = F(Y)
    sc0 = atol + rtol * np.abs(Y)
    d1 = float(np.sqrt(np.mean((k1 / sc0) ** 2)))
    h = min(abs(t1), h_max, 0.01 / d1 if d1 > 1e-12 else abs(t1))
    facold = 1e-4
    k = [None] * 7
    for _ in range(max_steps):
        last = False
        if direction * (t + direction * h - t1) >= 0:
            h = abs(t1 - t)
            last = True
        hs = direction * h
        k[0] = k1
        for i in range(1, 7):
            acc = _A[i][0] * k[0]
            for j in range(1, i):
                if _A[i][j] != 0.0:
                    acc = acc + _A[i][j] * k[j]
            k[i] = F(Y + hs * acc)
        with np.errstate(all="ignore"):
            ynew = Y + hs * (_A[6][0] * k[0] + _A[6][2] * k[2] + _A[6][3] * k[3] + _A[6][4] * k[4] + _A[6][5] * k[5])
            ev = hs * (_E[0] * k[0] + _E[2] * k[2] + _E[3] * k[3] + _E[4] * k[4] + _E[5] * k[5] + _E[6] * k[6])
            sc = atol + rtol * np.maximum(np.abs(Y), np.abs(ynew))
            errs = np.sqrt(np.mean((ev / sc) ** 2, axis=1))
        bad = ok & (~np.isfinite(errs) | ~np.all(np.isfinite(ynew), axis=1))
        if bad.any():
            if h > 1e-10:
                h *= 0.2
                continue
            ok &= ~bad
            ynew[bad] = Y[bad]
            errs[bad] = 0.0
        err = float(errs[ok].max()) if ok.any() else 0.0
        fac11 = err ** _EXPO if err > 0 else 0.0
        fac = max(1.0 / _FAC_MAX, min(1.0 / _FAC_MIN, fac11 / facold ** _BETA / _SAFE))
        if err <= 1.0:
            facold = max(err, 1e-4)
            if hook is not None:
                ydiff = ynew - Y
                bspl = hs * k[0] - ydiff
                r = (Y, ydiff, bspl, ydiff - hs * k[6] - bspl,
                     hs * (_D[0] * k[0] + _D[2] * k[2] + _D[3] * k[3] + _D[4] * k[4] + _D[5] * k[5] + _D[6] * k[6]))

                def dense(theta, rows=None, r=r):
                    if rows is not None:
                        r = [c[rows] for c in r]
                    th = np.asarray(theta, float)
                    if th.ndim:
                        th = th[:, None]
                    th1 = 1.0 - th
                    return r[0] + th * (r[1] + th1 * (r[2] + th * (r[3] + th1 * r[4])))

                hook(Y, ynew, dense)
            t = t1 if last else t + hs
            Y = ynew
            k1 = k[6]
            if last:
                return Y, ok
            h = min(h / fac, h_max)
        else:
            h = h / min(1.0 / _FAC_MIN, fac11 / _SAFE)
            if h < 1e-14 * max(1.0, abs(t)):
                raise StepSizeUnderflow("batch step size underflow", t, Y[0])
    raise IntegrationError("maximum number of steps exceeded", t, Y[0])


def variational_batch(spec: FieldSpec, X0, P0, T, rtol=1e-9, atol=None, hook=None):
    """Flow rows of X0 (n, d) together with tangent blocks P0 (n, d, k) for times T (scalar or (n,)).

    Each row is integrated in rescaled time s in [0, 1] with dynamics scaled
    by its own T, so different horizons share one step sequence.  Returns
    (X, P, ok).
    """
    X0 = np.atleast_2d(np.asarray(X0, float))
    n, d = X0.shape
    P0 = np.asarray(P0, float).reshape(n, d, -1)
    kk = P0.shape[2]
    Tv = np.broadcast_to(np.asarray(T, float), (n,)).copy()
    fn, jfn = spec.fn, spec.jac_fn

    def f(Y):
        x = Y[:, :d].T
        P = Y[:, d:].reshape(n, d, kk)
        J = np.moveaxis(np.broadcast_to(jfn(x), (d, d, n)), 2, 0)
        dx = np.broadcast_to(fn(x), (d, n)).T
        dP = J @ P
        return Tv[:, None] * np.concatenate([dx, dP.reshape(n, d * kk)], axis=1)

    Y0 = np.concatenate([X0, P0.reshape(n, d * kk)], axis=1)
    Y, ok = dopri5_many(f, Y0, 1.0, rtol, rtol if atol is None else atol, hook=hook)
    return Y[:, :d], Y[:, d:].reshape(n, d, kk), ok


# ---------------------------------------------------------------------------
# orbits
# ---------------------------------------------------------------------------


@dataclass
class JetFrame:
    t: float
    x: np.ndarray
    frame: Optional[np.ndarray] = None
    log_abs_det: float = 0.0
    det_flag: bool = False


@dataclass
class Orbit:
    t: np.ndarray
    x: np.ndarray
    escaped: bool
    solution: Solution = field(repr=False)

    def frames(self) -> list[JetFrame]:
        return [JetFrame(float(t), x) for t, x in zip(self.t, self.x)]

    @property
    def final(self) -> np.ndarray:
        return self.x[-1]


def _region_stop(region):
    if region is None:
        return None
    lo, hi = (np.asarray(b, float) for b in region)

    def stop(t, y):
        x = y[: lo.size]
        return bool(np.any(x < lo) or np.any(x > hi))

    return stop


def integrate_orbit(spec: FieldSpec, x0, T: float, opts: FlowOptions | None = None) -> Orbit:
    """Adaptive orbit of the flow from ``x0`` over time ``T`` (negative T integrates -X)."""
    opts = opts or FlowOptions()
    fn = spec.fn
    sol = dopri5(lambda t, y: fn(y), 0.0, np.asarray(x0, float), T, opts.tol, opts.abs_tol,
                 opts.max_steps, stop=_region_stop(opts.region))
    return Orbit(sol.t, sol.y, sol.status == "stopped", sol)


def variational_rhs(spec: FieldSpec):
    d = spec.dim
    fn, jfn = spec.fn, spec.jac_fn

    def rhs(t, y):
        x = y[:d]
        P = y[d:].reshape(d, -1)
        return np.concatenate([fn(x), (jfn(x) @ P).ravel()])

    return rhs


def integrate_variational(spec: FieldSpec, x0, P0, T: float, opts: FlowOptions | None = None,
                          stop=None) -> Solution:
    """Integrate x together with a block of tangent vectors P (d x k)."""
    opts = opts or FlowOptions()
    y0 = np.concatenate([np.asarray(x0, float), np.asarray(P0, float).ravel()])
    return dopri5(variational_rhs(spec), 0.0, y0, T, opts.tol, opts.abs_tol, opts.max_steps, stop=stop)


def tangent_flow(spec: FieldSpec, x0, T: float, opts: FlowOptions | None = None) -> JetFrame:
    """Dphi^T at x0, integrated with QR renormalisation every ``opts.renorm_time``.

    The frame is rebuilt as Q_n R_n ... R_1; the log of |det| is accumulated
    from the R diagonals so it stays meaningful for long horizons.
    """
    opts = opts or FlowOptions()
    d = spec.dim
    x = np.asarray(x0, float)
    Q = np.eye(d)
    Rs = []
    logdet = 0.0
    t = 0.0
    n = max(1, int(math.ceil(abs(T) / opts.renorm_time - 1e-12)))
    stop = _region_stop(opts.region)
    for i in range(n):
        dt = T / n
        sol = integrate_variational(spec, x, Q, dt, opts, stop=stop)
        x = sol.y_end[:d]
        W = sol.y_end[d:].reshape(d, d)
        if sol.status == "stopped":
            raise IntegrationError("orbit left the analysis region", t + sol.t_end, x)
        Q, R = np.linalg.qr(W)
        s = np.sign(np.diag(R))
        s[s == 0] = 1.0
        Q, R = Q * s, s[:, None] * R
        Rs.append(R)
        logdet += float(np.sum(np.log(np.abs(np.diag(R)))))
        t += dt
    frame = Q.copy()
    prod = np.eye(d)
    for R in Rs:
        prod = R @ prod
    frame = Q @ prod
    flag = abs(logdet) > math.log(1e12)
    return JetFrame(float(T), x, frame, logdet, flag)


# ---------------------------------------------------------------------------
# sections and periodic orbits
# ---------------------------------------------------------------------------


class NoReturnError(RuntimeError):
    pass


class NewtonDivergence(RuntimeError):
    pass


class NonTransversalCrossing(RuntimeError):
    pass


@dataclass(frozen=True)
class Section:
    """Affine hyperplane {x : <normal, x - point> = 0}, crossed where <normal, X> > 0."""

    normal: tuple
    point: tuple

    def g(self, x) -> float:
        return float(np.dot(self.normal, np.asarray(x[: len(self.normal)]) - self.point))

    @staticmethod
    def coordinate(d: int, axis: int, value: float = 0.0) -> "Section":
        n = np.zeros(d)
        n[axis] = 1.0
        p = np.zeros(d)
        p[axis] = value
        return Section(tuple(n), tuple(p))


@dataclass
class PeriodicOrbit:
    seed: np.ndarray
    period: float
    monodromy: np.ndarray
    multipliers: np.ndarray  # nontrivial Floquet multipliers
    floquet_exponents: np.ndarray  # sorted log|mu| / period
    stable_index: int
    hyperbolic: bool
    flow_multiplier: complex
    newton_steps: int = 0
    residual: float = 0.0

    @property
    def index(self) -> int:
        return self.stable_index


def _first_return(spec: FieldSpec, x, section: Section, opts: FlowOptions, with_frame: bool):
    d = spec.dim
    nrm = np.asarray(section.normal, float)
    lo_hi = None if opts.region is None else tuple(np.asarray(b, float) for b in opts.region)
    state = {"prev": section.g(x), "hit": False}

    def stop(t, y):
        g = section.g(y[:d])
        crossed = state["prev"] < 0.0 <= g and t >= opts.min_return_time
        state["prev"] = g
        if crossed:
            state["hit"] = True
            return True
        if np.linalg.norm(y[:d]) > 1e8:
            return True
        if lo_hi is not None and (np.any(y[:d] < lo_hi[0]) or np.any(y[:d] > lo_hi[1])):
            return True
        return False

    if with_frame:
        sol = integrate_variational(spec, x, np.eye(d), opts.max_return_time, opts, stop=stop)
    else:
        sol = dopri5(lambda t, y: spec.fn(y), 0.0, np.asarray(x, float), opts.max_return_time,
                     opts.tol, opts.abs_tol, opts.max_steps, stop=stop)
    if sol.status != "stopped" or not state["hit"] or section.g(sol.y_end[:d]) < 0.0:
        raise NoReturnError(f"no return to the section within t={opts.max_return_time}")
    t_a, t_b = float(sol.t[-2]), float(sol.t[-1])
    ga = section.g(sol(t_a)[:d])
    if ga >= 0.0:
        tau = t_a
    else:
        tau = brentq(lambda s: section.g(sol(s)[:d]), t_a, t_b, xtol=1e-13, rtol=4 * np.finfo(float).eps)
    y = sol(tau)
    P = y[:d]
    vel = spec.fn(P)
    if abs(float(nrm @ vel)) < 1e-10 * max(1.0, np.linalg.norm(vel)):
        raise NonTransversalCrossing(f"orbit touches the section tangentially at {P}")
    return tau, P, (y[d:].reshape(d, d) if with_frame else None)


def _shoot(spec, x, section, B, nrm, opts):
    d = spec.dim
    steps = 0
    res_prev = math.inf
    for it in range(opts.max_newton + 1):
        tau, P, Phi = _first_return(spec, x, section, opts, True)
        r = P - x
        res = float(np.linalg.norm(r))
        if res <= opts.newton_tol:
            break
        if it == opts.max_newton or not math.isfinite(res) or (it > 3 and res > 1e3 * res_prev):
            raise NewtonDivergence(f"Newton did not converge (residual {res:.3e})")
        vel = spec.fn(P)
        DP = (np.eye(d) - np.outer(vel, nrm) / float(nrm @ vel)) @ Phi
        J = B.T @ DP @ B - np.eye(d - 1)
        dc = np.linalg.lstsq(J, -(B.T @ r), rcond=1e-12)[0]
        # damped step: accept the first that lowers the residual
        lam = 1.0
        for _ in range(8):
            x_try = x + lam * (B @ dc)
            try:
                _, P_try, _ = _first_return(spec, x_try, section, opts, False)
                if np.linalg.norm(P_try - x_try) < res:
                    break
            except (NoReturnError, NonTransversalCrossing):
                pass
            lam *= 0.5
        x = x_try
        steps += 1
        res_prev = res
    return x, tau, Phi, steps, res


def find_periodic_orbit(spec: FieldSpec, seed, section: Section, opts: FlowOptions | None = None) -> PeriodicOrbit:
    """Newton iteration on the first-return map to ``section``."""
    opts = opts or FlowOptions()
    d = spec.dim
    nrm = np.asarray(section.normal, float)
    nrm = nrm / np.linalg.norm(nrm)
    x = np.asarray(seed, float)
    if abs(section.g(x)) > 1e-12:
        _, x, _ = _first_return(spec, x, section, FlowOptions(**{**opts.__dict__, "min_return_time": 0.0}), False)
    # orthonormal basis of the section's tangent hyperplane
    Qfull, _ = np.linalg.qr(np.column_stack([nrm, np.eye(d)]))
    B = Qfull[:, 1:d]
    x, tau, Phi, steps, res = _shoot(spec, x, section, B, nrm, opts)
    if opts.tol > 1e-12:
        # polish at a tight tolerance so the period closes the orbit to ~newton_tol
        fine = FlowOptions(**{**opts.__dict__, "tol": 1e-12})
        x, tau, Phi, more, res = _shoot(spec, x, section, B, nrm, fine)
        steps += more
    return _floquet(spec, x, tau, Phi, steps, res, opts)


def _floquet(spec, x, period, M, steps, res, opts) -> PeriodicOrbit:
    mu, V = np.linalg.eig(M)
    v = spec.fn(x)
    vhat = v / np.linalg.norm(v)
    align = np.abs(V.conj().T @ vhat) / np.linalg.norm(V, axis=0)
    k = int(np.argmax(align))
    trivial = mu[k]
    rest = np.delete(mu, k)
    order = np.argsort(np.abs(rest))
    rest = rest[order]
    expo = np.log(np.abs(rest)) / period
    hyper = bool(np.all(np.abs(np.abs(rest) - 1.0) > opts.floquet_tol))
    return PeriodicOrbit(
        seed=x, period=float(period), monodromy=M, multipliers=rest, floquet_exponents=np.sort(expo),
        stable_index=int(np.sum(np.abs(rest) < 1.0)), hyperbolic=hyper, flow_multiplier=complex(trivial),
        newton_steps=steps, residual=res,
    )


# ---------------------------------------------------------------------------
# CSV dumps
# ---------------------------------------------------------------------------


def write_orbit_csv(path, t, x, names=None):
    x = np.atleast_2d(x)
    names = names or [f"x_{i + 1}" for i in range(x.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *names])
        for ti, xi in zip(t, x):
            w.writerow([format(float(ti), ".17g"), *(format(float(v), ".17g") for v in xi)])


def write_frames_csv(path, t, frames):
    frames = [np.asarray(F) for F in frames]
    d = frames[0].shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *(f"m_{i + 1}_{j + 1}" for i in range(d) for j in range(d))])
        for ti, F in zip(t, frames):
            w.writerow([format(float(ti), ".17g"), *(format(float(v), ".17g") for v in F.ravel())])
