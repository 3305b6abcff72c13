"""Normal-bundle dynamics over line elements.

Line elements are pairs (x, L) with L a unit line in T_xM.  The linear
Poincaré flow acts on vectors normal to the flow direction, the extended
version on vectors normal to an arbitrary line, and the cocycles h_sigma
measure the growth of the line while the orbit sits inside a neighbourhood
U_sigma of a singularity.

Everything heavy runs through :func:`flow.variational_batch`, which moves
many base points at once.  Long-orbit data for the hyperbolicity estimators
is stored in a :class:`ChainSet`: per-substep frame matrices along orbits,
from which window products of any horizon can be assembled.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import expm

from .fieldspec import FieldSpec
from .flow import dopri5_many, variational_batch
from .singularity import SingularityRecord, find_singularities

REGULAR_TOL = 1e-10
DEGENERATE_TOL = 1e-8


class FlowDirectionDegenerate(ValueError):
    pass


class EmptyExtendedSet(ValueError):
    pass


class InvalidCocycleConfig(ValueError):
    pass


def canonical_line(L) -> np.ndarray:
    L = np.asarray(L, float)
    nrm = np.linalg.norm(L)
    if not nrm > 0:
        raise ValueError("zero vector does not span a line")
    L = L / nrm
    nz = np.flatnonzero(np.abs(L) > 1e-15)
    if L[nz[0]] < 0:
        L = -L
    return L


def _unit_rows(V):
    return V / np.linalg.norm(V, axis=-1, keepdims=True)


def normal_projection(v, L) -> np.ndarray:
    """Orthogonal projection of v onto the hyperplane normal to the unit line L."""
    v = np.asarray(v, float)
    L = np.asarray(L, float)
    return v - (v @ L) * L


@dataclass
class LineElement:
    x: np.ndarray
    L: np.ndarray
    regular: bool = False

    def __post_init__(self):
        self.x = np.asarray(self.x, float)
        self.L = canonical_line(self.L)

    @classmethod
    def lift(cls, spec: FieldSpec, x) -> "LineElement":
        X = spec.eval_field(x)
        if np.linalg.norm(X) <= REGULAR_TOL:
            raise FlowDirectionDegenerate(f"no flow direction at {np.asarray(x).tolist()}")
        return cls(x, X, True)


@dataclass
class NormalVector:
    carrier: LineElement
    v: np.ndarray

    def __post_init__(self):
        self.v = normal_projection(self.v, self.carrier.L)


# ---------------------------------------------------------------------------
# cocycle configuration

@dataclass
class CocycleConfig:
    centers: np.ndarray  # (m, d)
    radii: np.ndarray  # (m,)
    saddle_values: list
    ids: list
    swap_sides: bool = False

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, float))
        self.radii = np.asarray(self.radii, float).reshape(-1)
        if self.centers.shape[0] == 0:
            self.centers = self.centers.reshape(0, max(self.centers.shape[1], 1))

    @property
    def m(self) -> int:
        return len(self.ids)

    @property
    def convention(self) -> str:
        return "swapped" if self.swap_sides else "literal"

    @classmethod
    def from_records(cls, records: Sequence[SingularityRecord], radius=None, swap_sides=False):
        P = np.array([r.position for r in records], float).reshape(len(records), -1) if records else np.zeros((0, 1))
        m = len(records)
        if radius is None:
            radii = np.ones(m)
            for i in range(m):
                if m > 1:
                    dist = np.linalg.norm(P - P[i], axis=1)
                    dist[i] = np.inf
                    radii[i] = min(1.0, 0.5 * dist.min())
        else:
            radii = np.broadcast_to(np.asarray(radius, float), (m,)).copy()
        ids = [r.ident if r.ident is not None else i for i, r in enumerate(records)]
        if len(set(ids)) != m:
            ids = list(range(m))
        return cls(P, radii, [r.saddle_value for r in records], ids, swap_sides)

    def with_convention(self, swap_sides: bool) -> "CocycleConfig":
        return CocycleConfig(self.centers, self.radii, list(self.saddle_values), list(self.ids), swap_sides)

    def side(self, which: str) -> list[int]:
        """Column indices of the singularities in S_minus or S_plus."""
        if which not in ("minus", "plus"):
            raise ValueError(f"side must be 'minus' or 'plus', got {which!r}")
        pos = [i for i, sv in enumerate(self.saddle_values) if sv is not None and sv > 0]
        neg = [i for i, sv in enumerate(self.saddle_values) if sv is not None and sv < 0]
        # literal: S_minus holds the positive saddle values
        minus, plus = (neg, pos) if self.swap_sides else (pos, neg)
        return minus if which == "minus" else plus

    def column(self, sigma) -> int:
        try:
            return self.ids.index(sigma)
        except ValueError:
            raise KeyError(f"unknown singularity id {sigma!r}") from None

    def validate(self, spec: Optional[FieldSpec] = None):
        """Check disjointness and, given ``spec``, that each ball holds exactly one zero."""
        m = self.m
        for i in range(m):
            if not self.radii[i] > 0:
                raise InvalidCocycleConfig(f"radius of U_{self.ids[i]} must be positive")
            for j in range(i + 1, m):
                if np.linalg.norm(self.centers[i] - self.centers[j]) < self.radii[i] + self.radii[j]:
                    raise InvalidCocycleConfig(f"U_{self.ids[i]} and U_{self.ids[j]} overlap")
        if spec is None or m == 0:
            return
        for i in range(m):
            c, r = self.centers[i], self.radii[i]
            zeros = find_singularities(spec, (c - r, c + r))
            inside = [z for z in zeros if np.linalg.norm(z - c) < r]
            if len(inside) != 1:
                raise InvalidCocycleConfig(f"U_{self.ids[i]} contains {len(inside)} singularities")


# ---------------------------------------------------------------------------
# batched line transport

class _InsideGrowth:
    """Step hook accumulating log-growth of one tangent column while inside each ball."""

    GRID = (0.0, 0.25, 0.5, 0.75, 1.0)

    def __init__(self, centers, radii, d, ncols, col, n):
        self.c = np.asarray(centers, float).reshape(-1, d)
        self.r2 = np.asarray(radii, float) ** 2
        self.d = d
        self.cols = d + np.arange(d) * ncols + col
        self.total = np.zeros((n, self.c.shape[0]))

    def _g(self, Y, sig=None):
        x = Y[:, : self.d]
        if sig is None:
            return np.sum((x[:, None, :] - self.c[None]) ** 2, axis=2) - self.r2
        return np.sum((x - self.c[sig]) ** 2, axis=1) - self.r2[sig]

    def _crossing(self, dense, rows, sig, a, b, ga, gb, iters=60):
        """Root of g in [a, b] by the Illinois variant of regula falsi, vectorised."""
        a = np.full(rows.size, a)
        b = np.full(rows.size, b)
        ga, gb = ga.astype(float), gb.astype(float)
        side = np.zeros(rows.size, int)
        for _ in range(iters):
            c = (a * gb - b * ga) / (gb - ga)
            c = np.where(np.isfinite(c) & (c > a) & (c < b), c, 0.5 * (a + b))
            gc = self._g(dense(c, rows), sig)
            left = np.sign(gc) == np.sign(ga)
            # keep [c, b] if g(c) has the sign of g(a), else [a, c]; halve the stale end
            b_new = np.where(left, b, c)
            a_new = np.where(left, c, a)
            gb = np.where(left, np.where(side == 1, 0.5 * gb, gb), gc)
            ga = np.where(left, gc, np.where(side == -1, 0.5 * ga, ga))
            side = np.where(left, 1, -1)
            a, b = a_new, b_new
            if np.all((b - a) < 1e-13) or np.all(np.abs(gc) < 1e-14 * np.maximum(1.0, self.r2[sig])):
                return c
        return 0.5 * (a + b)

    def _lv(self, Y):
        return np.log(np.linalg.norm(Y[:, self.cols], axis=1))

    def __call__(self, ya, yb, dense):
        if self.c.shape[0] == 0:
            return
        d = self.d
        # rows whose step cannot reach any ball are skipped; the bound uses the chord length
        reach = np.sqrt(self.r2) + 2.0 * np.linalg.norm(yb[:, :d] - ya[:, :d], axis=1)[:, None]
        da = np.sqrt(np.maximum(self._g(ya) + self.r2, 0.0))
        db = np.sqrt(np.maximum(self._g(yb) + self.r2, 0.0))
        rows = np.flatnonzero(np.any((da <= reach) | (db <= reach), axis=1))
        if rows.size == 0:
            return
        Ys = [ya[rows], dense(0.25, rows), dense(0.5, rows), dense(0.75, rows), yb[rows]]
        gs = [self._g(Y) for Y in Ys]
        ins = [g <= 0 for g in gs]
        if not any(i.any() for i in ins):
            return
        lvs = [self._lv(Y) for Y in Ys]
        total = np.zeros((rows.size, self.c.shape[0]))
        for i in range(4):
            a_in, b_in = ins[i], ins[i + 1]
            both = a_in & b_in
            if both.any():
                total += np.where(both, (lvs[i + 1] - lvs[i])[:, None], 0.0)
            cross = a_in != b_in
            if not cross.any():
                continue
            r, sig = np.nonzero(cross)
            start_in = a_in[r, sig]
            th = self._crossing(dense, rows[r], sig, self.GRID[i], self.GRID[i + 1],
                                gs[i][r, sig], gs[i + 1][r, sig])
            lvc = self._lv(dense(th, rows[r]))
            contrib = np.where(start_in, lvc - lvs[i][r], lvs[i + 1][r] - lvc)
            np.add.at(total, (r, sig), contrib)
        self.total[rows] += total


class _SpeedWatch:
    def __init__(self, spec, d):
        self.spec, self.d = spec, d
        self.min_speed = np.inf

    def __call__(self, ya, yb, dense):
        for Y in (yb, dense(0.5)):
            sp = np.linalg.norm(self.spec.fn(Y[:, : self.d].T), axis=0)
            self.min_speed = min(self.min_speed, float(np.min(sp)))


def _chain_hooks(*hooks):
    hooks = [h for h in hooks if h is not None]

    def hook(ya, yb, dense):
        for h in hooks:
            h(ya, yb, dense)
    return hook if hooks else None


def transport(spec: FieldSpec, X0, P0, T, cfg: Optional[CocycleConfig] = None, line_col: int = 0,
              rtol: float = 1e-10, watch_speed: bool = False):
    """Move base points X0 (n, d) and tangent blocks P0 (n, d, k) for times T.

    Returns (X, P, logh) where logh (n, m) holds, for each ball of ``cfg``,
    the log-growth of column ``line_col`` accumulated while inside the ball.
    With ``watch_speed`` a :class:`FlowDirectionDegenerate` is raised if the
    orbit's speed drops below 1e-8.
    """
    X0 = np.atleast_2d(np.asarray(X0, float))
    n, d = X0.shape
    P0 = np.asarray(P0, float).reshape(n, d, -1)
    k = P0.shape[2]
    grow = None
    if cfg is not None and cfg.m:
        grow = _InsideGrowth(cfg.centers, cfg.radii, d, k, line_col, n)
    watch = _SpeedWatch(spec, d) if watch_speed else None
    if watch is not None:
        sp = np.linalg.norm(spec.fn(X0.T), axis=0)
        watch.min_speed = float(np.min(sp))
    X, P, ok = variational_batch(spec, X0, P0, T, rtol=rtol, hook=_chain_hooks(grow, watch))
    if watch is not None and watch.min_speed < DEGENERATE_TOL:
        raise FlowDirectionDegenerate("flow direction degenerate: orbit passes through a singularity")
    if not ok.all():
        raise FloatingPointError(f"{int((~ok).sum())} orbits blew up")
    logh = grow.total if grow is not None else np.zeros((n, 0))
    return X, P, logh


def lpf_batch(spec, X, V, T, rtol=1e-10):
    X = np.atleast_2d(np.asarray(X, float))
    Xe, P, _ = transport(spec, X, np.asarray(V, float)[:, :, None], T, rtol=rtol, watch_speed=True)
    W = P[:, :, 0]
    Fe = spec.fn(Xe.T).T
    return W - (np.sum(W * Fe, axis=1) / np.sum(Fe * Fe, axis=1))[:, None] * Fe


def lpf_apply(spec: FieldSpec, x, v, t: float, rtol: float = 1e-10) -> np.ndarray:
    """Linear Poincaré flow: Dphi_t v projected onto the normal space of X(phi_t x)."""
    return lpf_batch(spec, [x], [v], t, rtol)[0]


def projective_batch(spec, X, L, T, rtol=1e-10):
    Xe, P, _ = transport(spec, X, np.asarray(L, float)[:, :, None], T, rtol=rtol)
    return Xe, _unit_rows(P[:, :, 0])


def projective_step(spec: FieldSpec, le: LineElement, t: float, rtol: float = 1e-10) -> LineElement:
    Xe, L = projective_batch(spec, [le.x], [le.L], t, rtol)
    return LineElement(Xe[0], L[0], False)


def elpf_batch(spec, X, L, V, T, rtol=1e-10):
    """Extended linear Poincaré flow on many carriers; returns (X, L, W)."""
    L = _unit_rows(np.asarray(L, float))
    P0 = np.stack([L, np.asarray(V, float)], axis=2)
    Xe, P, _ = transport(spec, X, P0, T, rtol=rtol)
    Le = _unit_rows(P[:, :, 0])
    W = P[:, :, 1]
    W = W - np.sum(W * Le, axis=1)[:, None] * Le
    return Xe, Le, W


def elpf_apply(spec: FieldSpec, nv: NormalVector, t: float, rtol: float = 1e-10) -> NormalVector:
    Xe, Le, W = elpf_batch(spec, [nv.carrier.x], [nv.carrier.L], [nv.v], t, rtol)
    return NormalVector(LineElement(Xe[0], Le[0], False), W[0])


def cocycle_logh_batch(spec, cfg: CocycleConfig, X, L, T, rtol=1e-10):
    """log h_sigma for every ball of ``cfg``; shape (n, m)."""
    _, _, logh = transport(spec, X, np.asarray(L, float)[:, :, None], T, cfg=cfg, rtol=rtol)
    return logh


def cocycle_h(spec: FieldSpec, cfg: CocycleConfig, sigma, le: LineElement, t: float, rtol: float = 1e-10) -> float:
    logh = cocycle_logh_batch(spec, cfg, [le.x], [le.L], t, rtol)
    return float(np.exp(logh[0, cfg.column(sigma)]))


def h_product(spec: FieldSpec, cfg: CocycleConfig, side: str, le: LineElement, t: float, rtol: float = 1e-10) -> float:
    cols = cfg.side(side)
    if not cols:
        return 1.0
    logh = cocycle_logh_batch(spec, cfg, [le.x], [le.L], t, rtol)
    return float(np.exp(logh[0, cols].sum()))


# ---------------------------------------------------------------------------
# chains: per-substep frame matrices along orbits

def line_frames(lines) -> np.ndarray:
    """Orthonormal frames [l, B] with first column the line l; shape (..., d, d)."""
    lines = np.asarray(lines, float)
    sh = lines.shape
    L = lines.reshape(-1, sh[-1])
    Q, R = np.linalg.qr(L[:, :, None], mode="complete")
    Q = Q * np.sign(R[:, 0, 0])[:, None, None]
    Q[:, :, 0] = L
    return Q.reshape(sh + (sh[-1],))


@dataclass
class ChainSet:
    """Orbit segments with their frame cocycle.

    Chain c has nodes 0..M with base points ``pts[c]``, lines ``lines[c]``
    and frames ``frames[c]`` = [l, B].  ``G[c, j]`` is the tangent map of
    substep j in frame coordinates; it is block upper triangular because
    lines are carried to lines, so ``G[..., 1:, 1:]`` is the normal cocycle.
    ``logh[c, j, i]`` is the inside growth of the line for ball i.
    Samples are (chain, node) pairs.
    """

    dt: float
    pts: np.ndarray
    lines: np.ndarray
    frames: np.ndarray
    G: np.ndarray
    logh: np.ndarray
    samples: np.ndarray
    tags: list
    ids: list = field(default_factory=list)
    dropped: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.pts.shape[2]

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    @property
    def max_horizon_steps(self) -> int:
        if not len(self.samples):
            return 0
        M = self.G.shape[1]
        k = self.samples[:, 1]
        return int(min(k.min(), (M - k).min()))

    def steps_for(self, T: float) -> int:
        n = int(round(T / self.dt))
        if n < 1 or abs(n * self.dt - T) > 1e-9 * max(1.0, T):
            raise ValueError(f"horizon {T} is not a multiple of the substep {self.dt}")
        if n > self.max_horizon_steps:
            raise ValueError(f"horizon {T} exceeds the stored chain length")
        return n

    def reversed(self) -> "ChainSet":
        """The same segments read as orbits of -X."""
        M = self.G.shape[1]
        Ginv = np.linalg.inv(self.G[:, ::-1])
        samples = self.samples.copy()
        samples[:, 1] = M - samples[:, 1]
        return ChainSet(self.dt, self.pts[:, ::-1].copy(), self.lines[:, ::-1].copy(), self.frames[:, ::-1].copy(),
                        Ginv, -self.logh[:, ::-1], samples, list(self.tags), list(self.ids), list(self.dropped))

    def subset(self, keep) -> "ChainSet":
        idx = np.arange(self.n_samples)[np.asarray(keep)]
        return ChainSet(self.dt, self.pts, self.lines, self.frames, self.G, self.logh, self.samples[idx],
                        [self.tags[i] for i in idx], self.ids, self.dropped)

    def elements(self) -> list[LineElement]:
        out = []
        for (c, k), tag in zip(self.samples, self.tags):
            out.append(LineElement(self.pts[c, k], self.lines[c, k], tag == "lift"))
        return out


def _concat_chains(parts: list[ChainSet]) -> ChainSet:
    parts = [p for p in parts if p is not None and p.pts.shape[0]]
    if not parts:
        raise EmptyExtendedSet("no samples")
    M = max(p.G.shape[1] for p in parts)
    out = []
    for p in parts:
        pad = M - p.G.shape[1]
        if pad:
            # pad short chains with identity steps at the end; never read by windows
            d = p.dim
            K = p.pts.shape[0]
            p = ChainSet(p.dt,
                         np.concatenate([p.pts, np.repeat(p.pts[:, -1:], pad, 1)], 1),
                         np.concatenate([p.lines, np.repeat(p.lines[:, -1:], pad, 1)], 1),
                         np.concatenate([p.frames, np.repeat(p.frames[:, -1:], pad, 1)], 1),
                         np.concatenate([p.G, np.broadcast_to(np.eye(d), (K, pad, d, d))], 1),
                         np.concatenate([p.logh, np.zeros((K, pad, p.logh.shape[2]))], 1),
                         p.samples, p.tags, p.ids, p.dropped)
        out.append(p)
    off = np.cumsum([0] + [p.pts.shape[0] for p in out[:-1]])
    samples = np.concatenate([p.samples + [o, 0] for p, o in zip(out, off)]) if out else np.zeros((0, 2), int)
    return ChainSet(out[0].dt,
                    np.concatenate([p.pts for p in out]),
                    np.concatenate([p.lines for p in out]),
                    np.concatenate([p.frames for p in out]),
                    np.concatenate([p.G for p in out]),
                    np.concatenate([p.logh for p in out]),
                    samples.astype(int),
                    sum((p.tags for p in out), []),
                    out[0].ids,
                    sum((p.dropped for p in out), []))


def orbit_chains(spec: FieldSpec, X0, lines0, steps: int, dt: float, cfg: Optional[CocycleConfig] = None,
                 rtol: float = 1e-9) -> ChainSet:
    """Chains along forward orbits of X0 carrying the lines ``lines0``; no samples attached."""
    X = np.atleast_2d(np.asarray(X0, float)).copy()
    K, d = X.shape
    L = _unit_rows(np.asarray(lines0, float).reshape(K, d))
    m = cfg.m if cfg is not None else 0
    pts = np.empty((K, steps + 1, d))
    lines = np.empty((K, steps + 1, d))
    G = np.empty((K, steps, d, d))
    logh = np.zeros((K, steps, m))
    pts[:, 0], lines[:, 0] = X, L
    P0 = np.concatenate([np.broadcast_to(np.eye(d), (K, d, d)), L[:, :, None]], axis=2)
    F = line_frames(L)
    frames = np.empty((K, steps + 1, d, d))
    frames[:, 0] = F
    for j in range(steps):
        P0[:, :, d] = L
        X, P, lh = transport(spec, X, P0, dt, cfg=cfg, line_col=d, rtol=rtol)
        Phi = P[:, :, :d]
        L = _unit_rows(P[:, :, d])
        F1 = line_frames(L)
        G[:, j] = np.swapaxes(F1, 1, 2) @ Phi @ F
        if m:
            logh[:, j] = lh
        pts[:, j + 1], lines[:, j + 1], frames[:, j + 1] = X, L, F1
        F = F1
    ids = list(cfg.ids) if cfg is not None else []
    return ChainSet(dt, pts, lines, frames, G, logh, np.zeros((0, 2), int), [], ids, [])


def element_chains(spec: FieldSpec, elements: Sequence[LineElement], steps: int, dt: float,
                   cfg: Optional[CocycleConfig] = None, rtol: float = 1e-10) -> ChainSet:
    """Chains of 2*steps substeps centred on each element (backward part integrates -X)."""
    X0 = np.array([e.x for e in elements], float)
    L0 = np.array([e.L for e in elements], float)
    fwd = orbit_chains(spec, X0, L0, steps, dt, cfg, rtol)
    bwd = orbit_chains(spec.negated(), X0, L0, steps, dt, cfg, rtol).reversed()
    K = len(elements)
    cs = ChainSet(dt,
                  np.concatenate([bwd.pts, fwd.pts[:, 1:]], 1),
                  np.concatenate([bwd.lines, fwd.lines[:, 1:]], 1),
                  np.concatenate([bwd.frames, fwd.frames[:, 1:]], 1),
                  np.concatenate([bwd.G, fwd.G], 1),
                  np.concatenate([bwd.logh, fwd.logh], 1),
                  np.column_stack([np.arange(K), np.full(K, steps)]),
                  ["lift" if e.regular else "line" for e in elements], fwd.ids, [])
    return cs


def center_chains(record: SingularityRecord, lines0, steps: int, dt: float, col: Optional[int], m: int,
                  subspace=None) -> ChainSet:
    """Pinned chains at a singularity: lines moved by the linearised flow, nodes -steps..steps.

    ``subspace`` (an invariant subspace containing the lines, default their
    span) is used to keep the lines in it.
    """
    A = np.asarray(record.jacobian, float)
    d = A.shape[0]
    L0 = _unit_rows(np.atleast_2d(np.asarray(lines0, float)))
    K = len(L0)
    Ef, Eb = expm(A * dt), expm(-A * dt)
    # lines stay in span(L0), which is invariant; re-projecting keeps roundoff
    # from being amplified along stronger directions when moving backwards
    Q, _ = np.linalg.qr(L0.T if subspace is None else np.asarray(subspace, float))
    Pc = Q @ Q.T
    lines = np.empty((K, 2 * steps + 1, d))
    lines[:, steps] = L0
    for j in range(steps):
        lines[:, steps + j + 1] = _unit_rows(lines[:, steps + j] @ (Pc @ Ef).T)
        lines[:, steps - j - 1] = _unit_rows(lines[:, steps - j] @ (Pc @ Eb).T)
    frames = line_frames(lines)
    G = np.swapaxes(frames[:, 1:], 2, 3) @ Ef @ frames[:, :-1]
    logh = np.zeros((K, 2 * steps, m))
    if col is not None:
        logh[:, :, col] = np.log(np.abs(G[:, :, 0, 0]))
    pts = np.broadcast_to(record.position, (K, 2 * steps + 1, d)).copy()
    return ChainSet(dt, pts, lines, frames, G, logh, np.column_stack([np.arange(K), np.full(K, steps)]),
                    [f"center:{record.ident}"] * K, [], [])


def _canonical_basis(V: np.ndarray) -> np.ndarray:
    """Basis-independent orthonormal basis of span(V): Gram-Schmidt on projected axes."""
    Q, _ = np.linalg.qr(V)
    P = Q @ Q.T
    out = []
    for i in range(P.shape[0]):
        u = P[:, i].copy()
        for w in out:
            u -= (w @ u) * w
        if np.linalg.norm(u) > 1e-6:
            out.append(u / np.linalg.norm(u))
        if len(out) == V.shape[1]:
            break
    return np.array(out).T.reshape(V.shape[0], len(out))


def center_lines(basis: np.ndarray, n: int, seed: int = 0) -> np.ndarray:
    """n lines in span(basis): a half great circle in 2D, seeded random on the sphere above."""
    c = basis.shape[1]
    if c == 0 or n <= 0:
        return np.zeros((0, basis.shape[0]))
    B = _canonical_basis(basis)
    if c == 1:
        return B.T[:1]
    if c == 2:
        th = math.pi * (np.arange(n) + 0.5) / n
        return np.column_stack([np.cos(th), np.sin(th)]) @ B.T
    rng = np.random.default_rng(seed)
    U = _unit_rows(rng.standard_normal((n, c)))
    return U @ B.T


# ---------------------------------------------------------------------------
# extended invariant set sampling

class ExtendedSet(list):
    """LineElements of the sampled extended set; ``chains`` carries the window data."""

    def __init__(self, elements, chains: ChainSet, orientation: int = 1):
        super().__init__(elements)
        self.chains = chains
        self.orientation = orientation

    @property
    def tags(self):
        return self.chains.tags

    @property
    def dropped(self):
        return self.chains.dropped


def _batch_field(spec):
    return lambda Y: np.asarray(spec.fn(Y.T)).T.copy()


def _settle(spec, X0, t, rtol, lo=None, hi=None):
    """Flow rows of X0 for time t; rows leaving [lo, hi] are frozen and flagged."""
    f = _batch_field(spec)
    if lo is None:
        return dopri5_many(f, X0, t, rtol, rtol)

    def g(Y):
        out = ~np.all((Y >= lo) & (Y <= hi), axis=1)
        k = f(np.where(out[:, None], X0_clip, Y))
        k[out] = 0.0
        return k

    X0_clip = np.clip(np.asarray(X0, float), lo, hi)
    Y, ok = dopri5_many(g, X0, t, rtol, rtol)
    ok &= np.all((Y >= lo) & (Y <= hi), axis=1)
    return Y, ok


def effective_singularities(records: Sequence[SingularityRecord]) -> list[SingularityRecord]:
    """Drop singularities whose whole stable or whole unstable space escapes the class."""
    out = []
    for r in records:
        if r.escaping_stable_dim is None:
            out.append(r)
            continue
        s, d = r.stable_index, r.dim
        if (s > 0 and r.escaping_stable_dim >= s) or (d - s > 0 and r.escaping_unstable_dim >= d - s):
            continue
        out.append(r)
    return out


def sample_extended_set(spec: FieldSpec, cls, sings: Sequence[SingularityRecord], n_orbit: int, n_proj: int, *,
                        horizon: float = 5.0, dt: float = 0.05, cfg: Optional[CocycleConfig] = None,
                        n_chains: Optional[int] = None, transient: float = 10.0, seed: int = 0,
                        rtol: float = 1e-9, center_push: float = 0.0, slack: int = 1) -> ExtendedSet:
    """Sample the extended set of a class given as a BoxSet.

    Lifted samples come from orbits started in random class boxes, run for
    ``transient`` and then followed long enough that every sample has a full
    window of ``horizon`` on both sides.  If the class repels forward orbits
    they are produced with -X and read backwards.  Samples whose window
    leaves the class boxes (grown by ``slack`` boxes) are dropped.  Each singularity in ``sings`` with a
    computed centre space contributes ``n_proj`` pinned centre lines.
    """
    d = spec.dim
    steps = int(round(horizon / dt))
    rng = np.random.default_rng(seed)
    parts = []
    dropped = []
    orientation = 1
    if n_orbit > 0 and len(cls):
        K = n_chains or max(1, min(200, n_orbit // 50))
        per = -(-n_orbit // K)
        stride = 2
        keys = cls.keys[rng.integers(0, len(cls), K)]
        from .recurrence import unravel
        X0 = cls.lo + (unravel(keys, cls.n, d) + rng.uniform(0.05, 0.95, (K, d))) * cls.width
        best = None
        for sgn in (1, -1):
            sp = spec if sgn > 0 else spec.negated()
            Y, ok = _settle(sp, X0, transient, rtol, cls.lo - (cls.hi - cls.lo), cls.hi + (cls.hi - cls.lo))
            frac = float(np.mean(ok & cls.contains(Y)))
            if best is None or frac > best[0]:
                best = (frac, sgn, Y, ok)
            if frac >= 0.5:
                break
        _, orientation, Y, ok = best
        # windows may graze holes of the cover one box wide
        zone = cls.grown(slack) if hasattr(cls, "grown") else cls
        sp = spec if orientation > 0 else spec.negated()
        live = ok & (np.linalg.norm(spec.fn(Y.T), axis=0) > REGULAR_TOL)
        Y = Y[live]
        M = 2 * steps + (per - 1) * stride
        if len(Y):
            lift = _unit_rows(np.asarray(sp.fn(Y.T)).T)
            ch = orbit_chains(sp, Y, lift, M, dt, cfg, rtol)
            if orientation < 0:
                ch = ch.reversed()
            nodes = steps + stride * np.arange(per)
            inside = zone.contains(ch.pts.reshape(-1, d)).reshape(ch.pts.shape[:2])
            speed = np.linalg.norm(spec.fn(ch.pts.reshape(-1, d).T), axis=0).reshape(ch.pts.shape[:2])
            samples, tags = [], []
            cum = np.concatenate([np.zeros((len(Y), 1), int), np.cumsum(~inside, axis=1)], axis=1)
            for c in range(len(Y)):
                for k in nodes:
                    if len(samples) >= n_orbit:
                        break
                    out = cum[c, k + steps + 1] - cum[c, k - steps]
                    if out:
                        dropped.append({"chain": int(c), "node": int(k), "reason": "left class"})
                    elif speed[c, k] <= REGULAR_TOL:
                        dropped.append({"chain": int(c), "node": int(k), "reason": "degenerate lift"})
                    else:
                        samples.append((c, k))
                        tags.append("lift")
            ch.samples = np.array(samples, int).reshape(-1, 2)
            ch.tags = tags
            parts.append(ch)
    m = cfg.m if cfg is not None else 0
    for r in sings:
        if r.center_basis is None or r.center_basis.shape[1] == 0 or n_proj <= 0:
            continue
        L0 = center_lines(r.center_basis, n_proj, seed)
        if center_push:
            L0 = _unit_rows(L0 @ expm(r.jacobian * center_push).T)
        col = None
        if cfg is not None:
            hits = np.flatnonzero(np.linalg.norm(cfg.centers - r.position, axis=1) < cfg.radii)
            col = int(hits[0]) if hits.size else None
        parts.append(center_chains(r, L0, steps, dt, col, m, r.center_basis))
    if not parts or all(len(p.samples) == 0 for p in parts):
        raise EmptyExtendedSet("extended set is empty: no regular orbit samples and no centre lines")
    ch = _concat_chains(parts)
    ch.dropped = dropped
    ch.ids = list(cfg.ids) if cfg is not None else []
    return ExtendedSet(ch.elements(), ch, orientation)


def write_extended_csv(ext: ExtendedSet, path):
    d = ext.chains.dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x_{i + 1}" for i in range(d)] + [f"L_{i + 1}" for i in range(d)] + ["source"])
        for e, tag in zip(ext, ext.tags):
            w.writerow([repr(float(v)) for v in e.x] + [repr(float(v)) for v in e.L] + [tag])
