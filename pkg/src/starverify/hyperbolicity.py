"""Splittings of the extended linear Poincaré flow and their margins.

All margins are finite-horizon rates: the minimum over samples of a
per-unit-time exponential rate measured on windows of length T.  Every
sample is measured on the window after it and on the window before it, and
the worse value is kept; reading the same data for -X swaps the two windows,
which is what makes the duality checks exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import schur

from .bundle import (ChainSet, CocycleConfig, EmptyExtendedSet, ExtendedSet, LineElement, element_chains,
                     effective_singularities, line_frames, orbit_chains, sample_extended_set)
from .fieldspec import FieldSpec
from .flow import PeriodicOrbit
from .singularity import SingularityRecord, escaping_spaces, EscapeOptions

GAP_TOL = 1e-6
DEGENERATE_FRACTION = 0.05
ESCAPE_FRACTION = 0.01
NEUTRAL_TOL = 1e-6

VERDICTS = ("Hyperbolic", "PositivelySingularHyperbolic", "NegativelySingularHyperbolic",
            "MultiSingularHyperbolic", "Undetermined")


class DegenerateSplitting(ValueError):
    pass


class OrbitEscaped(RuntimeError):
    pass


def _restricted(seq, V):
    """log sigma_max, log sigma_min and log|det| of the product of ``seq`` restricted to span(V).

    ``seq`` yields (S, m, m) matrices applied in order; V is (S, m, k)
    with orthonormal columns.  The product is carried as Q R_n ... R_1 with
    the triangular factors accumulated (and their inverses) under running
    scale factors, so tiny singular values are not lost to roundoff.
    """
    S, _, k = V.shape
    if k == 0:
        z = np.zeros(S)
        return z, z, z
    Q = V
    Rt = np.broadcast_to(np.eye(k), (S, k, k)).copy()
    Ri = Rt.copy()
    lt = np.zeros(S)
    li = np.zeros(S)
    logdet = np.zeros(S)
    for A in seq:
        Q, R = np.linalg.qr(A @ Q)
        diag = np.abs(np.diagonal(R, axis1=1, axis2=2))
        logdet += np.log(diag).sum(axis=1)
        if k == 1:
            continue
        Rt = R @ Rt
        Ri = Ri @ np.linalg.inv(R)
        st = np.abs(Rt).max(axis=(1, 2))
        si = np.abs(Ri).max(axis=(1, 2))
        Rt /= st[:, None, None]
        Ri /= si[:, None, None]
        lt += np.log(st)
        li += np.log(si)
    if k == 1:
        return logdet, logdet, logdet
    smax = np.linalg.svd(Rt, compute_uv=False)[:, 0]
    simax = np.linalg.svd(Ri, compute_uv=False)[:, 0]
    return np.log(smax) + lt, -(np.log(simax) + li), logdet


def _product(seq, m, S):
    P = np.broadcast_to(np.eye(m), (S, m, m)).copy()
    for A in seq:
        P = A @ P
        P /= np.abs(P).max(axis=(1, 2))[:, None, None]
    return P


@dataclass
class Splitting:
    """Per-sample E and F (frame coordinates of the normal space) plus window data."""

    chains: ChainSet
    s: int
    T: float
    n: int
    E: np.ndarray  # (S, d-1, s)
    F: np.ndarray  # (S, d-1, d-1-s)
    gap: np.ndarray
    aE_f: np.ndarray  # log ||psi^T|E|| on the forward window
    bE: np.ndarray  # same on the backward window, as a forward-time rate
    aF_f: np.ndarray  # log min(psi^T|F) forward
    bF: np.ndarray
    sect_cu: np.ndarray  # worst log area growth of 2-planes in span(l, F), (S,)
    sect_cs: np.ndarray  # largest log area growth of 2-planes in span(l, E)
    dropped: list = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return len(self.chains.samples)

    @property
    def tags(self):
        return self.chains.tags

    def ambient(self, which: str) -> np.ndarray:
        """E or F at every sample as ambient (S, d, k) orthonormal bases."""
        c, k = self.chains.samples.T
        B = self.chains.frames[c, k][:, :, 1:]
        return B @ (self.E if which == "E" else self.F)

    def h_sums(self, cols) -> tuple[np.ndarray, np.ndarray]:
        """Summed log h over the given cocycle columns on the forward/backward windows."""
        c, k = self.chains.samples.T
        if not cols or self.chains.logh.shape[2] == 0:
            z = np.zeros(len(c))
            return z, z
        cs = np.cumsum(self.chains.logh[:, :, cols].sum(axis=2), axis=1)
        cs = np.concatenate([np.zeros((cs.shape[0], 1)), cs], axis=1)
        return cs[c, k + self.n] - cs[c, k], cs[c, k] - cs[c, k - self.n]


def _as_chains(spec, samples, T, cfg, dt):
    if isinstance(samples, ExtendedSet):
        return samples.chains
    if isinstance(samples, ChainSet):
        return samples
    elements = list(samples)
    if not elements:
        raise EmptyExtendedSet("no samples")
    if dt is None:
        dt = T / max(1, math.ceil(T / 0.05))
    n = int(round(T / dt))
    return element_chains(spec, elements, n, dt, cfg)


def _planes(W, n_random, rng):
    """Orthonormal 2-frames in span(W): coordinate pairs plus random planes when dim >= 3."""
    k = W.shape[2]
    if k < 2:
        return []
    out = [W[:, :, [i, j]] for i in range(k) for j in range(i + 1, k)]
    if k >= 3:
        for _ in range(n_random):
            C = rng.standard_normal((k, 2))
            C, _ = np.linalg.qr(C)
            out.append(W @ C)
    return out


def estimate_splitting(spec: FieldSpec, samples, s: int, T: float, cfg: Optional[CocycleConfig] = None,
                       dt: Optional[float] = None, n_random: int = 10, seed: int = 0) -> Splitting:
    """Dominated-splitting estimate of index ``s`` at horizon T.

    E at a sample is the s-dimensional subspace most contracted by the
    forward window map, i.e. the top left-singular space of its inverse; F
    is the top (d-1-s)-dimensional left-singular space of the backward
    window map.  Plain line elements are accepted too: their windows are
    integrated on the spot (the backward half with -X).
    """
    d = spec.dim
    if not 0 <= s <= d - 1:
        raise ValueError(f"splitting index must lie in 0..{d - 1}")
    if not T > 0:
        raise ValueError("horizon must be positive")
    ch = _as_chains(spec, samples, T, cfg, dt)
    n = ch.steps_for(T)
    m = d - 1
    c, k = ch.samples.T
    S = len(c)
    Nn = ch.G[:, :, 1:, 1:]
    Ninv = np.linalg.inv(Nn)
    Ginv = np.linalg.inv(ch.G)

    # every restricted norm is measured in the time direction in which its
    # subspace dominates; pushing a contracted bundle forward loses it to roundoff
    fwd = lambda: (Nn[c, k + j] for j in range(n))  # N_k .. N_{k+n-1}
    fwd_inv = lambda: (Ninv[c, k + n - 1 - j] for j in range(n))  # from node k+n back to k
    bwd = lambda: (Nn[c, k - n + j] for j in range(n))  # from node k-n up to k
    bwd_inv = lambda: (Ninv[c, k - 1 - j] for j in range(n))  # from node k back to k-n

    # E: top-s left singular space of (forward window)^-1
    A = _product(fwd_inv(), m, S)
    U, sv, Vh = np.linalg.svd(A)
    E = U[:, :, :s]
    E_end = np.swapaxes(Vh, 1, 2)[:, :, :s]  # spans the image of E at node k+n
    # F: top left singular space of the backward window map
    Mb = _product(bwd(), m, S)
    Ub, svb, Vbh = np.linalg.svd(Mb)
    F = Ub[:, :, : m - s]
    F_start = np.swapaxes(Vbh, 1, 2)[:, :, : m - s]  # preimage of F at node k-n
    gap = np.ones(S)
    if 0 < s < m:
        gap = np.minimum(1.0 - sv[:, s] / sv[:, s - 1], 1.0 - svb[:, m - s] / svb[:, m - s - 1])
        bad = gap < GAP_TOL
        if bad.mean() >= DEGENERATE_FRACTION:
            raise DegenerateSplitting(
                f"singular-value gap below {GAP_TOL:g} at {100 * bad.mean():.1f}% of samples")

    _, lo, _ = _restricted(fwd_inv(), E_end)
    aE_f = -lo
    _, lo, _ = _restricted(bwd_inv(), E)
    bE = -lo
    _, aF_f, _ = _restricted(fwd(), F)
    _, bF, _ = _restricted(bwd(), F_start)

    rng = np.random.default_rng(seed)
    e0 = np.zeros((S, d, 1))
    e0[:, 0, 0] = 1.0

    def lift(V):
        return np.concatenate([e0, np.concatenate([np.zeros((S, 1, V.shape[2])), V], axis=1)], axis=2)

    def logdets(seq, V, sign):
        planes = _planes(lift(V), n_random, rng)
        return [sign * _restricted(seq(), P)[2] for P in planes]

    Gf = lambda: (ch.G[c, k + j] for j in range(n))
    Gb = lambda: (ch.G[c, k - n + j] for j in range(n))
    Gfi = lambda: (Ginv[c, k + n - 1 - j] for j in range(n))
    Gbi = lambda: (Ginv[c, k - 1 - j] for j in range(n))
    cu = logdets(Gf, F, 1) + logdets(Gb, F_start, 1)
    cs = logdets(Gfi, E_end, -1) + logdets(Gbi, E, -1)
    sect_cu = np.min(cu, axis=0) if cu else np.full(S, np.nan)
    sect_cs = np.max(cs, axis=0) if cs else np.full(S, np.nan)
    return Splitting(ch, s, T, n, E, F, gap, aE_f, bE, aF_f, bF, sect_cu, sect_cs, list(ch.dropped))


def _check_T(split: Splitting, T):
    if T is not None and abs(T - split.T) > 1e-12 * max(1.0, T):
        raise ValueError(f"splitting was estimated at horizon {split.T}, not {T}")


def domination_rates(split: Splitting) -> np.ndarray:
    if split.E.shape[2] == 0 or split.F.shape[2] == 0:
        return np.full(split.n_samples, np.inf)
    return np.minimum(split.aF_f - split.aE_f, split.bF - split.bE) / split.T


def domination_margin(spec: FieldSpec, split: Splitting, T: Optional[float] = None) -> float:
    """min over samples of -(1/T) log(||psi^T|E|| ||psi^-T|F(end)||); inf if one bundle is empty."""
    _check_T(split, T)
    r = domination_rates(split)
    return float(r.min()) if r.size else math.nan


def contraction_rates(split: Splitting, cfg: Optional[CocycleConfig] = None) -> np.ndarray:
    if split.E.shape[2] == 0:
        return np.full(split.n_samples, np.inf)
    hf, hb = split.h_sums(cfg.side("minus") if cfg is not None else [])
    return -np.maximum(hf + split.aE_f, hb + split.bE) / split.T


def expansion_rates(split: Splitting, cfg: Optional[CocycleConfig] = None) -> np.ndarray:
    if split.F.shape[2] == 0:
        return np.full(split.n_samples, np.inf)
    hf, hb = split.h_sums(cfg.side("plus") if cfg is not None else [])
    return np.minimum(hf + split.aF_f, hb + split.bF) / split.T


def reparam_contraction_margin(spec: FieldSpec, cfg: Optional[CocycleConfig], split: Splitting, side: str,
                               T: Optional[float] = None) -> float:
    """Worst reparametrised rate: contraction of h_- psi on E (side 'minus') or expansion of h_+ psi on F ('plus').

    ``cfg=None`` gives the plain rates (h = 1).
    """
    _check_T(split, T)
    if side == "minus":
        r = contraction_rates(split, cfg)
    elif side == "plus":
        r = expansion_rates(split, cfg)
    else:
        raise ValueError(f"side must be 'minus' or 'plus', got {side!r}")
    return float(r.min()) if r.size else math.nan


def sectional_rates(split: Splitting, which: str = "cu") -> np.ndarray:
    if which == "cu":
        return split.sect_cu / split.T
    return -split.sect_cs / split.T


def sectional_expansion_check(spec: FieldSpec, split: Splitting, T: Optional[float] = None, which: str = "cu") -> float:
    """min over samples and 2-planes of (1/T) log|det Dphi^T| on span(l, F).

    ``which='cs'`` gives the mirror quantity: the sectional contraction rate
    of span(l, E), positive when every 2-plane there shrinks.
    """
    _check_T(split, T)
    r = sectional_rates(split, which)
    if np.isnan(r).all():
        return math.nan
    return float(np.nanmin(r))


def star_rate(domination: float) -> float:
    """eta in the bound ||psi_t|N_s|| ||psi_-t|N_u|| <= exp(-2 eta t) implied by a domination rate."""
    return 0.5 * domination


# ---------------------------------------------------------------------------
# periodic orbits

@dataclass
class PeriodicHypReport:
    period: float
    seed: np.ndarray
    T: float
    m: int
    windows: int
    stable_log_norms: list
    unstable_log_mins: list
    eta_stable: Optional[float]
    eta_unstable: Optional[float]
    eta: float
    hyperbolic: bool
    stable_only: bool
    unstable_only: bool

    @property
    def passed(self) -> bool:
        return self.eta > 0

    def to_json(self) -> dict:
        return {
            "period": self.period, "seed": [float(v) for v in self.seed], "T": self.T, "m": self.m,
            "windows": self.windows, "stable_log_norms": self.stable_log_norms,
            "unstable_log_mins": self.unstable_log_mins, "eta_stable": self.eta_stable,
            "eta_unstable": self.eta_unstable, "eta": self.eta, "hyperbolic": self.hyperbolic,
            "stable_only": self.stable_only, "unstable_only": self.unstable_only, "passed": self.passed,
        }


def check_periodic_uniform_hyp(spec: FieldSpec, orbit: PeriodicOrbit, T: float = 1.0, m: int = 1,
                               rtol: float = 1e-10) -> PeriodicHypReport:
    """Products of ||psi_T|N_s|| and min(psi_T|N_u) over [m pi / T] windows along the orbit.

    eta is the largest rate for which both products are below/above
    exp(-+m eta pi).  Multipliers within NEUTRAL_TOL of the unit circle make
    the orbit non-hyperbolic; they are counted on the stable side and eta is
    clamped to <= 0.
    """
    pi = float(orbit.period)
    if not T > 0 or m < 1:
        raise ValueError("need T > 0 and m >= 1")
    if not pi > T:
        raise ValueError("period must exceed the window T")
    x0 = np.asarray(orbit.seed, float)
    W = int(math.floor(m * pi / T))
    X = spec.eval_field(x0)
    l0 = X / np.linalg.norm(X)
    F0 = line_frames(l0[None])[0]
    P = F0[:, 1:].T @ orbit.monodromy @ F0[:, 1:]
    mu = np.linalg.eigvals(P)
    neutral = np.abs(np.log(np.abs(mu))) <= NEUTRAL_TOL * max(1.0, pi)
    hyperbolic = not neutral.any()
    unit = 1.0 + NEUTRAL_TOL * max(1.0, pi)
    _, Zs, ns = schur(P, output="real", sort=lambda re, im: math.hypot(re, im) < unit)
    _, Zu, nu = schur(P, output="real", sort=lambda re, im: math.hypot(re, im) >= unit)
    Vs, Vu = Zs[:, :ns], Zu[:, :nu]
    steps_per = max(1, math.ceil(T / 0.05))
    dt = T / steps_per
    ch = orbit_chains(spec, x0[None], l0[None], W * steps_per, dt, None, rtol)
    N = ch.G[0, :, 1:, 1:]
    s_norms, u_mins = [], []
    for V, out, top in ((Vs, s_norms, True), (Vu, u_mins, False)):
        if V.shape[1] == 0:
            continue
        V = V.copy()
        for w in range(W):
            seq = (N[w * steps_per + j][None] for j in range(steps_per))
            hi, lo, _ = _restricted(seq, V[None])
            out.append(float(hi[0] if top else lo[0]))
            for j in range(steps_per):
                V = N[w * steps_per + j] @ V
            V, _ = np.linalg.qr(V)
    eta_s = -sum(s_norms) / (m * pi) if s_norms else None
    eta_u = sum(u_mins) / (m * pi) if u_mins else None
    eta = min(v for v in (eta_s, eta_u) if v is not None)
    if not hyperbolic:
        eta = min(eta, 0.0)
    return PeriodicHypReport(pi, x0, T, m, W, s_norms, u_mins, eta_s, eta_u, eta, hyperbolic,
                             eta_u is None, eta_s is None)


def birkhoff_batch(spec: FieldSpec, cfg: Optional[CocycleConfig], X, L, E, T: float, n: int, side: str = "minus",
                   neighborhood=None, dt: Optional[float] = None, rtol: float = 1e-10,
                   on_escape: str = "raise") -> np.ndarray:
    """Vectorised :func:`birkhoff_average` over rows of X (S, d), L (S, d), E (S, d, k).

    With ``on_escape='nan'`` rows whose orbit leaves ``neighborhood`` get NaN
    instead of raising.
    """
    d = spec.dim
    X = np.atleast_2d(np.asarray(X, float))
    L = np.atleast_2d(np.asarray(L, float))
    S = X.shape[0]
    E = np.asarray(E, float).reshape(S, d, -1)
    if dt is None:
        dt = T / max(1, math.ceil(T / 0.05))
    per = int(round(T / dt))
    ch = orbit_chains(spec, X, L, (n + 1) * per, dt, cfg, rtol)
    bad = np.zeros(S, bool)
    if neighborhood is not None:
        inside = neighborhood.contains(ch.pts[:, :n * per + 1].reshape(-1, d)).reshape(S, -1)
        bad = ~inside.all(axis=1)
        if bad.any() and on_escape == "raise":
            raise OrbitEscaped(f"{int(bad.sum())} orbit(s) left the neighbourhood before time n T")
    N = ch.G[:, :, 1:, 1:]
    Ninv = np.linalg.inv(N)
    # The forward push of E is exact in exact arithmetic but drifts into F in
    # floating point; it only seeds a pull-back from one window past nT, and
    # the pulled-back E is stable (the inverse cocycle expands E).
    V = np.swapaxes(ch.frames[:, 0][:, :, 1:], 1, 2) @ E
    V, _ = np.linalg.qr(V)
    for j in range((n + 1) * per):
        V, _ = np.linalg.qr(N[:, j] @ V)
    Ew = [None] * (n + 1)
    for j in range((n + 1) * per - 1, -1, -1):
        if j % per == per - 1 and j // per <= n - 1:
            Ew[j // per + 1] = V
        V, _ = np.linalg.qr(Ninv[:, j] @ V)
    cols = cfg.side(side) if cfg is not None else []
    logh = ch.logh[:, :, cols].sum(axis=2) if cols else np.zeros((S, (n + 1) * per))
    total = np.zeros(S)
    for w in range(n):
        # ||psi^T|E_w|| = 1 / min(psi^{-T}|E_{w+1}), measured where E dominates
        seq = (Ninv[:, w * per + j] for j in range(per - 1, -1, -1))
        _, lo, _ = _restricted(seq, Ew[w + 1])
        total += -lo + logh[:, w * per:(w + 1) * per].sum(axis=1)
    out = total / n
    out[bad] = np.nan
    return out


def birkhoff_average(spec: FieldSpec, cfg: Optional[CocycleConfig], le: LineElement, E, T: float, n: int,
                     side: str = "minus", neighborhood=None, dt: Optional[float] = None, rtol: float = 1e-10) -> float:
    """(1/n) sum_i log(h_side^T ||psi^T|E||) along n consecutive windows of length T.

    E is carried by the cocycle from window to window.  ``neighborhood``
    (anything with ``contains``) makes an escape before time nT an error.
    """
    E = np.asarray(E, float).reshape(spec.dim, -1)
    return float(birkhoff_batch(spec, cfg, np.asarray(le.x)[None], np.asarray(le.L)[None], E[None], T, n, side,
                                neighborhood, dt, rtol)[0])


def homogeneity_report(records: Sequence[SingularityRecord], orbits: Sequence[PeriodicOrbit] = ()):
    """Periodic index of every critical element found; True iff they all agree."""
    rows = []
    for r in records:
        rows.append({"kind": "singularity", "id": r.ident, "position": [float(v) for v in r.position],
                     "index": r.periodic_index})
    for i, o in enumerate(orbits):
        rows.append({"kind": "periodic", "id": i, "position": [float(v) for v in o.seed],
                     "index": int(o.stable_index)})
    idx = {row["index"] for row in rows if row["index"] is not None}
    return rows, len(idx) <= 1


# ---------------------------------------------------------------------------
# verdict

def _fmt(v):
    if v is None:
        return None
    v = float(v)
    if math.isnan(v) or math.isinf(v):
        return None
    return float(f"{v:.17g}")


@dataclass
class SplittingReport:
    verdict: str
    reason: Optional[str]
    s: Optional[int]
    T: float
    margins: dict
    convention: str
    sample_stats: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    plain_margins: dict = field(default_factory=dict)
    convention_margins: dict = field(default_factory=dict)
    certifying_conventions: list = field(default_factory=list)
    K: Optional[float] = None
    split: Optional[Splitting] = field(default=None, repr=False)

    @property
    def label(self) -> str:
        if self.verdict == "Undetermined":
            return f"Undetermined({self.reason})"
        return self.verdict

    def to_json(self) -> dict:
        def clean(dct):
            return {k: (clean(v) if isinstance(v, dict) else _fmt(v)) for k, v in dct.items()}
        return {
            "schema": 1,
            "verdict": self.label,
            "evidence": f"numerical evidence at horizon T={self.T:g}",
            "s": self.s,
            "T": _fmt(self.T),
            "margins": clean(self.margins),
            "plain_margins": clean(self.plain_margins),
            "convention": self.convention,
            "convention_margins": clean(self.convention_margins),
            "certifying_conventions": list(self.certifying_conventions),
            "K": _fmt(self.K),
            "sample_stats": {k: (clean(v) if isinstance(v, dict) else (_fmt(v) if isinstance(v, float) else v))
                             for k, v in self.sample_stats.items()},
            "failures": self.failures,
        }


def _pos(v) -> bool:
    return v is not None and not math.isnan(v) and v > 0


def verdict(kind: str, margins: dict, plain: dict) -> tuple[str, Optional[str]]:
    """Decision tree over aggregated margins.

    ``kind`` is 'nonsingular', 'positive', 'negative' or 'mixed'.  For the
    positive/negative branches the singular-hyperbolic test comes first and
    the reparametrised (multi-singular) margins are the fallback.
    """
    dom = margins["dom"]
    if kind == "nonsingular":
        for name, v in (("domination", dom), ("contractE", plain["contractE"]), ("expandF", plain["expandF"])):
            if not _pos(v):
                return "Undetermined", name
        return "Hyperbolic", None
    if kind in ("positive", "negative"):
        if kind == "positive":
            checks = (("domination", dom), ("contractE", plain["contractE"]), ("sectional", margins["sectional"]))
            name_ok = "PositivelySingularHyperbolic"
        else:
            checks = (("domination", dom), ("expandF", plain["expandF"]), ("sectional", margins["sectional"]))
            name_ok = "NegativelySingularHyperbolic"
        first = next((nm for nm, v in checks if not _pos(v)), None)
        if first is None:
            return name_ok, None
    for name, v in (("domination", dom), ("contractE", margins["contractE"]), ("expandF", margins["expandF"])):
        if not _pos(v):
            return "Undetermined", (first if kind in ("positive", "negative") else name)
    return "MultiSingularHyperbolic", None


def _kind(eff: Sequence[SingularityRecord]) -> str:
    if not eff:
        return "nonsingular"
    idx = {r.stable_index for r in eff}
    signs = {None if r.saddle_value is None else (r.saddle_value > 0) for r in eff}
    if len(idx) == 1 and len(signs) == 1 and None not in signs:
        return "positive" if signs.pop() else "negative"
    return "mixed"


def _trivial_singularity(cls, records):
    """The singularity a class collapses onto (all boxes within two rings of it), else None."""
    ctr = cls.centers()
    reach = 2.5 * cls.box_diameter
    for r in records:
        if np.all(np.linalg.norm(ctr - r.position, axis=1) <= reach):
            return r
    return None


def _margins_for(split: Splitting, cfg: CocycleConfig, kind: str):
    dom = domination_rates(split)
    plain_c, plain_e = contraction_rates(split), expansion_rates(split)
    conv = {}
    for swap in (False, True):
        cf = cfg.with_convention(swap)
        conv[cf.convention] = {"contractE": contraction_rates(split, cf), "expandF": expansion_rates(split, cf)}
    which = "cs" if kind == "negative" else "cu"
    sect = sectional_rates(split, which)
    return dom, plain_c, plain_e, conv, sect


def _minf(a):
    a = np.asarray(a, float)
    if a.size == 0 or np.isnan(a).all():
        return math.nan
    return float(np.nanmin(a))


def analyze_class(spec: FieldSpec, cls, records: Sequence[SingularityRecord], *, T: float = 5.0,
                  samples: int = 10_000, n_proj: Optional[int] = None, seed: int = 0, swap_sides: bool = False,
                  dt: float = 0.05, s: Optional[int] = None, escape: Optional[EscapeOptions] = None,
                  transient: float = 10.0, rtol: float = 1e-9) -> SplittingReport:
    """Full verdict for one chain class given as a BoxSet.

    ``records`` are all classified zeros of the region; those inside the
    class get their escaping spaces computed here.
    """
    d = spec.dim
    in_cls = [r for r in records if cls.contains(r.position[None])[0]]
    for r in in_cls:
        if r.hyperbolic:
            escaping_spaces(spec, r, cls, escape)
    cfg = CocycleConfig.from_records(records, swap_sides=swap_sides)
    triv = _trivial_singularity(cls, in_cls)
    if triv is not None:
        ok = bool(triv.hyperbolic)
        return SplittingReport("Hyperbolic" if ok else "Undetermined", None if ok else "non-hyperbolic singularity",
                               triv.periodic_index if triv.periodic_index is not None else triv.stable_index, T,
                               {"dom": None, "contractE": None, "expandF": None, "sectional": None}, cfg.convention,
                               {"trivial_class": True, "singularity": int(triv.ident), "n_samples": 0})
    eff = effective_singularities([r for r in in_cls if r.hyperbolic])
    kind = _kind(eff)
    if n_proj is None:
        n_proj = min(256, max(16, samples // 40))
    with_center = [r for r in eff if r.center_basis is not None and r.center_basis.shape[1]]
    n_center = sum(1 if r.center_basis.shape[1] == 1 else n_proj for r in with_center)
    ext = sample_extended_set(spec, cls, eff, max(0, samples - n_center), n_proj, horizon=T, dt=dt, cfg=cfg,
                              transient=transient, seed=seed, rtol=rtol)
    n_lift = sum(t == "lift" for t in ext.tags)
    n_drop = len(ext.dropped)
    if s is None:
        ind = {r.periodic_index for r in eff}
        candidates = [ind.pop()] if len(ind) == 1 and None not in ind else list(range(d))
    else:
        candidates = [s]

    best = None
    for s_try in candidates:
        try:
            split = estimate_splitting(spec, ext, s_try, T, cfg)
        except DegenerateSplitting:
            continue
        dom, pc, pe, conv, sect = _margins_for(split, cfg, kind)
        cur = conv[cfg.convention]
        margins = {"dom": _minf(dom), "contractE": _minf(cur["contractE"]), "expandF": _minf(cur["expandF"]),
                   "sectional": _minf(sect)}
        plain = {"contractE": _minf(pc), "expandF": _minf(pe)}
        v, reason = verdict(kind, margins, plain)
        score = min(x for x in (margins["dom"], plain["contractE"], plain["expandF"]) if not math.isnan(x))
        rank = (v != "Undetermined", score)
        if best is None or rank > best[0]:
            best = (rank, s_try, split, dom, pc, pe, conv, sect, margins, plain, v, reason)
    if best is None:
        return SplittingReport("Undetermined", "degenerate splitting", None, T,
                               {"dom": None, "contractE": None, "expandF": None, "sectional": None}, cfg.convention,
                               {"n_samples": len(ext), "n_lift": n_lift, "n_dropped": n_drop})
    _, s_best, split, dom, pc, pe, conv, sect, margins, plain, v, reason = best
    cand_drop = n_lift + n_drop
    if cand_drop and n_drop / cand_drop > ESCAPE_FRACTION and v != "Undetermined":
        v, reason = "Undetermined", "escape"
    certifying = [name for name, r in conv.items() if _pos(margins["dom"]) and _pos(_minf(r["contractE"]))
                  and _pos(_minf(r["expandF"]))]
    conv_min = {name: {k: _minf(a) for k, a in r.items()} for name, r in conv.items()}
    tags = np.array(split.tags)
    per = {"dom": dom, "contractE": conv[cfg.convention]["contractE"],
           "expandF": conv[cfg.convention]["expandF"], "sectional": sect}
    by_source = {}
    for grp in sorted(set(tags)):
        sel = tags == grp
        by_source[grp] = {k: _minf(a[sel]) for k, a in per.items()}
    frac_pos = {k: float(np.mean(np.nan_to_num(a, nan=1.0) > 0)) for k, a in per.items()}
    failures = []
    for name, a in per.items():
        for i in np.flatnonzero(np.nan_to_num(a, nan=1.0) <= 0)[:20]:
            failures.append({"sample": int(i), "source": str(tags[i]), "margin": name, "value": _fmt(a[i])})
    finite = dom[np.isfinite(dom)]
    K = float(math.exp(T * (np.median(finite) - finite.min()))) if finite.size else None
    stats = {"n_samples": int(split.n_samples), "n_lift": int(n_lift), "n_center": int(split.n_samples - n_lift),
             "n_dropped": int(n_drop), "orientation": int(ext.orientation), "kind": kind,
             "effective_singularities": [int(r.ident) for r in eff], "fraction_positive": frac_pos,
             "by_source": by_source, "eta_star": _fmt(star_rate(margins["dom"]))}
    return SplittingReport(v, reason, s_best, T, margins, cfg.convention, stats, failures, plain, conv_min,
                           certifying, K, split)
