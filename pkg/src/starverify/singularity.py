"""Zeros of the field and the per-singularity quantities built on DX(sigma).

Exponents at a singularity are the real parts of the eigenvalues of DX(sigma),
sorted ascending with multiplicity.  With ``s`` negative exponents the saddle
value is ``lam[s-1] + lam[s]`` (0-based) and the periodic index is ``s - 1``
for a positive saddle value and ``s`` for a negative one.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import null_space, orth, schur

from .fieldspec import FieldSpec

log = logging.getLogger(__name__)

HYPERBOLIC_TOL = 1e-8
GAP_TOL = 1e-9


class SingularityList(list):
    """List of zeros; ``dropped`` counts Newton seeds that did not converge."""

    dropped: int = 0


def _newton(spec: FieldSpec, x, max_iter=60):
    for _ in range(max_iter):
        with np.errstate(all="ignore"):
            f = spec.fn(x)
            J = spec.jac_fn(x)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(J))):
            return None
        nf = float(np.linalg.norm(f))
        if nf <= 1e-13 * max(1.0, float(np.linalg.norm(x))):
            return x
        try:
            dx = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(J, -f, rcond=None)[0]
        lam = 1.0
        for _ in range(30):
            xt = x + lam * dx
            with np.errstate(all="ignore"):
                ft = spec.fn(xt)
            if np.all(np.isfinite(ft)) and np.linalg.norm(ft) < nf:
                break
            lam *= 0.5
        else:
            return x if nf <= 1e-10 else None
        x = xt
        if np.linalg.norm(x) > 1e12:
            return None
    with np.errstate(all="ignore"):
        return x if np.linalg.norm(spec.fn(x)) <= 1e-10 else None


def find_singularities(spec: FieldSpec, region, grid: int = 5) -> SingularityList:
    """Newton from a ``grid``-per-axis lattice of seeds in ``region`` = (lo, hi)."""
    if grid < 2:
        raise ValueError("grid must be >= 2 per axis")
    lo, hi = (np.asarray(b, float) for b in region)
    axes = [np.linspace(a, b, grid) for a, b in zip(lo, hi)]
    found: list[np.ndarray] = []
    dropped = 0
    pad = 1e-9 * np.maximum(1.0, hi - lo)
    for seed in itertools.product(*axes):
        x = _newton(spec, np.array(seed, float))
        if x is None or np.any(x < lo - pad) or np.any(x > hi + pad):
            dropped += x is None
            continue
        with np.errstate(all="ignore"):
            if not np.linalg.norm(spec.fn(x)) <= 1e-10:
                dropped += 1
                continue
        if all(np.linalg.norm(x - y) >= 1e-6 for y in found):
            found.append(x)
    found.sort(key=lambda p: tuple(np.round(p, 9)))
    out = SingularityList(found)
    out.dropped = dropped
    if dropped:
        log.info("find_singularities: %d seeds did not converge", dropped)
    return out


@dataclass
class EigenBlock:
    real_part: float
    eigenvalues: np.ndarray
    basis: np.ndarray  # d x dim, orthonormal columns

    @property
    def dim(self) -> int:
        return self.basis.shape[1]


@dataclass
class SingularityRecord:
    position: np.ndarray
    jacobian: np.ndarray
    eigenvalues: np.ndarray
    exponents: np.ndarray
    stable_index: int
    hyperbolic: bool
    saddle_value: Optional[float]
    periodic_index: Optional[int]
    lorenz_gap: bool  # eigenvalue-gap part of the Lorenz-like condition
    escaping_stable_dim: Optional[int] = None
    escaping_unstable_dim: Optional[int] = None
    center_basis: Optional[np.ndarray] = None
    escape_status: str = "not computed"
    ident: int = 0

    @property
    def dim(self) -> int:
        return self.position.size

    @property
    def s(self) -> int:
        return self.stable_index

    @property
    def lorenz_like(self) -> Optional[bool]:
        """Full Lorenz-like test; None until the escaping spaces are known."""
        if not self.lorenz_gap or self.saddle_value is None:
            return False
        if self.escaping_stable_dim is None:
            return None
        s, d = self.stable_index, self.dim
        if self.saddle_value > 0:
            return self.escaping_stable_dim >= s - 1
        return self.escaping_unstable_dim >= d - s - 1

    def to_json(self) -> dict:
        cb = None
        if self.center_basis is not None:
            cb = [[float(v) for v in row] for row in self.center_basis.T]
        return {
            "position": [float(v) for v in self.position],
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "exponents": [float(v) for v in self.exponents],
            "s": int(self.stable_index),
            "hyperbolic": bool(self.hyperbolic),
            "sv": None if self.saddle_value is None else float(self.saddle_value),
            "ind_p": None if self.periodic_index is None else int(self.periodic_index),
            "lorenz_like": None if self.lorenz_like is None else bool(self.lorenz_like),
            "lorenz_gap": bool(self.lorenz_gap),
            "escaping_stable_dim": self.escaping_stable_dim,
            "escaping_unstable_dim": self.escaping_unstable_dim,
            "center_dim": None if self.center_basis is None else int(self.center_basis.shape[1]),
            "center_basis": cb,
            "escape_status": self.escape_status,
        }


def _real_schur_eigs(A: np.ndarray) -> np.ndarray:
    T, _ = schur(A, output="real")
    d = A.shape[0]
    eigs = []
    i = 0
    while i < d:
        if i + 1 < d and T[i + 1, i] != 0.0:
            a, b, c, e = T[i, i], T[i, i + 1], T[i + 1, i], T[i + 1, i + 1]
            tr, det = a + e, a * e - b * c
            disc = tr * tr / 4 - det
            im = math.sqrt(max(-disc, 0.0))
            eigs += [complex(tr / 2, im), complex(tr / 2, -im)]
            i += 2
        else:
            eigs.append(complex(T[i, i], 0.0))
            i += 1
    return np.array(sorted(eigs, key=lambda z: (z.real, z.imag)))


def exponents_from_eigenvalues(eigs) -> np.ndarray:
    return np.sort(np.real(np.asarray(eigs, complex)))


def saddle_value(exponents, s: int) -> Optional[float]:
    if s < 1 or s > len(exponents) - 1:
        return None
    return float(exponents[s - 1] + exponents[s])


def periodic_index(sv: Optional[float], s: int) -> Optional[int]:
    if sv is None or sv == 0.0:
        return None
    return s - 1 if sv > 0 else s


def classify_singularity(spec: FieldSpec, sigma, check: bool = True) -> SingularityRecord:
    sigma = np.asarray(sigma, float)
    if check:
        r = float(np.linalg.norm(spec.eval_field(sigma)))
        if r > 1e-8:
            raise ValueError(f"|X(sigma)| = {r:.3e} is not a zero")
    A = spec.eval_jacobian(sigma)
    eigs = _real_schur_eigs(A)
    lam = exponents_from_eigenvalues(eigs)
    s = int(np.sum(lam < 0))
    hyper = bool(np.min(np.abs(lam)) > HYPERBOLIC_TOL)
    d = lam.size
    sv = ind = None
    gap = False
    if hyper:
        sv = saddle_value(lam, s)
        ind = periodic_index(sv, s)
        if sv is not None and sv != 0.0:
            if sv > 0:
                gap = s < 2 or lam[s - 2] < lam[s - 1] - GAP_TOL
            else:
                gap = s + 2 > d or lam[s] < lam[s + 1] - GAP_TOL
    else:
        log.warning("singularity at %s is not hyperbolic; downstream verdicts are undetermined", sigma)
    return SingularityRecord(sigma, A, eigs, lam, s, hyper, sv, ind, gap)


def _invariant_subspace(A: np.ndarray, select) -> np.ndarray:
    """Orthonormal basis of the invariant subspace for eigenvalues with select(re) True."""
    d = A.shape[0]
    T, Z, k = schur(A, output="real", sort=lambda re, im: bool(select(re)))
    return Z[:, :k] if k else np.zeros((d, 0))


def _intersect(U: np.ndarray, V: np.ndarray) -> np.ndarray:
    d = U.shape[0]
    if U.shape[1] == 0 or V.shape[1] == 0:
        return np.zeros((d, 0))
    N = null_space(np.hstack([U, -V]), rcond=1e-9)
    if N.size == 0:
        return np.zeros((d, 0))
    return orth(U @ N[: U.shape[1]])


def _group_real_parts(lam: np.ndarray) -> list[float]:
    groups: list[list[float]] = []
    for v in np.sort(lam):
        if groups and abs(v - groups[-1][-1]) <= GAP_TOL * max(1.0, abs(v)):
            groups[-1].append(v)
        else:
            groups.append([v])
    return [float(np.mean(g)) for g in groups]


def finest_splitting_at(record: SingularityRecord) -> list[EigenBlock]:
    """Eigen-blocks grouped by equal real part, ordered by real part."""
    A = record.jacobian
    centers = _group_real_parts(record.exponents)
    blocks = []
    for k, c in enumerate(centers):
        lo = (centers[k - 1] + c) / 2 if k > 0 else -math.inf
        hi = (centers[k + 1] + c) / 2 if k + 1 < len(centers) else math.inf
        below = _invariant_subspace(A, lambda re, hi=hi: re < hi)
        above = _invariant_subspace(A, lambda re, lo=lo: re > lo)
        if len(centers) == 1:
            basis = np.eye(A.shape[0])
        elif k == 0:
            basis = below
        elif k == len(centers) - 1:
            basis = above
        else:
            basis = _intersect(below, above)
        ev = np.array([z for z in record.eigenvalues if lo < z.real < hi])
        blocks.append(EigenBlock(c, ev, basis))
    return blocks


# ---------------------------------------------------------------------------
# escaping spaces
# ---------------------------------------------------------------------------


@dataclass
class EscapeOptions:
    inner: float = 2.0  # sampled radii, in box diameters of the box set
    outer: float = 4.0
    radii: int = 5
    samples: int = 16  # directions per sphere (at least 2 per dimension)
    seed: int = 0


class EscapeUndetermined(RuntimeError):
    pass


def _sphere(dim: int, n: int, rng) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        a = 2 * np.pi * np.arange(n) / n
        return np.column_stack([np.cos(a), np.sin(a)])
    pts = np.vstack([np.eye(dim), -np.eye(dim), rng.standard_normal((n, dim))])
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def block_sum_escapes(sigma, V, boxes, opts: EscapeOptions, rng=None) -> bool:
    """True iff no sample of the shell {sigma + rho u : u in V, |u| = 1} lies in ``boxes``.

    The shell spans ``opts.inner`` to ``opts.outer`` box diameters, outside
    the boxes holding sigma itself.  The tangent space V stands in for the
    local invariant manifold.
    """
    rng = rng or np.random.default_rng(opts.seed)
    diam = boxes.box_diameter
    rho = np.linspace(opts.inner, opts.outer, opts.radii) * diam
    U = _sphere(V.shape[1], opts.samples, rng) @ V.T
    P = (sigma[None, None, :] + rho[:, None, None] * U[None]).reshape(-1, sigma.size)
    return not bool(boxes.contains(P).any())


def escaping_spaces(spec: FieldSpec, record: SingularityRecord, boxes, opts: EscapeOptions | None = None):
    """Escaping stable/unstable dimensions and the centre space of ``record`` in ``boxes``.

    Strong stable block sums are tried largest first; the first one whose
    tangent shell misses the box set gives the escaping stable dimension
    (0 if none does).  The unstable side is the same with the unstable
    blocks.  The centre space is the invariant subspace of the remaining
    blocks.  Numerical evidence only.  Updates ``record`` in place and returns
    (ess_dim, euu_dim, center_basis).
    """
    opts = opts or EscapeOptions()
    if not record.hyperbolic:
        raise EscapeUndetermined("non-hyperbolic singularity")
    sigma = record.position
    d = sigma.size
    rng = np.random.default_rng(opts.seed)
    groups = _group_real_parts(record.exponents)
    A = record.jacobian

    def tol(c):
        return GAP_TOL * max(1.0, abs(c))

    def side(cuts, stable):
        for cut in cuts:
            if stable:
                V = _invariant_subspace(A, lambda re, cut=cut: re <= cut + tol(cut))
            else:
                V = _invariant_subspace(A, lambda re, cut=cut: re >= cut - tol(cut))
            if block_sum_escapes(sigma, V, boxes, opts, rng):
                return V.shape[1], cut
        return 0, None

    # largest sum first: the weakest stable block is the last one included
    ess, cut_s = side([c for c in groups if c < 0][::-1], True)
    euu, cut_u = side([c for c in groups if c > 0], False)
    if ess + euu >= d:
        Ec = np.zeros((d, 0))
    else:
        lo_b = _invariant_subspace(A, lambda re: re > cut_s + tol(cut_s)) if ess else np.eye(d)
        hi_b = _invariant_subspace(A, lambda re: re < cut_u - tol(cut_u)) if euu else np.eye(d)
        if ess and euu:
            Ec = _intersect(lo_b, hi_b)
        else:
            Ec = lo_b if ess else hi_b
    record.escaping_stable_dim = ess
    record.escaping_unstable_dim = euu
    record.center_basis = Ec
    record.escape_status = "escaping (numerical)"
    return ess, euu, Ec
