"""Box covers, the time-tau transition graph and its strongly connected components.

The graph is built by subdivision: start from a full grid at a coarse depth,
keep only boxes lying in a recurrent SCC, split each kept box into 2^d
children and repeat.  An edge b -> b' exists when the image of a sample of b,
grown by one box radius plus a capped Lipschitz inflation, meets b'.  This is
a numerical outer approximation, not an enclosure.
"""
from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .fieldspec import FieldSpec
from .flow import dopri5_batch

log = logging.getLogger(__name__)

OUTSIDE = -1


class ResourceCapExceeded(RuntimeError):
    def __init__(self, depth_fit: int, boxes: int, cap: int):
        self.depth_fit = depth_fit
        super().__init__(f"{boxes} boxes exceed the cap of {cap}; depth {depth_fit} fits")


class NoIsolatingNeighborhood(RuntimeError):
    pass


@dataclass
class GraphOptions:
    rtol: float = 1e-6
    radius_factor: float = 0.5  # bloat in box widths before the Lipschitz term
    lip_cap: float = 1.0
    start_boxes: int = 4096
    max_boxes: int = 2_000_000
    chunk: int = 200_000
    singularities: Optional[list] = None  # None: search with find_singularities


@dataclass
class BoxSet:
    """A set of boxes of one lattice; supports point membership."""

    lo: np.ndarray
    hi: np.ndarray
    depth: int
    keys: np.ndarray  # sorted linear lattice keys

    @property
    def n(self) -> int:
        return 2 ** self.depth

    @property
    def width(self) -> np.ndarray:
        return (self.hi - self.lo) / self.n

    @property
    def box_diameter(self) -> float:
        return float(np.linalg.norm(self.width))

    def __len__(self):
        return int(self.keys.size)

    def coords(self) -> np.ndarray:
        return unravel(self.keys, self.n, self.lo.size)

    def centers(self) -> np.ndarray:
        return self.lo + (self.coords() + 0.5) * self.width

    def grown(self, margin: int = 1) -> "BoxSet":
        """The boxes within ``margin`` lattice steps (Chebyshev) of this set."""
        if margin <= 0 or not len(self):
            return self
        return BoxSet(self.lo, self.hi, self.depth, _grow(self.keys, self.n, self.lo.size, margin))

    def contains(self, points) -> np.ndarray:
        P = np.atleast_2d(np.asarray(points, float))
        u = (P - self.lo) / self.width
        # points a hair outside the region (roundoff) count as on its boundary
        u = np.where((u < 0) & (u > -1e-9), 0.0, u)
        u = np.where((u >= self.n) & (u < self.n + 1e-9), self.n - 0.5, u)
        c = np.floor(u).astype(np.int64)
        inside = np.all((c >= 0) & (c < self.n), axis=1) & np.all(np.isfinite(P), axis=1)
        out = np.zeros(len(P), bool)
        if inside.any():
            k = ravel(c[inside], self.n)
            pos = np.searchsorted(self.keys, k)
            pos = np.minimum(pos, self.keys.size - 1)
            out[inside] = self.keys[pos] == k if self.keys.size else False
        return out


def ravel(c: np.ndarray, n: int) -> np.ndarray:
    c = np.asarray(c, np.int64)
    mult = n ** np.arange(c.shape[-1], dtype=np.int64)
    return c @ mult


def unravel(k: np.ndarray, n: int, d: int) -> np.ndarray:
    k = np.asarray(k, np.int64)
    return np.stack([(k // n ** i) % n for i in range(d)], axis=-1)


@dataclass
class BoxGraph:
    spec: FieldSpec = field(repr=False)
    lo: np.ndarray
    hi: np.ndarray
    depth: int
    tau: float
    samples_per_axis: int
    keys: np.ndarray  # sorted linear keys of the live boxes
    adj: sparse.csr_matrix = field(repr=False)  # (m+1)x(m+1); row/col m is the outside sink
    labels: np.ndarray = field(repr=False)
    classes: list = field(repr=False)  # lists of box rows, largest first
    eps: float = 0.0
    singular_rows: tuple = ()
    options: GraphOptions = field(default_factory=GraphOptions, repr=False)
    reversed_time: bool = False
    touch: Optional[sparse.csr_matrix] = field(default=None, repr=False)  # links between touching recurrent boxes

    @property
    def n(self) -> int:
        return 2 ** self.depth

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def n_boxes(self) -> int:
        return int(self.keys.size)

    @property
    def width(self) -> np.ndarray:
        return (self.hi - self.lo) / self.n

    @property
    def box_diameter(self) -> float:
        return float(np.linalg.norm(self.width))

    def coords(self, rows=None) -> np.ndarray:
        k = self.keys if rows is None else self.keys[np.asarray(rows, int)]
        return unravel(k, self.n, self.dim)

    def centers(self, rows=None) -> np.ndarray:
        return self.lo + (self.coords(rows) + 0.5) * self.width

    def box_set(self, rows) -> BoxSet:
        return BoxSet(self.lo, self.hi, self.depth, np.sort(self.keys[np.asarray(rows, int)]))

    def class_sets(self) -> list[BoxSet]:
        return [self.box_set(c) for c in self.classes]

    def rows_of(self, keys) -> np.ndarray:
        keys = np.asarray(keys, np.int64)
        pos = np.minimum(np.searchsorted(self.keys, keys), self.keys.size - 1)
        ok = self.keys[pos] == keys
        return np.where(ok, pos, -1)

    def successors(self, row: int) -> np.ndarray:
        a = self.adj
        return a.indices[a.indptr[row]:a.indptr[row + 1]]

    def has_self_edge(self, row: int) -> bool:
        return bool(np.any(self.successors(row) == row))

    def escaping_rows(self) -> np.ndarray:
        """Boxes with an edge to the outside sink."""
        m = self.n_boxes
        return np.flatnonzero(self.adj[:m, m].toarray().ravel())

    def reversed(self) -> "BoxGraph":
        """Graph of -X: live edges transposed; the outside sink is dropped."""
        m = self.n_boxes
        inner = self.adj[:m, :m].T.tocsr()
        adj = sparse.bmat([[inner, None], [None, sparse.csr_matrix((1, 1))]], format="csr")
        return BoxGraph(self.spec.negated(), self.lo, self.hi, self.depth, self.tau, self.samples_per_axis,
                        self.keys, adj, self.labels.copy(), [c.copy() for c in self.classes], self.eps,
                        self.singular_rows, self.options, not self.reversed_time, self.touch)


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def _batch_field(spec: FieldSpec):
    fn = spec.fn
    return lambda Y: fn(Y.T).T


def _images(spec, pts, tau, lo, hi, opts: GraphOptions):
    """Time-tau images of the rows of pts; rows leaving the region are flagged."""
    f = _batch_field(spec)
    out = np.empty_like(pts)
    ok = np.ones(len(pts), bool)

    def alive(Y):
        return np.all((Y >= lo) & (Y <= hi), axis=1)

    for s in range(0, len(pts), opts.chunk):
        Y, good = dopri5_batch(f, pts[s:s + opts.chunk], tau, opts.rtol, opts.rtol, alive=alive)
        out[s:s + opts.chunk] = Y
        ok[s:s + opts.chunk] = good
    return out, ok


def _sample_points(coords, q, lo, width):
    """Unique sample lattice: q points per axis per box, shared between neighbours."""
    d = coords.shape[1]
    offs = np.array(list(itertools.product(range(q), repeat=d)), np.int64)
    sub = coords[:, None, :] * (q - 1) + offs[None, :, :]  # (m, q^d, d)
    N = 2 ** 62
    base = int(coords.max(initial=0) + 1) * (q - 1) + 1
    if base ** d >= N:
        raise ValueError("lattice too fine for 64-bit keys")
    mult = base ** np.arange(d, dtype=np.int64)
    keys = sub @ mult
    uk, inv = np.unique(keys.ravel(), return_inverse=True)
    first = np.zeros(uk.size, np.int64)
    first[inv] = np.arange(inv.size)
    flat = sub.reshape(-1, d)[first]
    pts = lo + flat * (width / (q - 1))
    return pts, inv.reshape(len(coords), -1)


def _edges_raw(spec, keys, depth, lo, hi, tau, q, opts, extra=None):
    """Edges as (src_row, dst_key); dst_key is OUTSIDE for images leaving the region.

    ``extra`` = (rows, points) adds samples owned by the given box rows.
    """
    d = lo.size
    n = 2 ** depth
    width = (hi - lo) / n
    coords = unravel(keys, n, d)
    pts, inv = _sample_points(coords, q, lo, width)
    n_grid = len(pts)
    if extra is not None and len(extra[0]):
        pts = np.vstack([pts, extra[1]])
    X = _batch_field(spec)(pts)
    img, ok = _images(spec, pts, tau, lo, hi, opts)
    # per-box Lipschitz estimate from field values at its samples
    centre = inv[:, inv.shape[1] // 2]
    dX = X[inv] - X[centre][:, None, :]
    dp = pts[inv] - pts[centre][:, None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.linalg.norm(dX, axis=2) / np.linalg.norm(dp, axis=2)
    lip = np.nan_to_num(ratio, nan=0.0, posinf=0.0).max(axis=1)
    # one box radius, plus the sampling gap scaled by the Lipschitz estimate
    gap = width / (2 * (q - 1))
    bloat = (width * opts.radius_factor)[None, :] + gap[None, :] * np.minimum(opts.lip_cap, lip * abs(tau))[:, None]
    m = len(keys)
    rows = np.repeat(np.arange(m), inv.shape[1])
    samp = inv.ravel()
    if len(pts) > n_grid:
        rows = np.concatenate([rows, np.asarray(extra[0], np.int64)])
        samp = np.concatenate([samp, np.arange(n_grid, len(pts))])
    out_rows = np.unique(rows[~ok[samp]])
    src_all = [out_rows]
    dst_all = [np.full(out_rows.size, OUTSIDE, np.int64)]
    good = ok[samp]
    rows, samp = rows[good], samp[good]
    step = max(1, opts.chunk)
    for s in range(0, rows.size, step):
        r = rows[s:s + step]
        y = img[samp[s:s + step]]
        b = bloat[r]
        lo_i = np.clip(np.floor((y - b - lo) / width), 0, n - 1).astype(np.int64)
        hi_i = np.clip(np.floor((y + b - lo) / width), 0, n - 1).astype(np.int64)
        span = hi_i - lo_i
        K = int(span.max(initial=0)) + 1
        for off in itertools.product(range(K), repeat=d):
            off = np.array(off)
            sel = np.all(off <= span, axis=1)
            if sel.any():
                src_all.append(r[sel])
                dst_all.append(ravel(lo_i[sel] + off, n))
    src = np.concatenate(src_all).astype(np.int64)
    dst = np.concatenate(dst_all).astype(np.int64)
    base = n ** d + 1
    if m * base < 2 ** 62:
        u = np.unique(src * base + (dst + 1))
        src, dst = u // base, u % base - 1
    else:
        pair = np.unique(np.stack([src, dst], axis=1), axis=0)
        src, dst = pair[:, 0], pair[:, 1]
    eps = float(np.linalg.norm(2 * bloat.max(axis=0))) if m else 0.0
    return src, dst, eps


def _edges(spec, keys, depth, lo, hi, tau, q, opts, extra_sing_rows=(), extra=None):
    """Edge list between live boxes (dst OUTSIDE for the sink); targets that are not live are dropped."""
    src, dkey, eps = _edges_raw(spec, keys, depth, lo, hi, tau, q, opts, extra)
    out = dkey == OUTSIDE
    pos = np.minimum(np.searchsorted(keys, dkey), keys.size - 1)
    hit = (keys[pos] == dkey) & ~out
    dst = np.where(out, OUTSIDE, pos)
    keep = hit | out
    src, dst = src[keep], dst[keep]
    if extra_sing_rows:
        sr = np.array(extra_sing_rows, np.int64)
        src, dst = np.concatenate([src, sr]), np.concatenate([dst, sr])
    return src, dst, eps


def _adjacency(src, dst, m):
    dst = np.where(dst == OUTSIDE, m, dst)
    A = sparse.csr_matrix((np.ones(src.size, np.int8), (src, dst)), shape=(m + 1, m + 1))
    A.sum_duplicates()
    A.data[:] = 1
    return A


def _recurrent_sccs(A, m):
    """SCC labels on live boxes and the recurrent classes (nontrivial or self-looped)."""
    inner = A[:m, :m]
    if m == 0:
        return np.zeros(0, int), []
    ncomp, labels = connected_components(inner, directed=True, connection="strong")
    sizes = np.bincount(labels, minlength=ncomp)
    selfloop = inner.diagonal() > 0
    rec = sizes > 1
    rec[labels[selfloop]] = True
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(ncomp + 1))
    classes = [order[bounds[c]:bounds[c + 1]] for c in range(ncomp) if rec[c]]
    classes.sort(key=lambda rows: (-rows.size, int(rows.min())))
    return labels, classes


def _touching_pairs(keys, rows, n, d):
    """Pairs (i, j) of the given box rows whose closures touch (Chebyshev distance 1)."""
    sub = keys[rows]
    order = np.argsort(sub)
    sk, sr = sub[order], rows[order]
    c = unravel(sk, n, d)
    out_i, out_j = [], []
    for off in itertools.product((-1, 0, 1), repeat=d):
        if not any(off):
            continue
        nb = c + np.array(off)
        ok = np.all((nb >= 0) & (nb < n), axis=1)
        k = ravel(nb[ok], n)
        pos = np.minimum(np.searchsorted(sk, k), sk.size - 1)
        hit = sk[pos] == k
        out_i.append(sr[ok][hit])
        out_j.append(sr[pos[hit]])
    if not out_i:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(out_i), np.concatenate(out_j)


def _merge_touching(keys, classes, n, d, m):
    """Union of recurrent SCCs whose boxes touch; returns (classes, touching adjacency)."""
    if not classes:
        return [], sparse.csr_matrix((m + 1, m + 1), dtype=np.int8)
    rows = np.sort(np.concatenate(classes))
    ti, tj = _touching_pairs(keys, rows, n, d)
    T = sparse.csr_matrix((np.ones(ti.size, np.int8), (ti, tj)), shape=(m + 1, m + 1))
    # link each SCC internally, then join through touching pairs
    li = np.concatenate([c for c in classes])
    lj = np.concatenate([np.full(c.size, c[0]) for c in classes])
    G = sparse.csr_matrix((np.ones(li.size + ti.size), (np.concatenate([li, ti]), np.concatenate([lj, tj]))),
                          shape=(m, m))
    _, comp = connected_components(G, directed=False)
    groups: dict[int, list] = {}
    for r in rows:
        groups.setdefault(int(comp[r]), []).append(r)
    merged = [np.array(sorted(g), np.int64) for g in groups.values()]
    merged.sort(key=lambda g: (-g.size, int(g.min())))
    return merged, T


def _singular_keys(sings, lo, hi, n):
    """Keys of every box whose closure contains one of the singularities."""
    width = (hi - lo) / n
    out = set()
    for s in sings:
        s = np.asarray(s, float)
        pad = 1e-9 * (hi - lo)
        if np.any(s < lo - pad) or np.any(s > hi + pad):
            continue
        s = np.clip(s, lo, hi)
        u = (s - lo) / width
        choices = []
        for ui in u:
            f = math.floor(ui)
            c = {min(max(f, 0), n - 1)}
            if abs(ui - round(ui)) < 1e-9:
                r = int(round(ui))
                c |= {min(max(r - 1, 0), n - 1), min(max(r, 0), n - 1)}
            choices.append(sorted(c))
        for cc in itertools.product(*choices):
            out.add(int(ravel(np.array(cc), n)))
    return np.array(sorted(out), np.int64)


def _singular_samples(spec, sings, keys, depth, lo, hi, tau, max_levels=40, per_octave=16):
    """Samples on shrinking spheres around each singularity, owned by the box containing them.

    Near a hyperbolic zero the time-tau image of a box is stretched along the
    unstable manifold far beyond what a fixed sample lattice resolves; radii
    r 2^(-j/16) down to r e^(-L tau) fill that image in.
    """
    d = lo.size
    n = 2 ** depth
    width = (hi - lo) / n
    dirs = np.array([o for o in itertools.product((-1, 0, 1), repeat=d) if any(o)], float)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    rows_out, pts_out = [], []
    for s in sings:
        s = np.asarray(s, float)
        if np.any(s < lo - 1e-9 * (hi - lo)) or np.any(s > hi + 1e-9 * (hi - lo)):
            continue
        with np.errstate(all="ignore"):
            J = spec.jac_fn(s)
        lam = float(np.max(np.abs(np.linalg.eigvals(J)))) if np.all(np.isfinite(J)) else 0.0
        octaves = int(min(max_levels, math.ceil(lam * abs(tau) / math.log(2)) + 1))
        r0 = 0.5 * float(np.min(width))
        radii = r0 * 2.0 ** -(np.arange(1, per_octave * octaves + 1) / per_octave)
        P = (s + radii[:, None, None] * dirs[None]).reshape(-1, d)
        P = P[np.all((P >= lo) & (P <= hi), axis=1)]
        c = np.clip(np.floor((P - lo) / width), 0, n - 1).astype(np.int64)
        k = ravel(c, n)
        pos = np.minimum(np.searchsorted(keys, k), keys.size - 1)
        hit = keys[pos] == k
        rows_out.append(pos[hit])
        pts_out.append(P[hit])
    if not rows_out:
        return None
    return np.concatenate(rows_out), np.vstack(pts_out)


def build_box_graph(spec: FieldSpec, region, depth: int, tau: float = 1.0, samples_per_box: Optional[int] = None,
                    opts: GraphOptions | None = None) -> BoxGraph:
    """Box graph of the time-tau map at subdivision ``depth`` (2^depth boxes per axis)."""
    opts = opts or GraphOptions()
    lo, hi = (np.asarray(b, float) for b in region)
    d = lo.size
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if tau < 1.0:
        raise ValueError("tau must be >= 1")
    if samples_per_box is None:
        q = 3
    else:
        if samples_per_box < 2 ** d:
            raise ValueError(f"samples_per_box must be >= 2^d = {2 ** d}")
        q = max(2, int(math.floor(samples_per_box ** (1.0 / d) + 1e-9)))
    if opts.singularities is None:
        from .singularity import find_singularities
        sings = list(find_singularities(spec, (lo, hi)))
    else:
        sings = list(opts.singularities)
    k0 = min(depth, max(1, int(math.log2(max(2, opts.start_boxes)) // d)))
    if (2 ** k0) ** d > opts.max_boxes:
        raise ResourceCapExceeded(0, (2 ** k0) ** d, opts.max_boxes)
    n0 = 2 ** k0
    keys = np.arange(n0 ** d, dtype=np.int64)
    k = k0
    while True:
        n = 2 ** k
        skeys = _singular_keys(sings, lo, hi, n)
        keys = np.union1d(keys, skeys)
        srows = tuple(int(r) for r in np.searchsorted(keys, skeys))
        extra = _singular_samples(spec, sings, keys, k, lo, hi, tau)
        src, dst, eps = _edges(spec, keys, k, lo, hi, tau, q, opts, extra_sing_rows=srows, extra=extra)
        A = _adjacency(src, dst, keys.size)
        labels, classes = _recurrent_sccs(A, keys.size)
        log.info("depth %d: %d boxes, %d classes", k, keys.size, len(classes))
        if k == depth:
            classes, touch = _merge_touching(keys, classes, n, d, keys.size)
            return BoxGraph(spec, lo, hi, depth, tau, q, keys, A, labels, classes, eps, srows, opts, touch=touch)
        keep = np.concatenate(classes) if classes else np.zeros(0, np.int64)
        kept = unravel(keys[np.sort(keep)], n, d)
        if kept.shape[0] * 2 ** d > opts.max_boxes:
            raise ResourceCapExceeded(k, kept.shape[0] * 2 ** d, opts.max_boxes)
        offs = np.array(list(itertools.product(range(2), repeat=d)), np.int64)
        child = (kept[:, None, :] * 2 + offs[None]).reshape(-1, d)
        keys = np.unique(ravel(child, 2 * n))
        k += 1


def max_depth_for(d: int, cap: int) -> int:
    return int(math.floor(math.log2(cap) / d))


# ---------------------------------------------------------------------------
# queries
# ---------------------------------------------------------------------------


def chain_classes(graph: BoxGraph) -> list[np.ndarray]:
    """Recurrent SCCs as arrays of box rows, largest first."""
    return [c.copy() for c in graph.classes]


def is_chain_transitive(graph: BoxGraph, boxes) -> bool:
    """Strong connectivity of the induced subgraph, with touching recurrent boxes linked."""
    rows = np.unique(np.asarray(boxes, int))
    if rows.size == 0:
        return False
    A = graph.adj if graph.touch is None else graph.adj + graph.touch
    sub = A[rows][:, rows]
    if rows.size == 1:
        return bool(sub[0, 0])
    ncomp, _ = connected_components(sub, directed=True, connection="strong")
    return ncomp == 1


def tarjan_scc(n: int, succ) -> np.ndarray:
    """Iterative Tarjan; ``succ(v)`` yields successors.  Returns component labels."""
    index = np.full(n, -1)
    low = np.zeros(n, int)
    on = np.zeros(n, bool)
    label = np.full(n, -1)
    stack: list[int] = []
    counter = comp = 0
    for root in range(n):
        if index[root] >= 0:
            continue
        work = [(root, iter(succ(root)))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on[root] = True
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if index[w] < 0:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on[w] = True
                    work.append((w, iter(succ(w))))
                    advanced = True
                    break
                if on[w]:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                u = work[-1][0]
                low[u] = min(low[u], low[v])
            if low[v] == index[v]:
                while True:
                    w = stack.pop()
                    on[w] = False
                    label[w] = comp
                    if w == v:
                        break
                comp += 1
    return label


@dataclass
class FiltratingNeighborhood:
    keys: np.ndarray  # lattice keys of U (sorted)
    direction: str  # "attracting" or "repelling"
    class_keys: np.ndarray
    depth: int
    lo: np.ndarray
    hi: np.ndarray

    def box_set(self) -> BoxSet:
        return BoxSet(self.lo, self.hi, self.depth, self.keys)


def _grow(keys, n, d, margin):
    c = unravel(keys, n, d)
    offs = np.array(list(itertools.product(range(-margin, margin + 1), repeat=d)), np.int64)
    g = (c[:, None, :] + offs[None]).reshape(-1, d)
    g = g[np.all((g >= 0) & (g < n), axis=1)]
    return np.unique(ravel(g, n))


def _max_invariant(spec, U, cls, graph):
    """Largest subset of U with no edge leaving it; None if a class box is lost."""
    src, dkey, _ = _edges_raw(spec, U, graph.depth, graph.lo, graph.hi, graph.tau,
                              graph.samples_per_axis, graph.options)
    pos = np.minimum(np.searchsorted(U, dkey), U.size - 1)
    inside = (U[pos] == dkey) & (dkey != OUTSIDE)
    alive = np.ones(U.size, bool)
    alive[src[~inside]] = False
    pred = sparse.csr_matrix((np.ones(int(inside.sum())), (pos[inside], src[inside])), shape=(U.size, U.size))
    queue = list(np.flatnonzero(~alive))
    while queue:
        v = queue.pop()
        for u in pred.indices[pred.indptr[v]:pred.indptr[v + 1]]:
            if alive[u]:
                alive[u] = False
                queue.append(u)
    kept = U[alive]
    if not np.all(np.isin(cls, kept)):
        return None
    return kept


def filtrating_neighborhood(graph: BoxGraph, cls, margin: int = 2) -> FiltratingNeighborhood:
    """Grow ``cls`` (box rows) by ``margin`` rings and shrink to an invariant neighbourhood.

    The attracting side is tried first (no edge leaves U under the time-tau
    map), then the repelling side (same test for -X).
    """
    ckeys = np.sort(graph.keys[np.asarray(cls, int)])
    U0 = _grow(ckeys, graph.n, graph.dim, margin)
    spec = graph.spec if not graph.reversed_time else graph.spec.negated()
    for direction, f in (("attracting", spec), ("repelling", spec.negated())):
        U = _max_invariant(f, U0, ckeys, graph)
        if U is not None:
            return FiltratingNeighborhood(U, direction, ckeys, graph.depth, graph.lo, graph.hi)
    raise NoIsolatingNeighborhood(
        f"no forward- or backward-invariant neighbourhood within {margin} rings at depth {graph.depth}; "
        "try a deeper subdivision")


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------


def write_boxes_csv(graph: BoxGraph, path):
    c = graph.coords()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["box", *(f"i_{j + 1}" for j in range(graph.dim)), "depth"])
        for r in range(graph.n_boxes):
            w.writerow([r, *c[r].tolist(), graph.depth])


def write_edges_csv(graph: BoxGraph, path):
    A = graph.adj.tocoo()
    m = graph.n_boxes
    pairs = sorted(zip(A.row.tolist(), A.col.tolist()))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst"])
        for s, t in pairs:
            if s < m:
                w.writerow([s, OUTSIDE if t == m else t])


def write_classes_csv(graph: BoxGraph, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["box", "class"])
        for ci, rows in enumerate(graph.classes):
            for r in np.sort(rows):
                w.writerow([int(r), ci])


def write_plot_csv(graph: BoxGraph, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", *(f"c_{j + 1}" for j in range(graph.dim))])
        for ci, rows in enumerate(graph.classes):
            for p in graph.centers(np.sort(rows)):
                w.writerow([ci, *(format(float(v), ".17g") for v in p)])
