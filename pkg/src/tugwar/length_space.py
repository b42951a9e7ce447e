"""Epsilon-step games on sampled length spaces.

A :class:`SpaceSpec` describes a region and its boundary rule; ``build_complex``
samples it into an :class:`EpsilonComplex` whose adjacency joins points at
distance strictly below ``eps``.  On top of that live the game value
``u_eps``, the two favoured-game values, McShane-Whitney extensions,
Lipschitz audits and epsilon ladders.

Grid clouds routinely contain pairs whose intended distance is exactly
``eps`` (e.g. four grid steps when the spacing is ``eps/4``).  Computed
distances for such pairs scatter by a few ulps on either side of ``eps``, so
adjacency treats anything within a relative ``1e-9`` of ``eps`` as *not*
adjacent.  This makes the neighbourhood structure translation invariant.
"""
from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.spatial import ConvexHull, QhullError, cKDTree

from . import _kernels
from .game import GameError, GameGraph, ValueField, from_csr, residual_vector
from .solvers import NonConvergenceWarning, SolveReport, solve

ADJ_GUARD = 1e-9
KINDS = ("segment", "euclidean_ball", "euclidean_box", "comb", "l_shape", "annulus", "custom")


def _below(r: float) -> float:
    return r * (1.0 - ADJ_GUARD)


# --------------------------------------------------------------------------
# d^eps


def eps_hops(d, eps: float):
    """Integer ``1 + floor(d/eps)`` with the floor corrected for rounding.

    The result ``m`` satisfies ``eps*m > d`` and ``eps*(m-1) <= d`` in floating
    point.  Zero distance gives 1 (callers zero out the diagonal).
    """
    d = np.asarray(d, dtype=float)
    k = np.floor(d / eps)
    k = np.where(eps * k > d, k - 1, k)
    k = np.where(eps * (k + 1) <= d, k + 1, k)
    return (k + 1).astype(np.int64)


def d_eps(dist, eps: float, i=None, j=None):
    """``0`` if ``i == j`` else ``eps + eps*floor(d(i, j)/eps)``.

    ``dist`` is either a callable ``dist(i, j)`` or the distance value(s)
    themselves (then ``i``/``j`` are only used to detect the diagonal).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    d = np.asarray(dist(i, j) if callable(dist) else dist, dtype=float)
    same = (np.asarray(i) == np.asarray(j)) if (i is not None and j is not None) else (d == 0.0)
    # eps + eps*k keeps d^eps <= d + eps in floating point since eps*k <= d
    out = np.where(same, 0.0, eps + eps * (eps_hops(d, eps) - 1))
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# spaces


@dataclass
class SpaceSpec:
    """Declarative description of a sampled space and its terminal set.

    Boundary rules by kind: ``segment`` - both endpoints; ``euclidean_ball`` -
    the sphere (``dim`` 1 or 2); ``euclidean_box`` - the faces of
    ``[0, side]^dim``; ``comb`` - tooth tips and the base end ``(width, 0)``;
    ``l_shape`` - the two far endpoints ``(0, 1)`` and ``(1, 0)``;
    ``annulus`` - both circles; ``custom`` - the supplied mask.
    """

    kind: str
    spacing: float | None = None
    dim: int = 2
    radius: float = 1.0
    inner_radius: float = 0.5
    length: float = 1.0
    side: float = 1.0
    ells: list | None = None
    width: int | None = None
    points: list | None = None
    terminal: list | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GameError(f"unknown space kind {self.kind!r}")

    def to_json(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_json(cls, doc) -> "SpaceSpec":
        if isinstance(doc, str):
            doc = json.loads(doc)
        names = {f.name for f in fields(cls)}
        extra = set(doc) - names
        if extra:
            raise GameError(f"unknown space fields: {sorted(extra)}")
        return cls(**doc)


@dataclass(eq=False)
class EpsilonComplex:
    points: np.ndarray
    eps: float
    terminal: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    spacing: float
    h: float
    kind: str
    metric: str = "euclidean"
    tooth: np.ndarray | None = None
    _balls: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def terminal_idx(self) -> np.ndarray:
        return np.flatnonzero(self.terminal)

    def _metric(self, I, J) -> np.ndarray:
        # broadcasting distance between index arrays
        I, J = np.asarray(I), np.asarray(J)
        P, Q = self.points[I], self.points[J]
        if self.metric == "euclidean":
            diff = P - Q
            return np.sqrt(np.einsum("...k,...k->...", diff, diff))
        # comb: same tooth -> |y1 - y2|; otherwise down, along the base, up
        s1, y1, s2, y2 = P[..., 0], P[..., 1], Q[..., 0], Q[..., 1]
        same = (self.tooth[I] == self.tooth[J]) & (y1 > 0) & (y2 > 0)
        return np.where(same, np.abs(y1 - y2), y1 + np.abs(s1 - s2) + y2)

    def pairwise(self, I, J) -> np.ndarray:
        """Distance matrix between index arrays ``I`` and ``J``."""
        return self._metric(np.asarray(I)[:, None], np.asarray(J)[None, :])

    def dist(self, i, j):
        """Elementwise distance between (broadcast) index arrays."""
        out = self._metric(*np.broadcast_arrays(np.asarray(i), np.asarray(j)))
        return float(out) if np.ndim(out) == 0 else out

    def d_eps(self, i, j):
        return d_eps(self.dist, self.eps, i, j)

    def pairs_within(self, r: float):
        """Directed pairs ``(i, j)``, ``i != j``, with distance below ``r`` (guarded)."""
        if self.metric == "euclidean":
            pr = cKDTree(self.points).query_pairs(_below(r), output_type="ndarray")
            return np.r_[pr[:, 0], pr[:, 1]], np.r_[pr[:, 1], pr[:, 0]]
        rows, cols = [], []
        allj = np.arange(self.n)
        for s in range(0, self.n, 512):
            I = np.arange(s, min(s + 512, self.n))
            D = self.pairwise(I, allj)
            a, b = np.nonzero(D < _below(r))
            keep = I[a] != b
            rows.append(I[a][keep])
            cols.append(b[keep])
        return np.concatenate(rows), np.concatenate(cols)

    def ball_csr(self, radius: float, include_self: bool = True):
        """CSR lists of the open balls ``B_radius(x)`` over the cloud."""
        key = (float(radius), include_self)
        if key not in self._balls:
            i, j = self.pairs_within(radius)
            if include_self:
                i = np.r_[i, np.arange(self.n)]
                j = np.r_[j, np.arange(self.n)]
            order = np.lexsort((j, i))
            i, j = i[order], j[order]
            ptr = np.searchsorted(i, np.arange(self.n + 1)).astype(np.int64)
            self._balls[key] = (ptr, j.astype(np.int64))
        return self._balls[key]

    def two_step_csr(self):
        """Points reachable in at most two sub-eps steps (self included).

        In a length space this is exactly ``B_{2 eps}``; on a cloud it keeps
        the one-step and two-step reach commensurate, whereas the metric ball
        of radius ``2 eps`` reaches one extra grid step.
        """
        if "two_step" not in self._balls:
            ptr, idx = self.ball_csr(self.eps, include_self=True)
            A = csr_matrix((np.ones(len(idx)), idx, ptr), shape=(self.n, self.n))
            B = (A @ A).tocsr()
            B.sort_indices()
            self._balls["two_step"] = (B.indptr.astype(np.int64), B.indices.astype(np.int64))
        return self._balls["two_step"]

    def diameter(self) -> float:
        if self.metric == "euclidean":
            P = self.points
            if P.shape[1] == 1:
                return float(P.max() - P.min())
            try:
                cand = ConvexHull(P).vertices
            except QhullError:
                cand = np.arange(self.n)
            return float(self.pairwise(cand, cand).max())
        ext = np.array([np.argmin(self.points[:, 0]), np.argmax(self.points[:, 0])])
        tips = np.flatnonzero(self.terminal)
        cand = np.unique(np.r_[ext, tips])
        return float(self.pairwise(cand, cand).max())

    def field_values(self, F) -> np.ndarray:
        """Evaluate a callable on the coordinates, or validate an array."""
        if callable(F):
            return np.asarray(F(self.points), dtype=float).reshape(self.n)
        arr = np.asarray(F, dtype=float)
        if arr.ndim == 0:
            return np.full(self.n, float(arr))
        if arr.shape != (self.n,):
            raise GameError("field array length does not match the cloud")
        return arr

    def game(self, F, f=None) -> GameGraph:
        """Epsilon-tug-of-war board with running payoff ``eps^2 f``.

        Staying put is a legal move (``d(x, x) = 0 < eps``), so the board
        carries a self-loop at every state.
        """
        ptr, idx = self.ball_csr(self.eps, include_self=True)
        Fv = self.field_values(F)
        fv = np.zeros(self.n) if f is None else self.field_values(f)
        return from_csr(ptr, idx, self.terminal, Fv, self.eps ** 2 * fv, check_connected=True)


def _grid(dim: int, h: float, lo: float, hi: float) -> np.ndarray:
    k0, k1 = int(math.floor(lo / h + 1e-9)), int(math.ceil(hi / h - 1e-9))
    ax = np.arange(k0, k1 + 1) * h
    mesh = np.meshgrid(*([ax] * dim), indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def _circle(radius: float, h: float) -> np.ndarray:
    m = int(math.ceil(2 * math.pi * radius / h))
    th = 2 * math.pi * np.arange(m) / m
    return radius * np.column_stack([np.cos(th), np.sin(th)])


def _linspace_step(a: float, b: float, h: float) -> np.ndarray:
    m = max(1, int(math.ceil((b - a) / h - 1e-9)))
    return np.linspace(a, b, m + 1)


def build_complex(spec: SpaceSpec, eps: float) -> EpsilonComplex:
    """Sample ``spec`` and build its ``eps``-adjacency (default spacing ``eps/4``)."""
    if eps <= 0:
        raise GameError("eps must be positive")
    sp = float(spec.spacing) if spec.spacing is not None else eps / 4.0
    if sp > eps / 2.0:
        raise GameError(f"spacing too coarse: {sp} > eps/2 = {eps / 2}")
    metric, tooth = "euclidean", None
    k = spec.kind
    if k == "segment":
        x = _linspace_step(0.0, spec.length, sp)
        pts = x[:, None]
        term = np.zeros(len(x), bool)
        term[[0, -1]] = True
        h = float(np.diff(x).max()) / 2
    elif k == "euclidean_ball":
        R = spec.radius
        if spec.dim == 1:
            x = _linspace_step(-R, R, sp)
            pts = x[:, None]
            term = np.zeros(len(x), bool)
            term[[0, -1]] = True
            h = float(np.diff(x).max()) / 2
        elif spec.dim == 2:
            P = _grid(2, sp, -R, R)
            P = P[np.hypot(P[:, 0], P[:, 1]) < R * (1 - 1e-9)]
            B = _circle(R, sp)
            pts = np.vstack([P, B])
            term = np.r_[np.zeros(len(P), bool), np.ones(len(B), bool)]
            h = sp * math.sqrt(2) / 2
        else:
            raise GameError("euclidean_ball supports dim 1 or 2")
    elif k == "euclidean_box":
        P = _grid(spec.dim, sp, 0.0, spec.side)
        P = P[np.all(P <= spec.side * (1 + 1e-12), axis=1)]
        term = np.any((P <= 1e-12) | (P >= spec.side * (1 - 1e-12)), axis=1)
        pts = P
        h = sp * math.sqrt(spec.dim) / 2
    elif k == "annulus":
        r0, r1 = spec.inner_radius, spec.radius
        if not 0 < r0 < r1:
            raise GameError("annulus needs 0 < inner_radius < radius")
        P = _grid(2, sp, -r1, r1)
        rr = np.hypot(P[:, 0], P[:, 1])
        P = P[(rr > r0 * (1 + 1e-9)) & (rr < r1 * (1 - 1e-9))]
        B0, B1 = _circle(r0, sp), _circle(r1, sp)
        pts = np.vstack([P, B0, B1])
        term = np.r_[np.zeros(len(P), bool), np.ones(len(B0) + len(B1), bool)]
        h = sp * math.sqrt(2) / 2
    elif k == "l_shape":
        t = _linspace_step(0.0, 1.0, sp)
        vert = np.column_stack([np.zeros_like(t), t])
        horiz = np.column_stack([t[1:], np.zeros(len(t) - 1)])
        pts = np.vstack([vert, horiz])
        term = np.zeros(len(pts), bool)
        term[len(t) - 1] = True
        term[-1] = True
        h = float(np.diff(t).max()) / 2
    elif k == "comb":
        if spec.ells is None:
            raise GameError("comb needs tooth lengths")
        ells = [float(v) for v in spec.ells]
        W = len(ells) if spec.width is None else int(spec.width)
        if W > len(ells):
            raise GameError("comb width exceeds the number of tooth lengths")
        s = _linspace_step(0.0, float(W), sp)
        rows = [np.column_stack([s, np.zeros_like(s)])]
        tid = [np.full(len(s), -1)]
        tips = []
        offset = len(s)
        for x in range(W):
            y = _linspace_step(0.0, ells[x], sp)[1:]
            rows.append(np.column_stack([np.full(len(y), float(x)), y]))
            tid.append(np.full(len(y), x))
            offset += len(y)
            tips.append(offset - 1)
        pts = np.vstack(rows)
        tooth = np.concatenate(tid)
        if not np.all(np.isin(np.arange(W, dtype=float), s)):
            raise GameError("comb spacing must divide 1 so teeth sit on base samples")
        term = np.zeros(len(pts), bool)
        term[tips] = True
        term[len(s) - 1] = True
        metric = "comb"
        h = sp / 2
    else:  # custom
        if spec.points is None or spec.terminal is None:
            raise GameError("custom space needs points and terminal mask")
        pts = np.asarray(spec.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        term = np.asarray(spec.terminal, dtype=bool)
        if len(term) != len(pts):
            raise GameError("terminal mask length does not match points")
        h = sp / 2
    if h > eps / 2:
        raise GameError(f"sampling resolution {h} exceeds eps/2")
    if not term.any():
        raise GameError("empty terminal band")
    c = EpsilonComplex(np.ascontiguousarray(pts, dtype=float), float(eps), term,
                       np.zeros(1, np.int64), np.zeros(0, np.int64), sp, h, k, metric, tooth)
    i, j = c.pairs_within(eps)
    order = np.lexsort((j, i))
    i, j = i[order], j[order]
    c.indptr = np.searchsorted(i, np.arange(c.n + 1)).astype(np.int64)
    c.indices = j.astype(np.int64)
    return c


# --------------------------------------------------------------------------
# values


def solve_u_eps(c: EpsilonComplex, F, f=None, tol: float = 1e-10, method: str = "auto",
                max_iter: int = 1_000_000) -> SolveReport:
    """Value of epsilon-tug-of-war on the complex (running payoff ``eps^2 f``)."""
    g = c.game(F, f)
    if method == "auto":
        method = "exact_f0" if (not g.f.any() and g.n <= 400) else "iterate_below"
    return solve(g, method, tol=tol, max_iter=max_iter)


@dataclass
class FavoredReport:
    field: ValueField
    side: str
    sweeps: int
    residual_sup: float
    converged: bool
    monotone: bool

    @property
    def values(self) -> np.ndarray:
        return self.field.values


def _favored_setup(c: EpsilonComplex, F, f, side: str):
    if side not in ("I", "II"):
        raise ValueError("side must be 'I' or 'II'")
    Fv = c.field_values(F)
    fv = np.zeros(c.n) if f is None else c.field_values(f)
    fv = np.where(c.terminal, 0.0, fv)
    if not (np.all(np.isfinite(Fv[c.terminal])) and np.all(np.isfinite(fv))):
        raise GameError("infinite payoff encountered")
    sptr, sidx = c.ball_csr(c.eps)
    bptr, bidx = c.two_step_csr()
    vals = fv[bidx]
    if side == "II":
        ext = np.minimum.reduceat(vals, bptr[:-1])
    else:
        ext = np.maximum.reduceat(vals, bptr[:-1])
    run_ext = c.eps ** 2 * ext
    sign = 1 if side == "II" else -1
    return Fv, fv, sptr, sidx, bptr, bidx, run_ext, sign


def favored_residual(c: EpsilonComplex, v, F, f=None, side: str = "II") -> float:
    """``sup |T v - v|`` for the favoured-game operator off the terminal set."""
    Fv, fv, sptr, sidx, bptr, bidx, run_ext, sign = _favored_setup(c, F, f, side)
    v = np.asarray(v, dtype=float)
    Tv = _kernels.favored_apply(v, sptr, sidx, bptr, bidx, c.terminal, run_ext, sign)
    return float(np.abs(Tv - v)[~c.terminal].max(initial=0.0))


def favored_value(c: EpsilonComplex, F, f=None, side: str = "II", tol: float = 1e-10,
                  max_iter: int = 1_000_000) -> FavoredReport:
    """Value of the II-favoured (``side='II'``) or I-favoured game.

    In the II-favoured game player I names a target ``z`` within ``eps``; on
    winning the coin the token moves to ``z`` unless player II prefers to end
    the game at a terminal point within ``2 eps`` of ``z``; on losing,
    player II moves anywhere within ``2 eps`` of ``z``.  Each turn pays
    ``eps^2`` times the least running payoff within ``2 eps`` of ``z``.  The
    I-favoured game swaps all roles.  The II value is iterated from below
    and the I value from above.
    """
    Fv, fv, sptr, sidx, bptr, bidx, run_ext, sign = _favored_setup(c, F, f, side)
    FY = Fv[c.terminal]
    span = c.n ** 2 * c.eps ** 2 * float(np.abs(fv).max(initial=0.0))
    start = FY.min() - span - 1.0 if sign > 0 else FY.max() + span + 1.0
    v = np.where(c.terminal, Fv, start)
    order = np.flatnonzero(~c.terminal).astype(np.int64)
    total, inner, monotone = 0, tol, True
    change = res = np.inf
    while total < max_iter:
        sweeps, change, ok = _kernels.favored_sweeps(v, sptr, sidx, bptr, bidx, c.terminal, order,
                                                     run_ext, sign, inner, max_iter - total)
        total += int(sweeps)
        monotone &= bool(ok)
        Tv = _kernels.favored_apply(v, sptr, sidx, bptr, bidx, c.terminal, run_ext, sign)
        res = float(np.abs(Tv - v)[~c.terminal].max(initial=0.0))
        if change <= tol and res <= 10 * tol:
            break
        if change <= inner:
            inner = max(inner / 10.0, 1e-300)
    converged = change <= tol and res <= 10 * tol
    if not converged:
        warnings.warn(f"favoured iteration stopped after {total} sweeps (residual {res:.3g})",
                      NonConvergenceWarning)
    return FavoredReport(ValueField(v, res, total), side, total, res, converged, monotone)


# --------------------------------------------------------------------------
# Lipschitz tools


def _chunked_lip(c: EpsilonComplex, I, J, uI, uJ, metric: str, same: bool) -> float:
    best = 0.0
    for s in range(0, len(I), 256):
        a = I[s:s + 256]
        D = c.pairwise(a, J)
        if metric == "d_eps":
            D = c.eps + c.eps * (eps_hops(D, c.eps) - 1)
        diff = np.abs(uI[s:s + 256, None] - uJ[None, :])
        if same:
            D = np.where(a[:, None] == J[None, :], np.inf, D)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(D > 0, diff / D, np.where(diff > 0, np.inf, 0.0))
        best = max(best, float(q.max(initial=0.0)))
    return best


def lip_on(c: EpsilonComplex, subset, u, metric: str = "d") -> float:
    """``max |u(x) - u(y)| / dist(x, y)`` over distinct pairs in ``subset``.

    ``metric`` is ``'d'`` (the cloud metric) or ``'d_eps'``.
    """
    idx = np.asarray(subset)
    if idx.dtype == bool:
        idx = np.flatnonzero(idx)
    vals = np.asarray(u.values if isinstance(u, ValueField) else u, dtype=float)
    if len(idx) < 2:
        return 0.0
    return _chunked_lip(c, idx, idx, vals[idx], vals[idx], metric, same=True)


def mcshane_whitney(c: EpsilonComplex, F) -> tuple[ValueField, ValueField]:
    """Smallest and largest ``Lip_Y F``-Lipschitz extensions of ``F`` off Y.

    ``lower = sup_y F(y) - L d(x, y)`` and ``upper = inf_y F(y) + L d(x, y)``.
    The ``residual_sup`` carried by each field is its epsilon-game residual.
    """
    Fv = c.field_values(F)
    Y = c.terminal_idx
    FY = Fv[Y]
    L = lip_on(c, Y, Fv)
    lo = np.empty(c.n)
    hi = np.empty(c.n)
    for s in range(0, c.n, 512):
        I = np.arange(s, min(s + 512, c.n))
        D = c.pairwise(I, Y)
        lo[I] = (FY[None, :] - L * D).max(1)
        hi[I] = (FY[None, :] + L * D).min(1)
    lo[Y] = FY
    hi[Y] = FY
    g = c.game(Fv)
    out = []
    for arr in (lo, hi):
        out.append(ValueField(arr, float(residual_vector(g, arr).max(initial=0.0)), 0))
    return out[0], out[1]


def uniform_lipschitz_constant(c: EpsilonComplex, F, f=None) -> float:
    """``4 (3 Lip^eps_Y F + 4 diam sup|f|)``, the uniform d^eps-Lipschitz bound."""
    Fv = c.field_values(F)
    fv = np.zeros(c.n) if f is None else c.field_values(f)
    fsup = float(np.abs(fv[~c.terminal]).max(initial=0.0))
    LY = lip_on(c, c.terminal_idx, Fv, metric="d_eps")
    return 4.0 * (3.0 * LY + 4.0 * c.diameter() * fsup)


@dataclass
class RegionAudit:
    center: int
    radius: float
    size: int
    boundary_size: int
    lip_closure: float
    lip_boundary: float
    ratio: float
    threshold: float
    ok: bool


@dataclass
class AMAuditReport:
    regions: list
    worst_ratio: float
    passed: bool
    constant: float
    metric: str

    def to_json(self) -> dict:
        return {"worst_ratio": self.worst_ratio, "passed": self.passed,
                "constant": self.constant, "metric": self.metric,
                "regions": [asdict(r) for r in self.regions]}


def region_boundary(c: EpsilonComplex, mask: np.ndarray) -> np.ndarray:
    """Points outside ``mask`` adjacent to it (the discrete boundary)."""
    src = np.repeat(np.arange(c.n), np.diff(c.indptr))
    hit = mask[src]
    bd = np.zeros(c.n, bool)
    bd[c.indices[hit]] = True
    return bd & ~mask


def ball_region(c: EpsilonComplex, center: int, radius: float) -> np.ndarray:
    d = c.pairwise([center], np.arange(c.n))[0]
    return d < radius


def ball_regions(c: EpsilonComplex, count: int, rng: np.random.Generator,
                 radius_range=(0.15, 0.4), max_tries: int = 10_000):
    """Random ball regions ``(center, radius)`` that avoid the terminal band."""
    out = []
    cand = np.flatnonzero(~c.terminal)
    tries = 0
    while len(out) < count and tries < max_tries:
        tries += 1
        z = int(rng.choice(cand))
        r = float(rng.uniform(*radius_range))
        if not ball_region(c, z, r)[c.terminal].any():
            out.append((z, r))
    return out


def am_audit(c: EpsilonComplex, u, regions, constant: float = 4.0,
             metric: str = "d_eps") -> AMAuditReport:
    """Compare ``Lip`` over each closed region with ``Lip`` over its boundary.

    ``regions`` is a sequence of ``(center, radius)`` balls or boolean masks.
    A region passes when ``ratio <= 1 + constant * eps / diam(region)``.
    """
    vals = np.asarray(u.values if isinstance(u, ValueField) else u, dtype=float)
    reports = []
    for reg in regions:
        if isinstance(reg, tuple):
            z, r = reg
            mask = ball_region(c, z, r)
            diam = 2.0 * r
        else:
            mask = np.asarray(reg, bool)
            z, r = int(np.flatnonzero(mask)[0]), float("nan")
            idx = np.flatnonzero(mask)
            diam = float(c.pairwise(idx, idx).max()) if len(idx) < 4000 else c.diameter()
        if mask[c.terminal].any():
            raise GameError("audit region touches the terminal band")
        bd = region_boundary(c, mask)
        closure = np.flatnonzero(mask | bd)
        lc = lip_on(c, closure, vals, metric)
        lb = lip_on(c, np.flatnonzero(bd), vals, metric)
        ratio = lc / lb if lb > 0 else (1.0 if lc == 0 else np.inf)
        thr = 1.0 + constant * c.eps / max(diam, c.eps)
        reports.append(RegionAudit(int(z), float(r), int(mask.sum()), int(bd.sum()),
                                   lc, lb, float(ratio), thr, bool(ratio <= thr)))
    worst = max((r.ratio for r in reports), default=1.0)
    return AMAuditReport(reports, float(worst), all(r.ok for r in reports), constant, metric)


# --------------------------------------------------------------------------
# epsilon ladders


@dataclass
class ConvergenceTable:
    eps: list
    sup_diff: list
    runtime: list
    residual: list
    n_points: list
    order: float
    reference: str

    def to_csv(self) -> str:
        lines = ["eps,sup_diff,runtime"]
        for e, d, t in zip(self.eps, self.sup_diff, self.runtime):
            lines.append(f"{e!r},{d!r},{t:.6f}")
        return "\n".join(lines) + "\n"


def convergence_study(spec: SpaceSpec, F, f=None, eps_ladder: Sequence[float] = (0.2, 0.1, 0.05),
                      exact: Callable | None = None, tol: float = 1e-10) -> ConvergenceTable:
    """Solve ``u_eps`` along a halving ladder.

    With ``exact`` given, ``sup_diff`` is ``sup |u_eps - exact|`` over the
    cloud.  Otherwise it is the sup difference to the previous rung at the
    interior points of the coarsest cloud (grids nest under halving), and
    the first entry is ``nan``.  ``order`` is the least-squares slope of
    ``log sup_diff`` against ``log eps``.
    """
    eps_ladder = [float(e) for e in eps_ladder]
    for a, b in zip(eps_ladder, eps_ladder[1:]):
        if not math.isclose(b, a / 2, rel_tol=1e-12):
            raise GameError("eps ladder must halve at each rung")
    rows_d, rows_t, rows_r, rows_n = [], [], [], []
    prev = None
    eval_pts = None
    for e in eps_ladder:
        t0 = time.perf_counter()
        c = build_complex(spec, e)
        rep = solve_u_eps(c, F, f, tol=tol, method="iterate_below" if c.n > 400 else "auto")
        rows_t.append(time.perf_counter() - t0)
        rows_r.append(rep.residual_sup)
        rows_n.append(c.n)
        if exact is not None:
            ref = np.asarray(exact(c.points), dtype=float).reshape(c.n)
            rows_d.append(float(np.abs(rep.values - ref).max()))
            continue
        if eval_pts is None:
            eval_pts = c.points[~c.terminal]
        dist, k = cKDTree(c.points).query(eval_pts)
        if dist.max() > 1e-9:
            raise GameError("ladder clouds do not nest; evaluation points missing")
        cur = rep.values[k]
        rows_d.append(float("nan") if prev is None else float(np.abs(cur - prev).max()))
        prev = cur
    e_arr = np.array(eps_ladder)
    d_arr = np.array(rows_d)
    ok = np.isfinite(d_arr) & (d_arr > 0)
    order = float(np.polyfit(np.log(e_arr[ok]), np.log(d_arr[ok]), 1)[0]) if ok.sum() >= 2 else float("nan")
    return ConvergenceTable(eps_ladder, rows_d, rows_t, rows_r, rows_n, order,
                            "exact" if exact is not None else "previous_rung")
