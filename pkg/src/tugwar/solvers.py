"""Solvers for player values and for the discrete equation ``Lap_inf u = -2 f``."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from . import _kernels
from .game import GameError, GameGraph, ValueField, residual_vector

log = logging.getLogger(__name__)

METHODS = ("exact_f0", "iterate_below", "iterate_above")


class NonConvergenceWarning(RuntimeWarning):
    pass


@dataclass
class SolveReport:
    field: ValueField
    method: str
    iterations: int
    residual_sup: float
    converged: bool
    lower_init: float | None = None
    upper_init: float | None = None
    last_change: float = 0.0
    monotone: bool = True
    warnings: list = field(default_factory=list)

    @property
    def values(self) -> np.ndarray:
        return self.field.values

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "iterations": self.iterations,
            "residual_sup": self.residual_sup,
            "converged": self.converged,
            "lower_init": self.lower_init,
            "upper_init": self.upper_init,
            "last_change": self.last_change,
            "monotone": self.monotone,
            "warnings": list(self.warnings),
        }


def residual(g: GameGraph, u) -> float:
    """``sup_{x not in Y} |Lap_inf u(x) + 2 f(x)|``; ``u`` must equal F on Y."""
    vals = np.asarray(u.values if isinstance(u, ValueField) else u, dtype=float)
    if not np.all(np.isfinite(vals)):
        raise GameError("residual needs a finite field")
    if not np.array_equal(vals[g.terminal], g.F[g.terminal]):
        raise GameError("field does not agree with F on the terminal set")
    return float(residual_vector(g, vals).max(initial=0.0))


# --------------------------------------------------------------------------
# exact algorithm for f == 0


def solve_f0_exact(g: GameGraph) -> SolveReport:
    """Exact value for ``f == 0`` by repeated steepest-path interpolation.

    Among paths whose endpoints are already solved and whose interior is not,
    pick the one maximising ``(u(end) - u(start)) / length`` and interpolate
    linearly along it.  Ties: smallest (start, end) pair, then the shortest
    path, then the lexicographically smallest interior.
    """
    if np.any(g.f[~g.terminal] != 0.0):
        raise GameError("solve_f0_exact requires f == 0")
    n = g.n
    u = np.where(g.terminal, g.F, np.nan)
    solved = g.terminal.copy()
    src_all = np.repeat(np.arange(n), np.diff(g.indptr))
    dst_all = g.indices
    steps = 0
    while not solved.all():
        S = np.flatnonzero(solved)
        pos = {int(s): k for k, s in enumerate(S)}
        # directed auxiliary graph: unsolved states keep their out-edges, solved
        # states are sinks, and each solved state gets a source copy n + k
        keep = ~solved[src_all] & (src_all != dst_all)
        rows = [src_all[keep]]
        cols = [dst_all[keep]]
        out_src = solved[src_all] & ~solved[dst_all]
        rows.append(n + np.array([pos[int(s)] for s in src_all[out_src]], dtype=np.int64))
        cols.append(dst_all[out_src])
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        m = n + len(S)
        A = csr_matrix((np.ones(len(r)), (r, c)), shape=(m, m))
        D = shortest_path(A, directed=True, unweighted=True, indices=n + np.arange(len(S)))
        L = D[:, S]
        uS = u[S]
        with np.errstate(invalid="ignore", divide="ignore"):
            slope = (uS[None, :] - uS[:, None]) / L
        slope[~np.isfinite(L)] = -np.inf
        best = slope.max()
        if not np.isfinite(best):
            raise GameError("unreachable states remain")
        ia, ib = np.unravel_index(int(np.argmax(slope == best)), slope.shape)
        a, b = int(S[ia]), int(S[ib])
        path = _lex_shortest_path(g, solved, a, b, int(L[ia, ib]))
        k = len(path) - 1
        for i, v in enumerate(path[1:-1], start=1):
            u[v] = u[a] + i * (u[b] - u[a]) / k
            solved[v] = True
        steps += 1
    res = float(residual_vector(g, u).max(initial=0.0))
    fld = ValueField(u, res, steps)
    return SolveReport(fld, "exact_f0", steps, res, res <= 1e-12)


def _lex_shortest_path(g: GameGraph, solved, a: int, b: int, k: int) -> list[int]:
    # BFS from b through unsolved states; then walk from a greedily
    dist = {b: 0}
    frontier = [b]
    while frontier:
        nxt = []
        for x in frontier:
            if x != b and solved[x]:
                continue
            for y in g.neighbors(x):
                y = int(y)
                if y not in dist and not solved[y]:
                    dist[y] = dist[x] + 1
                    nxt.append(y)
        frontier = nxt
    path = [a]
    cur = a
    for step in range(k - 1):
        need = k - 1 - step
        cands = sorted(int(y) for y in g.neighbors(cur)
                       if not solved[y] and dist.get(int(y)) == need and int(y) not in path)
        cur = cands[0]
        path.append(cur)
    path.append(b)
    return path


# --------------------------------------------------------------------------
# value iteration


def lower_init(g: GameGraph) -> float:
    """Certified lower bound on u_I off Y (pull-to-terminal duration bound)."""
    return float(np.min(g.F[g.terminal]) - g.n ** 2 * max(0.0, -float(g.f.min())) - 1.0)


def upper_init(g: GameGraph) -> float:
    return float(np.max(g.F[g.terminal]) + g.n ** 2 * max(0.0, float(g.f.max())) + 1.0)


def value_iteration(g: GameGraph, direction: str = "below", tol: float = 1e-10,
                    max_iter: int = 1_000_000, mode: str = "gauss_seidel",
                    init: np.ndarray | None = None) -> SolveReport:
    """Monotone value iteration of the Bellman operator.

    ``direction='below'`` starts under u_I and increases to the smallest fixed
    point above the start (u_I); ``'above'`` mirrors it for u_II.  Converged
    means the sup change of a sweep is <= ``tol`` and the residual is
    <= ``10 * tol``.
    """
    if direction not in ("below", "above"):
        raise ValueError("direction must be 'below' or 'above'")
    if mode not in ("gauss_seidel", "jacobi"):
        raise ValueError("mode must be 'gauss_seidel' or 'jacobi'")
    if not (np.all(np.isfinite(g.F[g.terminal])) and np.all(np.isfinite(g.f))):
        raise GameError("infinite payoff encountered")
    lo, hi = lower_init(g), upper_init(g)
    if init is None:
        start = lo if direction == "below" else hi
        u = np.where(g.terminal, g.F, start)
    else:
        u = np.where(g.terminal, g.F, np.asarray(init, float))
    sign = 1 if direction == "below" else -1
    order = g.nonterminal.astype(np.int64)
    kernel = _kernels.gauss_seidel if mode == "gauss_seidel" else _kernels.jacobi
    notes = []
    fneg, fpos = bool((g.f < 0).any()), bool((g.f > 0).any())
    if fneg and fpos:
        notes.append("sign-changing running payoff: limit is a one-sided fixed point, "
                     "not certified to equal the player's value")

    total = 0
    inner = tol
    monotone = True
    change = np.inf
    res = np.inf
    while total < max_iter:
        sweeps, change, ok = kernel(u, g.indptr, g.indices, order, g.f, inner,
                                    max_iter - total, sign)
        total += int(sweeps)
        monotone &= bool(ok)
        res = float(residual_vector(g, u).max(initial=0.0))
        if change <= tol and res <= 10 * tol:
            break
        if change <= inner:
            inner = max(inner / 10.0, 1e-300)
    converged = change <= tol and res <= 10 * tol
    if not converged:
        warnings.warn(f"value iteration stopped after {total} sweeps "
                      f"(change {change:.3g}, residual {res:.3g})", NonConvergenceWarning)
    fld = ValueField(u, res, total)
    return SolveReport(fld, f"iterate_{direction}", total, res, converged,
                       lower_init=lo if direction == "below" else None,
                       upper_init=hi if direction == "above" else None,
                       last_change=float(change), monotone=monotone, warnings=notes)


def solve(g: GameGraph, method: str = "auto", tol: float = 1e-10, max_iter: int = 1_000_000,
          mode: str = "gauss_seidel") -> SolveReport:
    """Dispatch: exact path algorithm for small f == 0 boards, else iterate from below."""
    if method == "auto":
        method = "exact_f0" if (not g.f.any() and g.n <= 400) else "iterate_below"
    if method == "exact_f0":
        return solve_f0_exact(g)
    if method in ("iterate_below", "below"):
        return value_iteration(g, "below", tol, max_iter, mode)
    if method in ("iterate_above", "above"):
        return value_iteration(g, "above", tol, max_iter, mode)
    raise ValueError(f"unknown method {method!r}")
