"""Concrete boards: small graphs, the Z^2 strip, the pull-up square and the comb.

The pull-up square and the comb are infinite; they are represented lazily
(states are tuples, neighbours generated on demand) so that the simulator can
play on them directly.  A finite comb can also be materialised as a
:class:`~tugwar.game.GameGraph` for cross-checks.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numba import njit

from .game import GameGraph, build_game, from_csr


def path_graph(n: int, F0: float = 0.0, Fn: float = 1.0, f=None) -> GameGraph:
    """Path ``0 - 1 - ... - n`` with terminals at both ends."""
    fmap = {} if f is None else {k: (f[k - 1] if np.ndim(f) else f) for k in range(1, n)}
    return build_game(range(n + 1), [(k, k + 1) for k in range(n)], [0, n],
                      {0: F0, n: Fn}, fmap)


def triangle() -> GameGraph:
    """Triangle with self-loops, v0 terminal, f(v1) = -1, f(v2) = 1."""
    states = ["v0", "v1", "v2"]
    edges = [("v0", "v1"), ("v1", "v2"), ("v0", "v2"), ("v0", "v0"), ("v1", "v1"), ("v2", "v2")]
    return build_game(states, edges, ["v0"], {"v0": 0.0}, {"v1": -1.0, "v2": 1.0})


def z2_strip(width: int = 41, height: int = 21, data: Callable = None) -> GameGraph:
    """Truncated lattice ``[-w..w] x [-h..h]``; the x-axis and the rectangle's
    rim are terminal.  Default boundary data ``x - |y|``.
    """
    data = data or (lambda x, y: x - abs(y))
    hw, hh = (width - 1) // 2, (height - 1) // 2
    states = [(x, y) for y in range(-hh, hh + 1) for x in range(-hw, hw + 1)]
    edges = []
    for x, y in states:
        if x < hw:
            edges.append(((x, y), (x + 1, y)))
        if y < hh:
            edges.append(((x, y), (x, y + 1)))
    term = [(x, y) for x, y in states if y == 0 or abs(x) == hw or abs(y) == hh]
    return build_game(states, edges, term, {s: data(*s) for s in term})


def random_connected_graph(rng: np.random.Generator, n_max: int = 50, f0: bool = True) -> GameGraph:
    """Random spanning tree plus extra edges, 1-3 random terminals, F ~ U[0, 1]."""
    n = int(rng.integers(3, n_max + 1))
    perm = rng.permutation(n)
    edges = {(int(perm[i]), int(perm[rng.integers(0, i)])) for i in range(1, n)}
    extra = int(rng.integers(0, 2 * n))
    for _ in range(extra):
        a, b = (int(v) for v in rng.integers(0, n, size=2))
        if a != b:
            edges.add((a, b))
    nterm = int(rng.integers(1, min(4, n - 1) + 1))
    term = [int(t) for t in rng.choice(n, size=nterm, replace=False)]
    F = {t: float(rng.random()) for t in term}
    f = {} if f0 else {x: float(rng.random()) for x in range(n) if x not in term}
    return build_game(range(n), sorted(edges), term, F, f)


# --------------------------------------------------------------------------
# lazy boards


class PullUpSquare:
    """States ``(k, j)`` standing for ``v(k, j) = (k 2^-j, 1 - 2^(1-j))``.

    Edges join ``(k, j)-(k+1, j)`` and ``(k, j)-(2k, j+1)``.  Left edge
    (``k = 0``) pays 1, right edge (``k = 2^j``) pays 0.
    """

    def is_terminal(self, s) -> bool:
        k, j = s
        return k == 0 or k == (1 << j)

    def terminal_payoff(self, s) -> float:
        return 1.0 if s[0] == 0 else 0.0

    def running_payoff(self, s) -> float:
        return 0.0

    def neighbors(self, s) -> list:
        k, j = s
        out = []
        if k > 0:
            out.append((k - 1, j))
        if k < (1 << j):
            out.append((k + 1, j))
        out.append((2 * k, j + 1))
        if j > 1 and k % 2 == 0:
            out.append((k // 2, j - 1))
        return out

    def is_neighbor(self, a, b) -> bool:
        (k, j), (k2, j2) = a, b
        if j2 == j:
            return abs(k2 - k) == 1 and 0 <= k2 <= (1 << j)
        if j2 == j + 1:
            return k2 == 2 * k
        if j2 == j - 1:
            return j > 1 and k == 2 * k2
        return False

    def move(self, s, direction: str):
        k, j = s
        if direction == "left":
            return (k - 1, j)
        if direction == "right":
            return (k + 1, j)
        if direction == "up":
            return (2 * k, j + 1)
        if direction == "down":
            return (k // 2, j - 1)
        raise ValueError(direction)

    @staticmethod
    def value(s) -> float:
        """The infinity-harmonic value ``1 - k / 2^j``."""
        k, j = s
        return 1.0 - k / 2.0 ** j

    @staticmethod
    def termination_bound(k: int) -> float:
        """Upper bound ``2 / (k + 2)`` on termination under pull-left/pull-up."""
        return 2.0 / (k + 2)


def comb_lengths(width: int, c: int = 3, power: int = 3) -> np.ndarray:
    return np.array([(c + x) ** power for x in range(width)], dtype=np.int64)


@dataclass
class Comb:
    """Comb board: base ``(x, 0)``, tooth ``x`` is ``(x, 1..ell_x)``.

    Running payoff ``1/ell_x`` on the base, zero on teeth, tips terminal with
    payoff 0.  With ``width`` set, base vertex ``(width, 0)`` is terminal
    (payoff 0) and there are no teeth at ``x >= width``.
    """

    ell: Callable[[int], int] = lambda x: (3 + x) ** 3
    width: int | None = None

    def is_terminal(self, s) -> bool:
        x, y = s
        if self.width is not None and x == self.width and y == 0:
            return True
        return y > 0 and y == self.ell(x)

    def terminal_payoff(self, s) -> float:
        return 0.0

    def running_payoff(self, s) -> float:
        x, y = s
        return 1.0 / self.ell(x) if y == 0 else 0.0

    def neighbors(self, s) -> list:
        x, y = s
        if y > 0:
            return [(x, y - 1), (x, y + 1)] if y < self.ell(x) else [(x, y - 1)]
        out = [(x, 1)]
        if x > 0:
            out.append((x - 1, 0))
        if self.width is None or x < self.width:
            out.append((x + 1, 0))
        return out

    def is_neighbor(self, a, b) -> bool:
        return b in self.neighbors(a)

    def move(self, s, direction: str):
        x, y = s
        if direction == "up":
            return (x, y + 1)
        if direction == "down":
            return (x, y - 1)
        if direction == "left":
            return (x - 1, y)
        if direction == "right":
            return (x + 1, y)
        raise ValueError(direction)

    def toward_closest_terminal(self, s):
        """Neighbour on a shortest route to the nearest terminal state."""
        x, y = s
        best, arg = None, None
        xs = range(0, x + 2) if self.width is None else range(0, min(x + 2, self.width + 1))
        for x2 in xs:
            if self.width is not None and x2 == self.width:
                d = (y + abs(self.width - x))
            elif x2 == x:
                d = self.ell(x) - y
            else:
                d = y + abs(x2 - x) + self.ell(x2)
            if best is None or d < best:
                best, arg = d, x2
        if arg == x and not (self.width is not None and arg == self.width):
            return (x, y + 1)
        if y > 0:
            return (x, y - 1)
        return (x - 1, 0) if arg < x else (x + 1, 0)

    def martingale_M(self, s, psi: float) -> float:
        """``2 (1 - y / ell_x) + psi`` from the pull-down strategy analysis."""
        x, y = s
        if self.width is not None and x == self.width and y == 0:
            return psi
        return 2.0 * (1.0 - y / self.ell(x)) + psi


def comb_graph(ells, base_payoff=None) -> GameGraph:
    """Materialise a truncated comb (teeth ``len(ells)``, terminal base end)."""
    W = len(ells)
    states = [(x, 0) for x in range(W + 1)]
    edges = [((x, 0), (x + 1, 0)) for x in range(W)]
    term = [(W, 0)]
    f = {}
    for x, L in enumerate(ells):
        L = int(L)
        states += [(x, y) for y in range(1, L + 1)]
        edges += [((x, y), (x, y + 1)) for y in range(L)]
        term.append((x, L))
        f[(x, 0)] = 1.0 / L if base_payoff is None else base_payoff[x]
    return build_game(states, edges, term, {t: 0.0 for t in term}, f)


@njit(cache=True)
def _comb_sweeps(u, ell, tol, max_sweeps):
    W = ell.shape[0]
    change = np.inf
    sweeps = 0
    while sweeps < max_sweeps:
        change = 0.0
        for x in range(W):
            alpha = 1.0 - 1.0 / ell[x]
            c = 1.0 / ell[x]
            b = u[x + 1]
            has_a = x > 0
            a = u[x - 1] if has_a else 0.0
            # the Bellman update at (x, 0) is increasing in u[x] with slope <= alpha/2 < 1
            # through the tooth neighbour alpha * u[x]; solve it exactly by bracketing
            lo = min(b, a if has_a else b) - 2.0 / (1.0 - alpha) * (abs(c) + 1.0) - abs(u[x]) - 1.0
            hi = max(b, a if has_a else b) + 2.0 / (1.0 - alpha) * (abs(c) + 1.0) + abs(u[x]) + 1.0
            for _ in range(200):
                t = 0.5 * (lo + hi)
                mx = alpha * t
                mn = alpha * t
                if b > mx:
                    mx = b
                if b < mn:
                    mn = b
                if has_a:
                    if a > mx:
                        mx = a
                    if a < mn:
                        mn = a
                if t - 0.5 * (mx + mn) - c > 0.0:
                    hi = t
                else:
                    lo = t
                if hi - lo <= 1e-15 * (1.0 + abs(t)):
                    break
            t = 0.5 * (lo + hi)
            d = abs(t - u[x])
            if d > change:
                change = d
            u[x] = t
        sweeps += 1
        if change <= tol:
            break
    return sweeps, change


def comb_base_values(ells, tol: float = 1e-12, max_sweeps: int = 10_000_000,
                     init: float = -1.0):
    """Player I's value on the base of a truncated comb.

    Along a tooth the running payoff vanishes, so any fixed point is affine
    there: ``u(x, y) = u(x, 0) (1 - y / ell_x)``.  Folding each tooth into its
    base vertex leaves a path problem, swept Gauss-Seidel from below with an
    exact local solve.  Returns ``(u_base, sweeps, last_change)`` with
    ``u_base[W] = 0`` the truncation terminal.
    """
    ell = np.asarray(ells, dtype=float)
    u = np.full(len(ell) + 1, float(init))
    u[-1] = 0.0
    sweeps, change = _comb_sweeps(u, ell, tol, max_sweeps)
    return u, int(sweeps), float(change)


def comb_tail_bound(ells, k: int) -> float:
    """``2 + 2 ell_k sum_{j>k} 1/ell_j`` over the supplied (finite) tooth list."""
    ell = np.asarray(ells, dtype=float)
    return float(2.0 + 2.0 * ell[k] * np.sum(1.0 / ell[k + 1:]))


def pullup_square_graph(depth: int) -> GameGraph:
    """Finite truncation ``j <= depth`` of the pull-up square (for solver checks)."""
    states, edges = [], []
    for j in range(1, depth + 1):
        for k in range((1 << j) + 1):
            states.append((k, j))
            if k < (1 << j):
                edges.append(((k, j), (k + 1, j)))
            if j < depth:
                edges.append(((k, j), (2 * k, j + 1)))
    term = [s for s in states if s[0] == 0 or s[0] == (1 << s[1]) or s[1] == depth]
    F = {s: PullUpSquare.value(s) for s in term}
    return build_game(states, edges, term, F)
