"""Finite tug-of-war boards and the one-step dynamic-programming operator.

States are dense integer indices ``0..n-1``; the caller's labels are kept in a
side table.  Adjacency is stored both as a flat ``(m, 2)`` array of directed
pairs and as CSR slices (``indptr``/``indices``) for neighbour scans.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Hashable, Iterable, Mapping, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components


class GameError(ValueError):
    """Raised for malformed boards or illegal field arguments."""


@dataclass(frozen=True, eq=False)
class GameGraph:
    labels: tuple
    indptr: np.ndarray
    indices: np.ndarray
    terminal: np.ndarray
    F: np.ndarray
    f: np.ndarray
    _index: dict = field(repr=False, compare=False)

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def edges(self) -> np.ndarray:
        """Directed pair list ``(x, y)``; every undirected edge appears twice."""
        src = np.repeat(np.arange(self.n), np.diff(self.indptr))
        return np.column_stack([src, self.indices])

    @property
    def nonterminal(self) -> np.ndarray:
        return np.flatnonzero(~self.terminal)

    def index(self, label: Hashable) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise GameError(f"unknown state {label!r}") from None

    def neighbors(self, x: int) -> np.ndarray:
        return self.indices[self.indptr[x]:self.indptr[x + 1]]

    # duck-typed board interface shared with the lazy boards in ``boards``
    def is_terminal(self, x: int) -> bool:
        return bool(self.terminal[x])

    def is_neighbor(self, x: int, y: int) -> bool:
        return bool(np.any(self.neighbors(x) == y))

    def terminal_payoff(self, x: int) -> float:
        return float(self.F[x])

    def running_payoff(self, x: int) -> float:
        return float(self.f[x])

    def with_payoffs(self, F: np.ndarray | None = None, f: np.ndarray | None = None) -> "GameGraph":
        """Same board, new boundary data (arrays indexed by state)."""
        F2 = self.F.copy() if F is None else np.where(self.terminal, np.asarray(F, float), np.nan)
        f2 = self.f.copy() if f is None else np.where(self.terminal, 0.0, np.asarray(f, float))
        _check_payoffs(self.terminal, F2, f2)
        return GameGraph(self.labels, self.indptr, self.indices, self.terminal, F2, f2, self._index)

    def to_json(self) -> dict:
        lab = list(self.labels)
        pairs = sorted({(min(a, b), max(a, b)) for a, b in self.edges.tolist()})
        return {
            "states": lab,
            "edges": [[lab[a], lab[b]] for a, b in pairs],
            "terminals": [lab[i] for i in np.flatnonzero(self.terminal)],
            "F": {str(lab[i]): float(self.F[i]) for i in np.flatnonzero(self.terminal)},
            "f": {str(lab[i]): float(self.f[i]) for i in self.nonterminal if self.f[i] != 0.0},
        }


def _check_payoffs(terminal, F, f):
    if not np.all(np.isfinite(F[terminal])):
        raise GameError("terminal payoff F must be finite on every terminal state")
    if not np.all(np.isfinite(f[~terminal])):
        raise GameError("running payoff f must be finite off the terminal set")


def from_csr(indptr, indices, terminal, F, f=None, labels: Sequence | None = None,
             check_connected: bool = True) -> GameGraph:
    """Fast constructor for generated boards (clouds, lattices).

    ``indices`` must already list both orientations of every edge.
    """
    indptr = np.ascontiguousarray(indptr, dtype=np.int64)
    indices = np.ascontiguousarray(indices, dtype=np.int64)
    terminal = np.asarray(terminal, dtype=bool)
    n = len(terminal)
    if len(indptr) != n + 1:
        raise GameError("indptr length does not match the number of states")
    if not terminal.any():
        raise GameError("empty terminal set")
    if np.any(np.diff(indptr) == 0):
        raise GameError("every state needs at least one neighbour")
    F = np.where(terminal, np.asarray(F, float), np.nan)
    f = np.zeros(n) if f is None else np.where(terminal, 0.0, np.asarray(f, float))
    _check_payoffs(terminal, F, f)
    if check_connected:
        A = csr_matrix((np.ones(len(indices)), indices, indptr), shape=(n, n))
        ncomp, _ = connected_components(A, directed=False)
        if ncomp != 1:
            raise GameError("disconnected graph")
    labels = tuple(range(n)) if labels is None else tuple(labels)
    return GameGraph(labels, indptr, indices, terminal, F, f, {lab: i for i, lab in enumerate(labels)})


def build_game(states: Sequence[Hashable], edges: Iterable[Sequence[Hashable]],
               terminals: Iterable[Hashable], F: Mapping, f: Mapping | None = None,
               edges_directed: bool = False) -> GameGraph:
    """Validate and assemble a :class:`GameGraph`.

    ``edges`` are undirected pairs by default.  With ``edges_directed=True`` the
    list is read as a directed listing and must contain the reverse of every
    pair.  ``F`` maps terminal labels to payoffs and ``f`` maps non-terminal
    labels to running payoffs (missing ``f`` means ``f == 0``).  Mapping keys
    may also be the ``str`` of a label, as produced by JSON.
    """
    labels = tuple(states)
    index = {lab: i for i, lab in enumerate(labels)}
    if len(index) != len(labels):
        raise GameError("duplicate state labels")
    n = len(labels)

    def idx(lab):
        if lab in index:
            return index[lab]
        for cand in labels:
            if str(cand) == str(lab):
                return index[cand]
        raise GameError(f"edge or payoff references unknown state {lab!r}")

    pairs = [(idx(a), idx(b)) for a, b in edges]
    if edges_directed:
        ps = set(pairs)
        bad = [(labels[a], labels[b]) for a, b in ps if (b, a) not in ps]
        if bad:
            raise GameError(f"asymmetric edge list, e.g. {bad[0]!r} has no reverse")
        directed = sorted(ps)
    else:
        directed = sorted({p for a, b in pairs for p in ((a, b), (b, a))})

    term_idx = sorted({idx(t) for t in terminals})
    if not term_idx:
        raise GameError("empty terminal set")
    terminal = np.zeros(n, bool)
    terminal[term_idx] = True

    Fa = np.full(n, np.nan)
    F_keys = {idx(k) for k in F}
    if F_keys != set(term_idx):
        raise GameError("terminal payoff F must be defined exactly on the terminal set")
    for k, v in F.items():
        Fa[idx(k)] = float(v)
    fa = np.zeros(n)
    for k, v in (f or {}).items():
        i = idx(k)
        if terminal[i]:
            raise GameError(f"running payoff given on terminal state {labels[i]!r}")
        fa[i] = float(v)

    src = np.array([a for a, _ in directed], dtype=np.int64)
    dst = np.array([b for _, b in directed], dtype=np.int64)
    indptr = np.searchsorted(src, np.arange(n + 1)).astype(np.int64)
    return from_csr(indptr, dst, terminal, Fa, fa, labels)


def game_from_json(doc: Mapping[str, Any] | str) -> GameGraph:
    """Read the graph-interchange document ``{states, edges, terminals, F, f}``."""
    if isinstance(doc, str):
        doc = json.loads(doc)
    allowed = {"states", "edges", "terminals", "F", "f"}
    extra = set(doc) - allowed
    if extra:
        raise GameError(f"unknown graph fields: {sorted(extra)}")
    for key in ("states", "edges", "terminals", "F"):
        if key not in doc:
            raise GameError(f"graph document lacks {key!r}")
    return build_game(doc["states"], doc["edges"], doc["terminals"], doc["F"], doc.get("f") or {})


# --------------------------------------------------------------------------
# value fields


@dataclass
class ValueField:
    values: np.ndarray
    residual_sup: float
    iterations: int = 0

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __getitem__(self, i):
        return self.values[i]

    def to_csv(self) -> str:
        lines = ["state_index,value"]
        lines += [f"{i},{v!r}" for i, v in enumerate(self.values.tolist())]
        return "\n".join(lines) + "\n"


def _values(u) -> np.ndarray:
    return np.asarray(u.values if isinstance(u, ValueField) else u, dtype=float)


def discrete_inf_laplacian(g: GameGraph, u, x: int) -> float:
    """``max_{y~x} u(y) + min_{y~x} u(y) - 2 u(x)`` at a non-terminal state."""
    vals = _values(u)
    if g.terminal[x]:
        raise GameError(f"state {g.labels[x]!r} is terminal")
    nb = vals[g.neighbors(x)]
    if not (np.all(np.isfinite(nb)) and np.isfinite(vals[x])):
        raise GameError("infinite value among neighbours")
    return float(nb.max() + nb.min() - 2.0 * vals[x])


def inf_laplacian_all(g: GameGraph, u) -> np.ndarray:
    """Vectorised discrete infinity Laplacian; ``nan`` on terminal states."""
    vals = _values(u)
    nb = vals[g.indices]
    mx = np.maximum.reduceat(nb, g.indptr[:-1])
    mn = np.minimum.reduceat(nb, g.indptr[:-1])
    out = mx + mn - 2.0 * vals
    out[g.terminal] = np.nan
    return out


def local_variation(g: GameGraph, u) -> np.ndarray:
    """``delta(x) = max_{y~x} |u(y) - u(x)|`` for every state."""
    vals = _values(u)
    diff = np.abs(vals[g.indices] - np.repeat(vals, np.diff(g.indptr)))
    return np.maximum.reduceat(diff, g.indptr[:-1])


def residual_vector(g: GameGraph, u) -> np.ndarray:
    r = np.abs(inf_laplacian_all(g, u) + 2.0 * g.f)
    r[g.terminal] = 0.0
    return r


def dp_operator(g: GameGraph, u) -> ValueField:
    """One Jacobi application of the game's Bellman operator.

    Off the terminal set ``T(u)(x) = (max_{y~x} u + min_{y~x} u) / 2 + f(x)``;
    on it ``T(u) = F``.
    """
    vals = _values(u)
    if not np.all(np.isfinite(vals)):
        raise GameError("dp_operator needs a finite field")
    nb = vals[g.indices]
    mx = np.maximum.reduceat(nb, g.indptr[:-1])
    mn = np.minimum.reduceat(nb, g.indptr[:-1])
    out = np.where(g.terminal, g.F, 0.5 * (mx + mn) + g.f)
    return ValueField(out, float(residual_vector(g, out).max(initial=0.0)), 0)
