"""Play random-turn tug-of-war under explicit strategies.

Randomness is counter based: trial ``i`` of a run with seed ``s`` draws from a
Philox stream keyed by ``(s, i)``, so estimates do not depend on execution
order or on how trials are split across workers.
"""
from __future__ import annotations

import math
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .game import GameGraph, local_variation


# rounding slack when testing delta(x) >= delta(x0)
_X0_SLACK = 1e-12


class IllegalMove(RuntimeError):
    pass


class StrategyMismatch(ValueError):
    pass


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(trial)])))


@dataclass
class History:
    """What a strategy may look at: the path so far and who won each toss."""

    states: list
    coin_wins: list
    psi: float = 0.0

    @property
    def current(self):
        return self.states[-1]


# --------------------------------------------------------------------------
# strategies


class Strategy:
    name = "strategy"

    def reset(self, game, x0) -> None:
        pass

    def choose(self, game, history: History, rng: np.random.Generator):
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": self.name}


def _argbest(nbrs, vals, maximize: bool):
    # ties -> smallest state index
    order = np.lexsort((np.asarray(nbrs), -vals if maximize else vals))
    return nbrs[order[0]]


class GreedyMax(Strategy):
    """Move to a neighbour maximising ``field``."""

    name = "greedy_max"
    maximize = True

    def __init__(self, field):
        self.field = np.asarray(getattr(field, "values", field), dtype=float)

    def choose(self, game, history, rng):
        nb = game.neighbors(history.current)
        return int(_argbest(nb, self.field[nb], self.maximize))


class GreedyMin(GreedyMax):
    name = "greedy_min"
    maximize = False


class EpsilonGreedy(Strategy):
    """Greedy on ``field`` except with probability ``p`` a uniform neighbour."""

    name = "epsilon_greedy"

    def __init__(self, field, maximize: bool, p: float = 0.1):
        self.field = np.asarray(getattr(field, "values", field), dtype=float)
        self.maximize = maximize
        self.p = p

    def choose(self, game, history, rng):
        nb = game.neighbors(history.current)
        if rng.random() < self.p:
            return int(nb[rng.integers(len(nb))])
        return int(_argbest(nb, self.field[nb], self.maximize))

    def describe(self):
        return {"kind": self.name, "maximize": self.maximize, "p": self.p}


class UniformRandom(Strategy):
    name = "uniform_random"

    def choose(self, game, history, rng):
        nb = game.neighbors(history.current)
        return nb[int(rng.integers(len(nb)))]


class PullToward(Strategy):
    """Step along a shortest graph path toward ``target`` (finite boards)."""

    name = "pull_toward"

    def __init__(self, target: int):
        self.target = int(target)
        self._dist = None
        self._game = None

    def reset(self, game, x0):
        if self._game is not game:
            self._dist = bfs_distances(game, self.target)
            self._game = game

    def choose(self, game, history, rng):
        nb = np.asarray(game.neighbors(history.current))
        d = self._dist[nb]
        return int(nb[np.lexsort((nb, d))[0]])

    def describe(self):
        return {"kind": self.name, "target": self.target}


class Directional(Strategy):
    """Always ask the lazy board for the move in a fixed direction."""

    name = "directional"

    def __init__(self, direction: str):
        self.direction = direction

    def choose(self, game, history, rng):
        return game.move(history.current, self.direction)

    def describe(self):
        return {"kind": self.name, "direction": self.direction}


class CombPullUp(Directional):
    name = "comb_pull_up"

    def __init__(self):
        super().__init__("up")

    def choose(self, game, history, rng):
        s = history.current
        nb = game.neighbors(s)
        up = game.move(s, "up")
        return up if up in nb else nb[0]


class PullLeft(Directional):
    name = "pull_left"

    def __init__(self):
        super().__init__("left")


class PullUp(Directional):
    name = "pull_up"

    def __init__(self):
        super().__init__("up")


class CombDownLeftRight(Strategy):
    """Player I on the comb: down on a tooth, left along the base, right at the
    origin, and once the collected running payoff reaches ``B`` head for the
    nearest terminal.
    """

    name = "comb_down_left_right"

    def __init__(self, B: float = 1e6):
        self.B = float(B)

    def choose(self, game, history, rng):
        x, y = history.current
        if history.psi >= self.B:
            return game.toward_closest_terminal((x, y))
        if y != 0:
            return (x, y - 1)
        if x != 0:
            return (x - 1, 0)
        return (1, 0)

    def describe(self):
        return {"kind": self.name, "B": self.B}


class Table(Strategy):
    name = "table"

    def __init__(self, table: dict):
        self.table = dict(table)

    def choose(self, game, history, rng):
        return self.table[history.current]


def bfs_distances(game: GameGraph, source: int, allowed=None) -> np.ndarray:
    dist = np.full(game.n, np.iinfo(np.int64).max, dtype=np.int64)
    dist[source] = 0
    q = deque([source])
    while q:
        x = q.popleft()
        for y in game.neighbors(x):
            if dist[y] > dist[x] + 1 and (allowed is None or allowed[y]):
                dist[y] = dist[x] + 1
                q.append(int(y))
    return dist


class Backtracking(Strategy):
    """Player II's strategy that forces termination without giving up value.

    With ``X0 = {delta >= delta(x0)} u Y``: inside X0 step to a minimiser of
    ``field``; outside, step back toward the last visited point of X0 along the
    subgraph spanned by the states visited since then.  If ``delta(x0) = 0``,
    first pull toward a terminal until a state with positive variation (or Y)
    is reached, and anchor there.
    """

    name = "backtracking"

    def __init__(self, field, pull_target: int | None = None):
        self.field = np.asarray(getattr(field, "values", field), dtype=float)
        self.pull_target = pull_target
        self._game = None

    def reset(self, game, x0):
        if self._game is not game:
            self._game = game
            self.delta = local_variation(game, self.field)
            if self.pull_target is None:
                term = np.flatnonzero(game.terminal)
                d0 = bfs_distances(game, int(x0))
                self.pull_target = int(term[np.argmin(d0[term])])
            self._pull = bfs_distances(game, self.pull_target)
        self.anchor_time = None
        self.delta0 = None
        self.in_X0 = None
        self._scanned = 0

    def _set_anchor(self, game, t, x):
        self.anchor_time = t
        self.delta0 = float(self.delta[x])
        self.in_X0 = (self.delta >= self.delta0 - _X0_SLACK * (1.0 + self.delta0)) | game.terminal

    def choose(self, game, history, rng):
        t = len(history.states) - 1
        x = int(history.current)
        if self.anchor_time is None:
            for i in range(self._scanned, t + 1):
                if self.delta[int(history.states[i])] > 0:
                    self._set_anchor(game, i, int(history.states[i]))
                    break
            self._scanned = t + 1
            if self.anchor_time is None:
                nb = np.asarray(game.neighbors(x))
                return int(nb[np.lexsort((nb, self._pull[nb]))[0]])
        if self.in_X0[x]:
            nb = np.asarray(game.neighbors(x))
            return int(_argbest(nb, self.field[nb], False))
        span, v = backtrack_window(history.states, self.anchor_time, self.in_X0)
        dist = _subgraph_bfs(game, v, span)
        nb = sorted(int(y) for y in game.neighbors(x) if y in span and dist.get(int(y), 1 << 60) < dist[x])
        return nb[0]

    def describe(self):
        return {"kind": self.name}


def backtrack_window(states, anchor_time, in_X0):
    """Return (vertex set of G_n, v_n) for the backtracking construction."""
    n = len(states) - 1
    j = n
    while j > anchor_time and not in_X0[states[j]]:
        j -= 1
    return {int(s) for s in states[j:]}, int(states[j])


def _subgraph_bfs(game, source, span) -> dict:
    dist = {source: 0}
    q = deque([source])
    while q:
        x = q.popleft()
        for y in game.neighbors(x):
            y = int(y)
            if y in span and y not in dist:
                dist[y] = dist[x] + 1
                q.append(y)
    return dist


STRATEGIES = {
    cls.name: cls for cls in (GreedyMax, GreedyMin, EpsilonGreedy, UniformRandom, PullToward,
                              Directional, CombPullUp, PullLeft, PullUp, CombDownLeftRight,
                              Table, Backtracking)
}


def make_strategy(kind: str, **params) -> Strategy:
    try:
        cls = STRATEGIES[kind]
    except KeyError:
        raise ValueError(f"unknown strategy {kind!r}; choose from {sorted(STRATEGIES)}") from None
    return cls(**params)


# --------------------------------------------------------------------------
# play


@dataclass
class Trajectory:
    states: list
    coin_wins: list
    payoff: float
    terminated: bool
    steps: int
    running_total: float = 0.0
    strategies: tuple = ()

    def to_csv(self) -> str:
        rows = ["step,state,coin"]
        for t, s in enumerate(self.states):
            coin = "" if t == 0 else self.coin_wins[t - 1]
            rows.append(f"{t},{_fmt_state(s)},{coin}")
        return "\n".join(rows) + "\n"


def _fmt_state(s) -> str:
    if isinstance(s, tuple):
        return "(" + " ".join(str(v) for v in s) + ")"
    return str(s)


def play(game, sI: Strategy, sII: Strategy, x0, seed: int, max_steps: int = 10_000,
         trial: int = 0) -> Trajectory:
    """One game.  Payoff is ``F(x_tau) + sum_{i<tau} f(x_i)``, or ``-inf`` if
    the game is cut off at ``max_steps`` before reaching a terminal state.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    rng = trial_rng(seed, trial)
    sI.reset(game, x0)
    sII.reset(game, x0)
    hist = History([x0], [], 0.0)
    x = x0
    coins = rng.random(64) < 0.5
    ci = 0
    for _ in range(max_steps):
        if game.is_terminal(x):
            break
        if ci == len(coins):
            coins = rng.random(64) < 0.5
            ci = 0
        first = bool(coins[ci])
        ci += 1
        mover, who = (sI, "I") if first else (sII, "II")
        y = mover.choose(game, hist, rng)
        if not game.is_neighbor(x, y):
            raise IllegalMove(f"strategy {mover.name} (player {who}) moved {x!r} -> {y!r}, not an edge")
        hist.psi += game.running_payoff(x)
        hist.states.append(y)
        hist.coin_wins.append(who)
        x = y
    done = game.is_terminal(x)
    payoff = hist.psi + game.terminal_payoff(x) if done else -math.inf
    return Trajectory(hist.states, hist.coin_wins, payoff, done, len(hist.states) - 1,
                      hist.psi, (sI.name, sII.name))


@dataclass
class ValueEstimate:
    mean: float
    std_err: float
    termination_rate: float
    termination_std_err: float
    trials: int
    terminated: int
    mean_steps: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _run_block(args):
    game, sI, sII, x0, seed, lo, hi, max_steps = args
    out = []
    for i in range(lo, hi):
        tr = play(game, sI, sII, x0, seed, max_steps, trial=i)
        out.append((tr.terminated, tr.payoff, tr.steps))
    return out


def estimate_value(game, sI: Strategy, sII: Strategy, x0, trials: int, seed: int,
                   max_steps: int = 10_000, workers: int = 1) -> ValueEstimate:
    """Monte Carlo mean payoff over terminated trials; truncation reported separately."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if workers <= 1:
        rows = _run_block((game, sI, sII, x0, seed, 0, trials, max_steps))
    else:
        cuts = np.linspace(0, trials, workers + 1).astype(int)
        jobs = [(game, sI, sII, x0, seed, int(a), int(b), max_steps) for a, b in zip(cuts, cuts[1:])]
        with ProcessPoolExecutor(workers) as ex:
            rows = [r for block in ex.map(_run_block, jobs) for r in block]
    term = np.array([r[0] for r in rows])
    pay = np.array([r[1] for r in rows if r[0]], dtype=float)
    steps = np.array([r[2] for r in rows], dtype=float)
    p = term.mean()
    k = len(pay)
    mean = float(pay.mean()) if k else math.nan
    se = float(pay.std(ddof=1) / math.sqrt(k)) if k > 1 else math.nan
    return ValueEstimate(mean, se, float(p), float(math.sqrt(p * (1 - p) / trials)), trials,
                         int(k), float(steps.mean()))


def simulate(game, sI, sII, x0, trials: int, seed: int, max_steps: int = 10_000) -> list[Trajectory]:
    return [play(game, sI, sII, x0, seed, max_steps, trial=i) for i in range(trials)]


# --------------------------------------------------------------------------
# drift checks


@dataclass
class DriftReport:
    functional: str
    direction: str
    drift: float
    std_err: float
    steps: int
    trajectories: int
    passed: bool
    sigmas: float = 3.0

    @property
    def interval(self) -> tuple[float, float]:
        return (self.drift - self.sigmas * self.std_err, self.drift + self.sigmas * self.std_err)

    def to_json(self) -> dict:
        d = dict(self.__dict__)
        d["interval"] = list(self.interval)
        return d


def backtracking_process(game: GameGraph, traj: Trajectory, field) -> list[float]:
    """``m_n = u(v_n) + delta(x0) d_n`` along a trajectory (from the anchor time)."""
    u = np.asarray(getattr(field, "values", field), dtype=float)
    delta = local_variation(game, u)
    states = [int(s) for s in traj.states]
    anchor = next((t for t, s in enumerate(states) if delta[s] > 0 or game.terminal[s]), None)
    if anchor is None or game.terminal[states[anchor]]:
        return []
    d0 = float(delta[states[anchor]])
    in_X0 = (delta >= d0 - _X0_SLACK * (1.0 + d0)) | game.terminal
    out = []
    for n in range(anchor, len(states)):
        span, v = backtrack_window(states[: n + 1], anchor, in_X0)
        dist = _subgraph_bfs(game, v, span)
        out.append(float(u[v] + d0 * dist[states[n]]))
    return out


def comb_process(game, traj: Trajectory, B: float) -> list[float]:
    """``M_t = 2 (1 - y_t / ell_{x_t}) + psi(t)``, stopped when psi reaches B."""
    out = []
    psi = 0.0
    for t, s in enumerate(traj.states):
        out.append(game.martingale_M(s, psi))
        if psi >= B or game.is_terminal(s):
            break
        psi += game.running_payoff(s)
    return out


def field_process(traj: Trajectory, field) -> list[float]:
    u = np.asarray(getattr(field, "values", field), dtype=float)
    return [float(u[int(s)]) for s in traj.states]


_PROCESSES = {
    "backtracking": ("super", lambda st: st[1] == "backtracking"),
    "comb": ("sub", lambda st: st[0] == "comb_down_left_right"),
    "martingale": ("zero", lambda st: st == ("greedy_max", "greedy_min")),
}


def drift_check(game, trajectories: Sequence[Trajectory], functional: str,
                sigmas: float = 3.0, **params: Any) -> DriftReport:
    """Pooled one-step drift of a named process with a trajectory-clustered
    standard error.  ``super`` passes when drift <= sigmas*se, ``sub`` when
    drift >= -sigmas*se, ``zero`` when |drift| <= sigmas*se.
    """
    if functional not in _PROCESSES:
        raise ValueError(f"unknown functional {functional!r}")
    direction, compatible = _PROCESSES[functional]
    sums, counts = [], []
    for tr in trajectories:
        if not compatible(tuple(tr.strategies)):
            raise StrategyMismatch(f"functional {functional!r} does not match strategies {tr.strategies}")
        if functional == "backtracking":
            proc = backtracking_process(game, tr, params["field"])
        elif functional == "comb":
            proc = comb_process(game, tr, params.get("B", math.inf))
        else:
            proc = field_process(tr, params["field"])
        inc = np.diff(np.asarray(proc, dtype=float))
        sums.append(float(inc.sum()))
        counts.append(len(inc))
    S = np.asarray(sums)
    N = np.asarray(counts, dtype=float)
    total = N.sum()
    if total == 0:
        return DriftReport(functional, direction, 0.0, 0.0, 0, len(S), True, sigmas)
    r = S.sum() / total
    m = len(S)
    if m > 1:
        var = np.sum((S - r * N) ** 2) / (m * (m - 1)) / (N.mean() ** 2)
        se = float(math.sqrt(var))
    else:
        se = 0.0
    slack = sigmas * se + 1e-12
    if direction == "super":
        ok = r <= slack
    elif direction == "sub":
        ok = r >= -slack
    else:
        ok = abs(r) <= slack
    return DriftReport(functional, direction, float(r), se, int(total), m, bool(ok), sigmas)
