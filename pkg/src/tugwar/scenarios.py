"""Named experiments: declarative specs plus the code that runs them."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Callable

import numpy as np

from . import boards, continuum, length_space, simulator, solvers
from .game import GameError, game_from_json, inf_laplacian_all


@dataclass
class ScenarioSpec:
    """A named experiment.

    ``source`` holds exactly one of ``graph`` (inline graph document),
    ``space`` (a :class:`~tugwar.length_space.SpaceSpec` document) or
    ``board`` (a generated board name).  ``boundary`` describes the data,
    ``solver`` and ``simulation`` hold run parameters and ``outputs`` maps
    artifact names to file names.
    """

    name: str
    source: dict
    boundary: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    simulation: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    description: str = ""

    def __post_init__(self):
        keys = set(self.source)
        if len(keys) != 1 or not keys <= {"graph", "space", "board"}:
            raise GameError("scenario source needs exactly one of graph, space, board")
        if "space" in self.source:
            length_space.SpaceSpec.from_json(self.source["space"])
        if "graph" in self.source:
            game_from_json(self.source["graph"])

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, doc) -> "ScenarioSpec":
        if isinstance(doc, str):
            doc = json.loads(doc)
        names = {f.name for f in fields(cls)}
        extra = set(doc) - names
        if extra:
            raise GameError(f"unknown scenario fields: {sorted(extra)}")
        if "name" not in doc or "source" not in doc:
            raise GameError("scenario needs name and source")
        return cls(**doc)


@dataclass
class ScenarioResult:
    summary: dict
    artifacts: dict
    converged: bool = True
    invariants_ok: bool = True


def _triangle_graph_doc() -> dict:
    return boards.triangle().to_json()


REGISTRY: dict[str, ScenarioSpec] = {}


def _register(spec: ScenarioSpec):
    REGISTRY[spec.name] = spec


_register(ScenarioSpec(
    "triangle", {"graph": _triangle_graph_doc()},
    solver={"tol": 1e-12, "max_iter": 1_000_000},
    outputs={"field_below": "triangle_below.csv", "field_above": "triangle_above.csv"},
    description="triangle with self-loops and sign-changing running payoff"))
_register(ScenarioSpec(
    "z2_strip", {"board": "z2_strip"}, boundary={"width": 41, "height": 21},
    solver={"tol": 1e-10, "max_iter": 1_000_000}, outputs={"field": "z2_strip.csv"},
    description="truncated lattice strip with data x - |y|"))
_register(ScenarioSpec(
    "pullup_square", {"board": "pullup_square"}, boundary={"j": 6, "k": [0, 2, 6]},
    simulation={"sI": "pull_left", "sII": "pull_up", "trials": 10_000, "seed": 0, "max_steps": 64},
    description="termination under pull-left against pull-up"))
_register(ScenarioSpec(
    "comb", {"board": "comb"}, boundary={"c": 3, "power": 3, "widths": [20, 40, 80], "k": [1, 5, 10]},
    solver={"tol": 1e-12},
    simulation={"trials": 2000, "seed": 0, "max_steps": 2000, "B": 1e6},
    outputs={"base": "comb_base.csv"},
    description="comb with tooth lengths (c + x)^power"))
_register(ScenarioSpec(
    "l_shape", {"space": {"kind": "l_shape"}}, boundary={"F_top": 1.0, "F_right": 0.0},
    solver={"eps": 0.05, "tol": 1e-10}, outputs={"field": "l_shape.csv"},
    description="L-shaped set with Euclidean distance; no AM extension"))
_register(ScenarioSpec(
    "disk_cap", {"space": {"kind": "euclidean_ball", "spacing": 0.02}}, boundary={"delta": 0.4},
    solver={"eps": 0.08, "tol": 1e-10}, outputs={"field": "disk_cap.csv"},
    description="unit disk with tapered cap data"))
_register(ScenarioSpec(
    "cantor_porous", {"space": {"kind": "euclidean_ball", "spacing": 0.02}},
    boundary={"deltas": [0.2, 0.1, 0.05]},
    solver={"eps": 0.08, "tol": 1e-10}, outputs={"table": "cantor_porous.csv"},
    description="unit disk with data near a Cantor set on the circle"))


def field_csv(values, labels=None) -> str:
    lines = ["state_index,value"]
    lines += [f"{i},{v!r}" for i, v in enumerate(np.asarray(values, float).tolist())]
    return "\n".join(lines) + "\n"


def points_csv(points, values) -> str:
    dim = points.shape[1]
    head = ",".join([f"x{k}" for k in range(dim)] + ["value"])
    lines = [head]
    for p, v in zip(points.tolist(), np.asarray(values, float).tolist()):
        lines.append(",".join(repr(c) for c in p) + f",{v!r}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# runners


def _run_triangle(spec: ScenarioSpec, ctx: dict) -> ScenarioResult:
    g = game_from_json(spec.source["graph"])
    tol = float(ctx.get("tol") or spec.solver.get("tol", 1e-12))
    mi = int(ctx.get("max_iter") or spec.solver.get("max_iter", 1_000_000))
    lo = solvers.value_iteration(g, "below", tol, mi)
    hi = solvers.value_iteration(g, "above", tol, mi)
    i1, i2 = g.index("v1"), g.index("v2")
    fam = all(abs((r.values[i2] - r.values[i1]) - 2.0) <= 1e-6 and -1 - 1e-6 <= r.values[i1] + 1 <= 1 + 1e-6
              for r in (lo, hi))
    summary = {"u_I": [lo.values[i1], lo.values[i2]], "u_II": [hi.values[i1], hi.values[i2]],
               "states": ["v1", "v2"], "below": lo.to_json(), "above": hi.to_json()}
    return ScenarioResult(summary, {"field_below": (field_csv(lo.values), lo.residual_sup),
                                    "field_above": (field_csv(hi.values), hi.residual_sup)},
                          lo.converged and hi.converged, fam)


def _run_z2(spec: ScenarioSpec, ctx: dict) -> ScenarioResult:
    w, h = int(spec.boundary.get("width", 41)), int(spec.boundary.get("height", 21))
    g = boards.z2_strip(w, h)
    xy = np.array(g.labels, dtype=np.int64)
    exact = xy[:, 0] - np.abs(xy[:, 1])
    nb = exact[g.indices]
    lap = np.maximum.reduceat(nb, g.indptr[:-1]) + np.minimum.reduceat(nb, g.indptr[:-1]) - 2 * exact
    interior_max = int(np.abs(lap[~g.terminal]).max())
    tol = float(ctx.get("tol") or spec.solver.get("tol", 1e-10))
    rep = solvers.value_iteration(g, "below", tol, int(ctx.get("max_iter") or spec.solver.get("max_iter", 1_000_000)))
    diff = float(np.abs(rep.values - exact).max())
    summary = {"interior_max_abs_laplacian": interior_max, "solver": rep.to_json(),
               "max_abs_diff_from_x_minus_abs_y": diff, "states": g.n}
    return ScenarioResult(summary, {"field": (field_csv(rep.values), rep.residual_sup)},
                          rep.converged, interior_max == 0 and diff <= 1e-6)


def _run_pullup(spec: ScenarioSpec, ctx: dict) -> ScenarioResult:
    sim = dict(spec.simulation)
    trials = int(ctx.get("trials") or sim.get("trials", 10_000))
    seed = int(ctx["seed"] if ctx.get("seed") is not None else sim.get("seed", 0))
    j = int(spec.boundary.get("j", 6))
    board = boards.PullUpSquare()
    rows, ok = [], True
    for k in spec.boundary.get("k", [0, 2, 6]):
        est = simulator.estimate_value(board, simulator.make_strategy(sim.get("sI", "pull_left")),
                                       simulator.make_strategy(sim.get("sII", "pull_up")), (int(k), j),
                                       trials, seed, int(sim.get("max_steps", 64)), ctx.get("workers", 1))
        bound = board.termination_bound(int(k))
        passed = est.termination_rate <= bound + 3 * est.termination_std_err
        ok &= passed
        rows.append({"k": int(k), "j": j, "termination_rate": est.termination_rate,
                     "std_err": est.termination_std_err, "bound": bound, "pass": passed})
    body = "k,j,termination_rate,std_err,bound\n" + "".join(
        f"{r['k']},{r['j']},{r['termination_rate']!r},{r['std_err']!r},{r['bound']!r}\n" for r in rows)
    return ScenarioResult({"rows": rows, "trials": trials, "seed": seed}, {"table": (body, None)}, True, ok)


def _run_comb(spec: ScenarioSpec, ctx: dict) -> ScenarioResult:
    b = spec.boundary
    c, p = int(b.get("c", 3)), int(b.get("power", 3))
    tol = float(ctx.get("tol") or spec.solver.get("tol", 1e-12))
    rows, conv = [], True
    last = None
    for W in b.get("widths", [20, 40, 80]):
        u, sweeps, change = boards.comb_base_values(boards.comb_lengths(int(W), c, p), tol=tol)
        conv &= change <= tol
        rows.append({"W": int(W), "u00": float(u[0]), "sweeps": sweeps, "last_change": change})
        last = u
    Wmax = max(int(W) for W in b.get("widths", [20, 40, 80]))
    ells = boards.comb_lengths(max(Wmax, 2000), c, p)
    bounds = {int(k): boards.comb_tail_bound(ells, int(k)) for k in b.get("k", [1, 5, 10])}
    by_w = sorted(rows, key=lambda r: r["W"])
    mono = all(a["u00"] <= bb["u00"] + 1e-9 for a, bb in zip(by_w, by_w[1:]))
    summary = {"rows": rows, "upper_bounds": bounds, "nondecreasing": mono}
    sim = spec.simulation
    trials = int(ctx.get("trials") or sim.get("trials", 0))
    if trials:
        seed = int(ctx["seed"] if ctx.get("seed") is not None else sim.get("seed", 0))
        est = simulator.estimate_value(boards.Comb(lambda x: (c + x) ** p),
                                       simulator.make_strategy("comb_down_left_right", B=float(sim.get("B", 1e6))),
                                       simulator.make_strategy("comb_pull_up"), (0, 0), trials, seed,
                                       int(sim.get("max_steps", 2000)), ctx.get("workers", 1))
        summary["simulation"] = est.to_json()
    return ScenarioResult(summary, {"base": (field_csv(last), None)}, conv, mono)


def _space_eps(spec: ScenarioSpec, ctx: dict) -> tuple[length_space.EpsilonComplex, float]:
    eps = float(ctx.get("eps") or spec.solver.get("eps", 0.05))
    sp = length_space.SpaceSpec.from_json(spec.source["space"])
    return length_space.build_complex(sp, eps), eps


def _run_l_shape(spec: ScenarioSpec, ctx: dict) -> ScenarioResult:
    c, eps = _space_eps(spec, ctx)
    top, right = float(spec.boundary.get("F_top", 1.0)), float(spec.boundary.get("F_right", 0.0))
    F = lambda P: np.where(P[:, 1] > 0.5, top, right)
    rep = length_space.solve_u_eps(c, F, tol=float(ctx.get("tol") or spec.solver.get("tol", 1e-10)))
    P = c.points
    region = ((P[:, 0] == 0) & (P[:, 1] < 0.8)) | ((P[:, 1] == 0) & (P[:, 0] < 0.1))
    audit = length_space.am_audit(c, rep.values, [region])
    summary = {"solver": rep.to_json(), "eps": eps, "audit": audit.to_json()}
    return ScenarioResult(summary, {"field": (points_csv(P, rep.values), rep.residual_sup)},
                          rep.converged, True)


def _run_disk_cap(spec: ScenarioSpec, ctx: dict) -> ScenarioResult:
    c, eps = _space_eps(spec, ctx)
    delta = float(spec.boundary.get("delta", 0.4))
    F = continuum.cap_data(delta)
    rep = length_space.solve_u_eps(c, F, tol=float(ctx.get("tol") or spec.solver.get("tol", 1e-10)),
                                   method="iterate_below")
    lo, hi = length_space.mcshane_whitney(c, F)
    u = rep.values
    viol = float(max((lo.values - u).max(), (u - hi.values).max(), 0.0))
    center = int(np.argmin(np.linalg.norm(c.points, axis=1)))
    summary = {"solver": rep.to_json(), "eps": eps, "delta": delta, "u_center": float(u[center]),
               "mcshane_whitney_violation": viol, "mcshane_whitney_violation_over_eps": viol / eps}
    return ScenarioResult(summary, {"field": (points_csv(c.points, u), rep.residual_sup)},
                          rep.converged, viol <= 3 * eps)


def _run_cantor(spec: ScenarioSpec, ctx: dict) -> ScenarioResult:
    c, eps = _space_eps(spec, ctx)
    tol = float(ctx.get("tol") or spec.solver.get("tol", 1e-10))
    deltas = [float(d) for d in spec.boundary.get("deltas", [0.2, 0.1, 0.05])]
    entries = [continuum.porous_measure(d, complex=c, tol=tol) for d in deltas]
    vals = [e.u0 for e in entries]
    slope = continuum.fit_power_law(deltas, vals)[0] if len(deltas) >= 2 else math.nan
    body = "delta,u0,residual\n" + "".join(f"{e.delta!r},{e.u0!r},{e.residual!r}\n" for e in entries)
    summary = {"deltas": deltas, "values": vals, "fitted_exponent": slope, "eps": eps}
    ok = all(a >= b - 1e-9 for a, b in zip(vals, vals[1:]))
    return ScenarioResult(summary, {"table": (body, max(e.residual for e in entries))}, True, ok)


RUNNERS: dict[str, Callable[[ScenarioSpec, dict], ScenarioResult]] = {
    "triangle": _run_triangle,
    "z2_strip": _run_z2,
    "pullup_square": _run_pullup,
    "comb": _run_comb,
    "l_shape": _run_l_shape,
    "disk_cap": _run_disk_cap,
    "cantor_porous": _run_cantor,
}


def run_scenario(spec: ScenarioSpec, **ctx: Any) -> ScenarioResult:
    """Run a registered (or user-supplied) scenario.  ``ctx`` carries CLI overrides."""
    runner = RUNNERS.get(spec.name)
    if runner is None:
        raise GameError(f"no runner for scenario {spec.name!r}; known: {sorted(RUNNERS)}")
    return runner(spec, ctx)
