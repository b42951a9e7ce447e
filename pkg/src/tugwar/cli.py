"""Command-line entry point: ``tugwar <subcommand> ...``.

Exit codes: 0 success, 2 solver non-convergence, 3 invariant violation,
4 input error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shlex
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from . import __version__, continuum, length_space, scenarios, simulator, solvers
from .game import GameError, game_from_json

EXIT_OK, EXIT_NONCONV, EXIT_INVARIANT, EXIT_INPUT = 0, 2, 3, 4
THREADS_ENV = "TUGWAR_THREADS"

log = logging.getLogger("tugwar")


class InputError(Exception):
    pass


def _versions() -> str:
    import numba
    import scipy
    return f"tugwar={__version__} numpy={np.__version__} scipy={scipy.__version__} numba={numba.__version__}"


def _invocation(argv) -> str:
    return "tugwar " + " ".join(shlex.quote(a) for a in argv)


def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def with_header(body: str, argv, residual) -> str:
    """Prefix a CSV body with ``#`` lines recording the replay command."""
    head = [f"# invocation: {_invocation(argv)}", f"# versions: {_versions()}"]
    if residual is not None:
        head.append(f"# residual_sup: {residual!r}")
    return "\n".join(head) + "\n" + body


class Emitter:
    def __init__(self, out: str | None, argv):
        self.out = Path(out) if out else None
        self.argv = argv
        if self.out is not None:
            try:
                self.out.mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise InputError(f"output path unwritable: {exc}") from None
            if not os.access(self.out, os.W_OK):
                raise InputError(f"output path unwritable: {self.out}")

    def csv(self, name: str, body: str, residual=None) -> None:
        if self.out is not None:
            atomic_write(self.out / name, with_header(body, self.argv, residual))

    def report(self, name: str, doc: dict) -> None:
        doc = dict(doc)
        doc["invocation"] = _invocation(self.argv)
        doc["versions"] = _versions()
        text = json.dumps(doc, indent=2, sort_keys=True, default=_json_default)
        if self.out is not None:
            atomic_write(self.out / name, text + "\n")
        print(text)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serialisable: {type(o)}")


def _load_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from None


def _set_threads(n: int | None) -> int:
    if n is None:
        env = os.environ.get(THREADS_ENV)
        n = int(env) if env else 1
    if n < 1:
        raise InputError("--threads must be >= 1")
    import numba
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    return n


def parse_strategy(text: str, field=None):
    """``kind`` or ``kind:key=value,key=value``; field-based kinds get the solved field."""
    kind, _, rest = text.partition(":")
    params = {}
    for item in filter(None, rest.split(",")):
        k, _, v = item.partition("=")
        try:
            params[k] = json.loads(v)
        except json.JSONDecodeError:
            params[k] = v
    if kind in ("greedy_max", "greedy_min", "backtracking", "epsilon_greedy") and "field" not in params:
        params["field"] = field
    try:
        return simulator.make_strategy(kind, **params)
    except (TypeError, ValueError) as exc:
        raise InputError(str(exc)) from None


def _state(g, label):
    try:
        return g.index(label)
    except GameError:
        for cand in g.labels:
            if str(cand) == str(label):
                return g.index(cand)
        raise InputError(f"unknown state {label!r}") from None


# --------------------------------------------------------------------------
# subcommands


def cmd_solve(args, em: Emitter) -> int:
    g = game_from_json(_load_json(args.graph))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", solvers.NonConvergenceWarning)
        rep = solvers.solve(g, args.method, tol=args.tol, max_iter=args.max_iter, mode=args.mode)
    em.csv("field.csv", rep.field.to_csv(), rep.residual_sup)
    em.report("report.json", {"command": "solve", **rep.to_json(),
                              "values": {str(l): float(v) for l, v in zip(g.labels, rep.values)}})
    return EXIT_OK if rep.converged else EXIT_NONCONV


def cmd_simulate(args, em: Emitter) -> int:
    g = game_from_json(_load_json(args.graph))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", solvers.NonConvergenceWarning)
        rep = solvers.solve(g, "auto", tol=args.tol, max_iter=args.max_iter)
    sI, sII = parse_strategy(args.sI, rep.field), parse_strategy(args.sII, rep.field)
    x0 = _state(g, args.x0)
    est = simulator.estimate_value(g, sI, sII, x0, args.trials, args.seed, args.max_steps, args.workers)
    if args.dump:
        tr = simulator.play(g, sI, sII, x0, args.seed, args.max_steps, trial=0)
        em.csv("trajectory.csv", tr.to_csv())
    em.report("summary.json", {"command": "simulate", **est.to_json(), "x0": str(g.labels[x0]),
                               "solved_value_at_x0": float(rep.values[x0]),
                               "sI": sI.describe(), "sII": sII.describe(), "seed": args.seed})
    return EXIT_OK


_DATA = {
    "linear": lambda P: P[:, 0],
    "constant": lambda P: np.ones(len(P)),
}


def _boundary(text: str):
    kind, _, arg = text.partition(":")
    if kind in _DATA:
        return _DATA[kind]
    if kind == "cap":
        return continuum.cap_data(float(arg or 0.5))
    raise InputError(f"unknown boundary data {text!r}; use linear, constant or cap:DELTA")


def cmd_converge(args, em: Emitter) -> int:
    spec = (length_space.SpaceSpec.from_json(_load_json(args.space)) if args.space
            else length_space.SpaceSpec(args.kind))
    ladder = [float(e) for e in args.ladder.split(",")] if args.ladder else [args.eps or 0.2]
    exact = _DATA["linear"] if (args.exact and args.data == "linear") else None
    f = None if args.f == 0 else float(args.f)
    tab = length_space.convergence_study(spec, _boundary(args.data), f, ladder, exact=exact, tol=args.tol)
    em.csv("ladder.csv", tab.to_csv(), max(tab.residual))
    em.report("ladder.json", {"command": "converge", "eps": tab.eps, "sup_diff": tab.sup_diff,
                              "order": tab.order, "reference": tab.reference, "n_points": tab.n_points,
                              "residual": tab.residual})
    return EXIT_OK


def cmd_hmeasure(args, em: Emitter) -> int:
    deltas = [float(d) for d in args.deltas.split(",")]
    res = continuum.hmeasure_ladder(deltas, args.spacing, args.eps or 0.08, args.tol, args.richardson)
    em.csv("hmeasure.csv", res.to_csv(), max(res.residuals))
    em.report("hmeasure.json", {"command": "hmeasure", **res.to_json()})
    by_delta = [v for _, v in sorted(zip(res.deltas, res.values))]
    mono = all(a <= b + 1e-12 for a, b in zip(by_delta, by_delta[1:]))
    return EXIT_OK if mono else EXIT_INVARIANT


def cmd_scenario(args, em: Emitter) -> int:
    if args.name == "list":
        for name in scenarios.REGISTRY:
            print(name)
        return EXIT_OK
    if args.spec:
        spec = scenarios.ScenarioSpec.from_json(_load_json(args.spec))
    elif args.name in scenarios.REGISTRY:
        spec = scenarios.REGISTRY[args.name]
    else:
        raise InputError(f"unknown scenario {args.name!r}; try 'scenario list'")
    ctx = {"eps": args.eps, "tol": args.tol_override, "max_iter": args.max_iter_override,
           "trials": args.trials_override, "seed": args.seed_override, "workers": args.workers}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", solvers.NonConvergenceWarning)
        res = scenarios.run_scenario(spec, **ctx)
    for key, (body, resid) in res.artifacts.items():
        em.csv(spec.outputs.get(key, f"{spec.name}_{key}.csv"), body, resid)
    em.report(f"{spec.name}.json", {"command": "scenario", "scenario": spec.name,
                                     "converged": res.converged, "invariants_ok": res.invariants_ok,
                                     **res.summary})
    if not res.converged:
        return EXIT_NONCONV
    return EXIT_OK if res.invariants_ok else EXIT_INVARIANT


def cmd_list(args, em: Emitter) -> int:
    print("scenarios: " + " ".join(scenarios.REGISTRY))
    print("strategies: " + " ".join(sorted(simulator.STRATEGIES)))
    print("space kinds: " + " ".join(length_space.KINDS))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="directory for CSV/JSON artifacts")
    common.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default ${THREADS_ENV} or 1)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--eps", type=float, default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="tugwar", description="Tug-of-war games and the infinity Laplacian.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="solve a graph game")
    s.add_argument("--graph", required=True, help="graph JSON {states, edges, terminals, F, f}")
    s.add_argument("--method", default="auto", choices=["auto", "exact_f0", "iterate_below", "iterate_above"])
    s.add_argument("--mode", default="gauss_seidel", choices=["gauss_seidel", "jacobi"])
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--max-iter", type=int, default=1_000_000)

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo play on a graph game")
    s.add_argument("--graph", required=True)
    s.add_argument("--sI", required=True, help="strategy, e.g. greedy_max or pull_toward:target=0")
    s.add_argument("--sII", required=True)
    s.add_argument("--x0", required=True)
    s.add_argument("--trials", type=int, default=1000)
    s.add_argument("--max-steps", type=int, default=10_000)
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--max-iter", type=int, default=1_000_000)
    s.add_argument("--dump", action="store_true", help="write the first trajectory as CSV")

    s = sub.add_parser("converge", parents=[common], help="epsilon ladder on a sampled space")
    s.add_argument("--space", help="SpaceSpec JSON file")
    s.add_argument("--kind", default="segment", choices=length_space.KINDS)
    s.add_argument("--ladder", help="comma-separated halving eps values")
    s.add_argument("--data", default="linear", help="linear | constant | cap:DELTA")
    s.add_argument("--f", type=float, default=0.0, help="constant running payoff")
    s.add_argument("--exact", action="store_true", help="compare with the exact linear value")
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--max-iter", type=int, default=1_000_000)

    s = sub.add_parser("hmeasure", parents=[common], help="cap harmonic-measure ladder on the disk")
    s.add_argument("--deltas", default="0.4,0.2,0.1,0.05")
    s.add_argument("--spacing", type=float, default=0.02)
    s.add_argument("--richardson", action="store_true")
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--max-iter", type=int, default=1_000_000)

    s = sub.add_parser("scenario", parents=[common], help="run a named scenario, or 'scenario list'")
    s.add_argument("name")
    s.add_argument("--spec", help="scenario JSON file overriding the registry entry")
    s.add_argument("--tol", dest="tol_override", type=float, default=None)
    s.add_argument("--max-iter", dest="max_iter_override", type=int, default=None)
    s.add_argument("--trials", dest="trials_override", type=int, default=None)

    sub.add_parser("list", parents=[common], help="list scenarios, strategies and space kinds")
    return p


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "converge": cmd_converge,
            "hmeasure": cmd_hmeasure, "scenario": cmd_scenario, "list": cmd_list}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.workers = _set_threads(args.threads)
        if args.command == "scenario":
            args.seed_override = args.seed if "--seed" in argv else None
        em = Emitter(args.out, argv)
        return COMMANDS[args.command](args, em)
    except (InputError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
