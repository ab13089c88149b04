"""Command line entry point: ``treemem <mode> --config <path> [--out <dir>]``.

Every run writes ``report.json`` (config echo, results, timings) and, for
solving modes, ``fields.csv`` with one row per node. Exit status: 0 on
success, 2 for invalid input, 3 when a solver fails, 4 when an internal
invariant is violated.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from . import __version__
from .errors import ConfigError, MonotonicityViolated, NonFiniteValue, ParseError, SeparationViolated, TreememError
from .funcspec import BOUNDARY, SOURCE, QuadratureParams, SourceTable, parse
from .game import GameConfig, estimate_value, greedy_strategies
from .membranes import TmpSpec, solve_alternating, solve_coupled
from .obstacle import ABOVE, BELOW, ObstacleProblem, complementarity_levels, contact_nodes, solve_above, solve_below
from .operators import OperatorParams, residual_levels, solvability_check, source_field
from .single import DirichletProblem, solve_direct, solve_representation, solve_value_iteration
from .tree import NodeField, TruncatedTree, psi_level

log = logging.getLogger("treemem")

MODES = ("single", "obstacle", "tmp", "game", "check")
EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_INVARIANT = 0, 2, 3, 4

REQUIRED = {
    "single": ("m", "depth", "beta1", "f", "h1"),
    "obstacle": ("m", "depth", "beta1", "f", "h1", "obstacle"),
    "tmp": ("m", "depth", "beta1", "beta2", "f", "g", "h1", "h2"),
    "game": ("m", "depth", "beta1", "beta2", "f", "g", "h1", "h2"),
    "check": ("m", "beta1", "h1"),
}


def load_schema() -> dict:
    return json.loads(resources.files("treemem").joinpath("config_schema.json").read_text())


@dataclass
class GameSettings:
    start_level: int = 0
    start_index: int = 0
    start_board: int = 1
    paths: int = 100_000
    seed: int = 0
    max_steps: int = 100_000


@dataclass
class RunConfig:
    mode: str
    m: Optional[int] = None
    depth: Optional[int] = None
    beta1: Optional[float] = None
    beta2: Optional[float] = None
    f: Optional[str] = None
    g: Optional[str] = None
    h1: Optional[str] = None
    h2: Optional[str] = None
    h1_table: Optional[str] = None
    h2_table: Optional[str] = None
    obstacle: Optional[str] = None
    side: str = BELOW
    methods: list = field(default_factory=lambda: ["direct"])
    obstacle_method: str = "howard"
    tmp_method: str = "both"
    tol: float = 1e-10
    max_iter: int = 200_000
    sh_depth: int = 12
    probe_depth: int = 12
    quadrature_subdivisions: int = 8
    contact_tol: float = 1e-9
    game: GameSettings = field(default_factory=GameSettings)

    @classmethod
    def from_dict(cls, raw: dict, mode: Optional[str] = None, base_dir: Path | None = None) -> "RunConfig":
        try:
            jsonschema.validate(raw, load_schema())
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config invalid at {where}: {exc.message}") from None
        d = dict(raw)
        for alias, name in (("beta", "beta1"), ("h", "h1")):
            if alias in d:
                if name in d:
                    raise ConfigError(f"give either {alias!r} or {name!r}, not both")
                d[name] = d.pop(alias)
        if mode is not None:
            if d.get("mode", mode) != mode:
                raise ConfigError(f"config says mode {d['mode']!r} but {mode!r} was requested")
            d["mode"] = mode
        if "mode" not in d:
            raise ConfigError("no mode given")
        for key in ("h1", "h2"):
            table = d.get(f"{key}_table")
            if table is not None:
                path = Path(table)
                if base_dir is not None and not path.is_absolute():
                    path = base_dir / path
                d[f"{key}_table"] = str(path.resolve())
                d.setdefault(key, None)
        missing = [k for k in REQUIRED[d["mode"]]
                   if d.get(k) is None and not (k in ("h1", "h2") and d.get(f"{k}_table"))]
        if missing:
            raise ConfigError(f"mode {d['mode']!r} needs {', '.join(missing)}")
        game = GameSettings(**d.pop("game", {}))
        cfg = cls(game=game, **d)
        if cfg.depth is not None and cfg.m is not None and cfg.game.start_level > cfg.depth:
            raise ConfigError("game start level beyond the tree depth")
        return cfg

    def to_dict(self) -> dict:
        out = {}
        for fl in fields(self):
            val = getattr(self, fl.name)
            if fl.name == "game":
                val = asdict(val)
            if val is not None:
                out[fl.name] = val
        return out


def load_config(path, mode: Optional[str] = None) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return RunConfig.from_dict(raw, mode, path.parent)


# --- building problems -----------------------------------------------------------

def _source(cfg: RunConfig, key: str):
    table = getattr(cfg, f"{key}_table")
    if table:
        return SourceTable.from_csv(table)
    return parse(getattr(cfg, key), SOURCE)


def _quadrature(cfg: RunConfig) -> QuadratureParams:
    return QuadratureParams(cfg.quadrature_subdivisions)


def build_problem(cfg: RunConfig) -> DirichletProblem:
    tree = TruncatedTree(cfg.m, cfg.depth)
    return DirichletProblem(tree, OperatorParams(cfg.beta1, cfg.m), _source(cfg, "h1"), parse(cfg.f, BOUNDARY),
                            _quadrature(cfg))


def build_spec(cfg: RunConfig) -> TmpSpec:
    tree = TruncatedTree(cfg.m, cfg.depth)
    return TmpSpec(tree, OperatorParams(cfg.beta1, cfg.m), OperatorParams(cfg.beta2, cfg.m),
                   _source(cfg, "h1"), _source(cfg, "h2"), parse(cfg.f, BOUNDARY), parse(cfg.g, BOUNDARY),
                   _quadrature(cfg))


# --- per-node tables -----------------------------------------------------------------

@dataclass
class RunResult:
    results: dict
    fields: Optional[dict] = None
    coincidence: Optional[list] = None
    timing: dict = field(default_factory=dict)


def _leaf_gap(u: NodeField, datum: np.ndarray) -> np.ndarray:
    return u.levels[-1] - datum


def _field_table(u: NodeField, v: Optional[NodeField], r_u: list, r_v: Optional[list], contact: list) -> dict:
    tree = u.tree
    cols = {"level": [], "index": [], "psi": [], "u": [], "v": [], "residual_u": [], "residual_v": [], "contact": []}
    for k in range(tree.depth + 1):
        n = tree.m**k
        cols["level"].append(np.full(n, k))
        cols["index"].append(np.arange(n))
        cols["psi"].append(psi_level(k, tree.m))
        cols["u"].append(u.levels[k])
        cols["v"].append(v.levels[k] if v is not None else None)
        cols["residual_u"].append(r_u[k])
        cols["residual_v"].append(r_v[k] if r_v is not None else None)
        cols["contact"].append(contact[k])
    return cols


def _contact_levels(tree: TruncatedTree, nodes) -> list:
    out = [np.zeros(tree.m**k, dtype=int) for k in range(tree.depth + 1)]
    for n in nodes:
        out[n.level][n.index] = 1
    return out


def _fmt(x) -> str:
    return format(float(x), ".17g")


def render_fields(cols: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = list(cols)
    w.writerow(names)
    for k in range(len(cols["level"])):
        n = len(cols["level"][k])
        for i in range(n):
            row = []
            for name in names:
                col = cols[name][k]
                if col is None:
                    row.append("")
                elif name in ("level", "index", "contact"):
                    row.append(str(int(col[i])))
                else:
                    row.append(_fmt(col[i]))
            w.writerow(row)
    return buf.getvalue()


def render_coincidence(rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["level", "index", "psi", "u", "v"])
    for level, index, p, u, v in rows:
        w.writerow([level, index, _fmt(p), _fmt(u), _fmt(v)])
    return buf.getvalue()


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise OSError(f"could not write {path}: {exc}") from exc


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, tuples to lists, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if np.isfinite(x) else repr(x)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _split_timing(results: dict, timing: dict, prefix: str = "") -> dict:
    """Move every ``elapsed`` entry out of ``results`` so the rest is reproducible."""
    out = {}
    for k, v in results.items():
        if k == "elapsed":
            timing[prefix.rstrip(".") or "solve"] = v
        elif isinstance(v, dict):
            out[k] = _split_timing(v, timing, f"{prefix}{k}.")
        else:
            out[k] = v
    return out


def write_outputs(cfg: RunConfig, result: Optional[RunResult], out_dir, error: Optional[TreememError] = None,
                  wall_time: float = 0.0) -> list[Path]:
    out_dir = Path(out_dir)
    written = []
    timing = dict(result.timing) if result else {}
    report = {
        "version": __version__,
        "mode": cfg.mode if cfg else None,
        "config": cfg.to_dict() if cfg else None,
        "seed": cfg.game.seed if cfg and cfg.mode == "game" else None,
    }
    if result is not None:
        report["results"] = _split_timing(result.results, timing)
        if result.fields is not None:
            path = out_dir / "fields.csv"
            _atomic_write(path, render_fields(result.fields))
            written.append(path)
        if result.coincidence is not None:
            path = out_dir / "coincidence.csv"
            _atomic_write(path, render_coincidence(result.coincidence))
            written.append(path)
    if error is not None:
        report["error"] = {"code": error.code, "message": str(error)}
    timing["wall_time"] = wall_time
    report["timing"] = timing
    path = out_dir / "report.json"
    _atomic_write(path, json.dumps(_clean(report), indent=2, sort_keys=True) + "\n")
    written.append(path)
    return written


# --- modes -------------------------------------------------------------------------

def _run_single(cfg: RunConfig) -> RunResult:
    prob = build_problem(cfg)
    sols, results = {}, {}
    for method in cfg.methods:
        if method == "direct":
            u, rep = solve_direct(prob)
        elif method == "representation":
            u, rep = solve_representation(prob, cfg.sh_depth)
        elif method == "representation_discrete":
            u, rep = solve_representation(prob, cfg.sh_depth, boundary="discrete")
        else:
            u, rep = solve_value_iteration(prob, cfg.tol, cfg.max_iter)
        sols[method] = u
        results[method] = rep.to_dict()
    names = list(sols)
    results["gaps"] = {f"{a}|{b}": sols[a].sup_dist(sols[b]) for i, a in enumerate(names) for b in names[i + 1:]}
    results["primary"] = names[0]
    u = sols[names[0]]
    h = prob.h_field()
    r = residual_levels(u, prob.beta, h) + [_leaf_gap(u, prob.leaf_values())]
    contact = _contact_levels(prob.tree, [])
    return RunResult(results, _field_table(u, None, r, None, contact))


def _run_obstacle(cfg: RunConfig) -> RunResult:
    prob = build_problem(cfg)
    phi = source_field(parse(cfg.obstacle, SOURCE), prob.tree)
    op = ObstacleProblem(prob, phi, cfg.side)
    solve = solve_below if cfg.side == BELOW else solve_above
    u, rep = solve(op, cfg.tol, cfg.max_iter, method=cfg.obstacle_method)
    contacts = contact_nodes(u, phi, cfg.contact_tol)
    results = {"obstacle": rep.to_dict(), "side": cfg.side, "contact_nodes": len(contacts),
               "complementarity_residual": rep.final_residual}
    r = complementarity_levels(u, op) + [_leaf_gap(u, prob.leaf_values())]
    return RunResult(results, _field_table(u, None, r, None, _contact_levels(prob.tree, contacts)))


def _tmp_tables(spec: TmpSpec, sol) -> tuple[dict, list]:
    u, v = sol.u, sol.v
    r_u = complementarity_levels(u, ObstacleProblem(spec.base1, v, BELOW)) + [_leaf_gap(u, spec.base1.leaf_values())]
    r_v = complementarity_levels(v, ObstacleProblem(spec.base2, u, ABOVE)) + [_leaf_gap(v, spec.base2.leaf_values())]
    table = _field_table(u, v, r_u, r_v, _contact_levels(spec.tree, sol.coincidence))
    m = spec.tree.m
    rows = [(n.level, n.index, n.index / m**n.level, u[n], v[n]) for n in sol.coincidence]
    return table, rows


def _solvability(spec: TmpSpec, probe_depth: int) -> dict:
    r1, r2 = spec.solvability(probe_depth)
    return {"equation1": r1.to_dict(), "equation2": r2.to_dict()}


def _solve_tmp(cfg: RunConfig, spec: TmpSpec) -> tuple[object, dict]:
    results = {"separation": spec.separation, "solvability": _solvability(spec, cfg.probe_depth)}
    sols = {}
    if cfg.tmp_method in ("alternating", "both"):
        if spec.degenerate:
            results["alternating_skipped"] = "f = g somewhere on the leaves; alternating solves need f > g"
        else:
            sols["alternating"] = solve_alternating(spec, cfg.tol, cfg.max_iter, method=cfg.obstacle_method,
                                                    contact_tol=cfg.contact_tol, check_solvability=False)
    if cfg.tmp_method in ("coupled", "both") or not sols:
        sols["coupled"] = solve_coupled(spec, cfg.tol, cfg.max_iter, cfg.contact_tol, check_solvability=False)
    for name, sol in sols.items():
        results[name] = sol.to_dict()
    if len(sols) == 2:
        a, c = sols["alternating"], sols["coupled"]
        results["gap_u"] = a.u.sup_dist(c.u)
        results["gap_v"] = a.v.sup_dist(c.v)
    primary = "coupled" if "coupled" in sols else "alternating"
    results["primary"] = primary
    results["warnings"] = spec.solvability_warnings()
    return sols[primary], results


def _run_tmp(cfg: RunConfig) -> RunResult:
    spec = build_spec(cfg)
    sol, results = _solve_tmp(cfg, spec)
    table, rows = _tmp_tables(spec, sol)
    return RunResult(results, table, rows)


def _run_game(cfg: RunConfig) -> RunResult:
    spec = build_spec(cfg)
    gs = cfg.game
    cfg_tmp = RunConfig(**{**cfg.__dict__, "tmp_method": "coupled"})
    sol, results = _solve_tmp(cfg_tmp, spec)
    start = (spec.tree.node(gs.start_level, gs.start_index), gs.start_board)
    strat = greedy_strategies(sol.u, sol.v, spec)
    gcfg = GameConfig(spec, start, gs.paths, gs.seed, gs.max_steps)
    t0 = time.perf_counter()
    est = estimate_value(gcfg, strat)
    solved = (sol.u if gs.start_board == 1 else sol.v)[start[0]]
    game = est.to_dict()
    game.update({"solved_value": solved, "start": [gs.start_level, gs.start_index, gs.start_board],
                 "z_score": (est.mean - solved) / est.std_error if est.std_error > 0 else 0.0,
                 "elapsed": time.perf_counter() - t0})
    if est.capped_fraction > 0:
        log.warning("%.3g of paths hit max_steps", est.capped_fraction)
    results["game"] = game
    table, rows = _tmp_tables(spec, sol)
    return RunResult(results, table, rows)


def _run_check(cfg: RunConfig) -> RunResult:
    rep1 = solvability_check(_source(cfg, "h1"), OperatorParams(cfg.beta1, cfg.m), cfg.probe_depth, cfg.sh_depth)
    results = {"equation1": rep1.to_dict()}
    passes = rep1.passes
    if cfg.beta2 is not None and (cfg.h2 is not None or cfg.h2_table):
        rep2 = solvability_check(_source(cfg, "h2"), OperatorParams(cfg.beta2, cfg.m), cfg.probe_depth, cfg.sh_depth)
        results["equation2"] = rep2.to_dict()
        passes = passes and rep2.passes
    results["passes"] = passes
    return RunResult(results)


RUNNERS = {"single": _run_single, "obstacle": _run_obstacle, "tmp": _run_tmp, "game": _run_game,
           "check": _run_check}


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, MonotonicityViolated):
        return EXIT_INVARIANT
    if isinstance(exc, (ConfigError, ParseError, SeparationViolated, NonFiniteValue, ValueError)):
        return EXIT_INVALID
    return EXIT_SOLVER


def run(mode: str, config_path, out_dir="out") -> int:
    t0 = time.perf_counter()
    cfg = None
    try:
        cfg = load_config(config_path, mode)
        result = RUNNERS[cfg.mode](cfg)
    except (TreememError, ValueError) as exc:
        err = exc if isinstance(exc, TreememError) else ConfigError(str(exc))
        code = exit_code(exc)
        log.error("%s: %s", err.code, err)
        try:
            write_outputs(cfg, None, out_dir, err, time.perf_counter() - t0)
        except OSError as io_exc:
            log.error("%s", io_exc)
        return code
    write_outputs(cfg, result, out_dir, None, time.perf_counter() - t0)
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="treemem", description=__doc__.splitlines()[0])
    parser.add_argument("mode", choices=MODES)
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", default="out", help="output directory (default: ./out)")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return run(args.mode, args.config, args.out)


if __name__ == "__main__":
    sys.exit(main())
