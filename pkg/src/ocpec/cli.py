"""Command-line harness: ``ocpec solve | sweep | check``.

Configuration is a YAML file with these sections (all optional)::

    problem:
      name: affine_dvi          # or cartpole_friction
      # file: my_problem.py     # alternative: module exposing build_problem(**kwargs)
      # kwargs: {}              # passed to build_problem
      N: 100
      dt: 0.01
      cost: {Q_T: [20, 20], Q_x: [20, 20], Q_tau: [1], Q_p: [0.1], x_e: [0, 0]}
      box: {x_max: 5, tau_max: 2}          # affine_dvi only
      params: {mu: 0.1}                    # cartpole_friction only
    solver:                     # any SolverOptions field
      s_final: 1.0e-4
      z_final: 1.0e-4
    initial_guess:
      mode: cold                # cold | random | file
      seed: 0
      range: 1.0
      path: trajectory.csv      # for mode: file
    sweep:
      s_final: [1.0e-3, 1.0e-4, 1.0e-5, 1.0e-6, 1.0e-7, 1.0e-8]
      seeds: 20
      first_seed: 0
      range: 1.0
    output:
      dir: out

Unknown keys anywhere are rejected with the offending key path.
"""
from __future__ import annotations

import argparse
import csv
import importlib.util
import io
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .benchmarks.affine import affine_dvi
from .benchmarks.cartpole import CartPoleParams, cartpole_friction
from .benchmarks.common import QuadraticCostSpec
from .benchmarks.metrics import evaluate_solution_metrics, random_initial_guess
from .kkt import Iterate, fb, fb_grad, linearize
from .options import SolverOptions
from .problem import DiscretizedOCPEC, check_derivatives
from .riccati import factor_and_solve
from .solver import (EVALUATOR_ERROR, MAX_ITERATIONS, OPTIMAL, RESTORATION_FAILED, SolveReport,
                     cold_start, solve)

EXIT_CODES = {OPTIMAL: 0, MAX_ITERATIONS: 3, RESTORATION_FAILED: 4, EVALUATOR_ERROR: 5}
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
SWEEP_WORKERS_ENV = "OCPEC_SWEEP_WORKERS"
DEFAULT_SWEEP = [1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8]
BENCHMARKS = ("affine_dvi", "cartpole_friction")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_SECTIONS = {
    "problem": {"name", "file", "kwargs", "N", "dt", "cost", "box", "params"},
    "solver": set(SolverOptions.field_names()),
    "initial_guess": {"mode", "seed", "range", "path"},
    "sweep": {"s_final", "seeds", "first_seed", "range"},
    "output": {"dir"},
}
_COST_KEYS = {"Q_T", "Q_x", "Q_tau", "Q_p", "x_e", "x_ref"}
_PARAM_KEYS = set(CartPoleParams.__dataclass_fields__)


@dataclass
class RunConfig:
    problem: dict = field(default_factory=lambda: {"name": "affine_dvi"})
    solver: dict = field(default_factory=dict)
    initial_guess: dict = field(default_factory=lambda: {"mode": "cold"})
    sweep: dict = field(default_factory=dict)
    output: dict = field(default_factory=lambda: {"dir": "out"})
    base_dir: Path = Path(".")

    def options(self) -> SolverOptions:
        try:
            return SolverOptions(**self.solver)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"solver: {exc}") from None

    @property
    def out_dir(self) -> Path:
        return Path(self.output.get("dir", "out"))


def _reject_unknown(where: str, got: dict, allowed: set):
    extra = sorted(set(got) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: " + ", ".join(f"{where}.{k}" for k in extra))


def parse_config(text: str, base_dir: Path = Path(".")) -> RunConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML parse error: {exc}") from None
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("top level of the config must be a mapping")
    _reject_unknown("config", raw, set(_SECTIONS))
    cfg = RunConfig(base_dir=base_dir)
    for sec, allowed in _SECTIONS.items():
        val = raw.get(sec)
        if val is None:
            continue
        if not isinstance(val, dict):
            raise ConfigError(f"section '{sec}' must be a mapping")
        _reject_unknown(sec, val, allowed)
        merged = dict(getattr(cfg, sec))
        if sec == "problem" and "file" in val:
            merged.pop("name", None)
        merged.update(val)
        setattr(cfg, sec, merged)
    prob = cfg.problem
    if "name" in prob and "file" in prob:
        raise ConfigError("problem: give either 'name' or 'file', not both")
    if "name" in prob and prob["name"] not in BENCHMARKS:
        raise ConfigError(f"problem.name: unknown benchmark '{prob['name']}' (choose from {', '.join(BENCHMARKS)})")
    if isinstance(prob.get("cost"), dict):
        _reject_unknown("problem.cost", prob["cost"], _COST_KEYS)
    if isinstance(prob.get("params"), dict):
        _reject_unknown("problem.params", prob["params"], _PARAM_KEYS)
    mode = cfg.initial_guess.get("mode", "cold")
    if mode not in ("cold", "random", "file"):
        raise ConfigError(f"initial_guess.mode: expected cold, random or file, got '{mode}'")
    if mode == "file" and "path" not in cfg.initial_guess:
        raise ConfigError("initial_guess.path is required for mode: file")
    cfg.options()  # validate overrides now
    return cfg


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, p.parent)


def _load_problem_file(path: Path, kwargs: dict) -> DiscretizedOCPEC:
    spec = importlib.util.spec_from_file_location(f"ocpec_user_{path.stem}", path)
    if spec is None or spec.loader is None:
        raise ConfigError(f"problem.file: cannot import {path}")
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    if not hasattr(mod, "build_problem"):
        raise ConfigError(f"problem.file: {path} defines no build_problem()")
    prob = mod.build_problem(**kwargs)
    if not isinstance(prob, DiscretizedOCPEC):
        raise ConfigError("problem.file: build_problem() must return a DiscretizedOCPEC")
    return prob


def build_problem(cfg: RunConfig) -> DiscretizedOCPEC:
    pc = cfg.problem
    try:
        if "file" in pc:
            path = Path(pc["file"])
            if not path.is_absolute():
                path = cfg.base_dir / path
            kw = dict(pc.get("kwargs") or {})
            for key in ("N", "dt"):
                if key in pc:
                    kw[key] = pc[key]
            return _load_problem_file(path, kw)
        kw = {k: pc[k] for k in ("N", "dt") if k in pc}
        if "cost" in pc:
            kw["cost"] = QuadraticCostSpec(**pc["cost"])
        if pc["name"] == "affine_dvi":
            if "params" in pc:
                raise ConfigError("problem.params: not used by affine_dvi")
            return affine_dvi(box=pc.get("box"), **kw)
        if "box" in pc:
            raise ConfigError("problem.box: not used by cartpole_friction")
        return cartpole_friction(params=CartPoleParams(**(pc.get("params") or {})), **kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"problem: {exc}") from None


# ---------------------------------------------------------------------------
# trajectory and history files
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v))


def trajectory_header(problem: DiscretizedOCPEC) -> list:
    d = problem.dims
    cols = ["t"]
    for name, n in (("x", d.n_x), ("tau", d.n_tau), ("p", d.n_p), ("w", d.n_p),
                    ("sigma", d.n_sigma), ("eta", d.n_eta), ("lambda", d.n_x), ("gamma", d.n_gamma)):
        cols += [f"{name}_{i + 1}" for i in range(n)]
    return cols


def _trajectory_blocks(Y: Iterate):
    lay = Y.layout
    return [lay.slices[k] for k in ("x", "tau", "p", "w", "sigma", "eta", "lam", "gamma")]


def write_trajectory(path: Path, problem: DiscretizedOCPEC, Y: Iterate):
    """One row per knot, ``t = 0 .. N dt``; the first row holds ``x0`` and NaN elsewhere."""
    d = problem.dims
    header = trajectory_header(problem)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    row0 = [0.0] + list(problem.x0) + [math.nan] * (len(header) - 1 - d.n_x)
    w.writerow([_fmt(v) for v in row0])
    blocks = _trajectory_blocks(Y)
    for n in range(d.N):
        vals = [(n + 1) * d.dt]
        for sl in blocks:
            vals += list(Y.data[n, sl])
        w.writerow([_fmt(v) for v in vals])
    _atomic_write(path, buf.getvalue())


def read_trajectory(path: Path, problem: DiscretizedOCPEC) -> Iterate:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = trajectory_header(problem)
    if not rows or rows[0] != header:
        raise ConfigError(f"{path}: header does not match the problem's dimensions")
    body = rows[2:]
    if len(body) != problem.dims.N:
        raise ConfigError(f"{path}: expected {problem.dims.N + 1} data rows, found {len(rows) - 1}")
    data = np.array([[float(v) for v in r[1:]] for r in body])
    Y = Iterate(problem.dims)
    col = 0
    for sl in _trajectory_blocks(Y):
        k = sl.stop - sl.start
        Y.data[:, sl] = data[:, col:col + k]
        col += k
    return Y


HISTORY_COLUMNS = ["k", "theta", "theta_new", "total_M", "primal_inf", "dual_inf", "residual_inf", "alpha", "kind",
                   "s", "z", "beta", "soc", "frp", "trials", "factorizations", "soc_solves"]


def write_history(path: Path, report: SolveReport):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for h in report.history:
        row = []
        for c in HISTORY_COLUMNS:
            v = getattr(h, c)
            row.append(_fmt(v) if isinstance(v, float) else str(int(v)) if isinstance(v, bool) else str(v))
        w.writerow(row)
    _atomic_write(path, buf.getvalue())


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def initial_iterate(cfg: RunConfig, problem: DiscretizedOCPEC) -> Iterate:
    ig = cfg.initial_guess
    mode = ig.get("mode", "cold")
    if mode == "random":
        return random_initial_guess(problem, int(ig.get("seed", 0)), float(ig.get("range", 1.0)))
    if mode == "file":
        path = Path(ig["path"])
        return read_trajectory(path if path.is_absolute() else cfg.base_dir / path, problem)
    return cold_start(problem)


def _log(quiet: bool, msg: str):
    if not quiet:
        print(msg, file=sys.stderr)


def cmd_solve(cfg: RunConfig, quiet: bool = False) -> int:
    problem = build_problem(cfg)
    opts = cfg.options()
    Y0 = initial_iterate(cfg, problem)

    def progress(row):
        _log(quiet, f"{row.k:4d}  theta={row.theta:.6e}  M={row.total_M:.3e}  "
                    f"alpha={row.alpha:.3f}  {row.kind:<11s} s={row.s:.1e}  z={row.z:.1e}")

    report = solve(problem, Y0, opts, callback=progress)
    out = cfg.out_dir
    write_trajectory(out / "trajectory.csv", problem, report.Y)
    write_history(out / "history.csv", report)
    summary = report.summary()
    summary["problem"] = problem.name
    summary["final_cost"] = float(problem.cost.value(report.Y.Z).sum())
    summary["metrics"] = evaluate_solution_metrics(problem, report.Y.Z).as_dict()
    _atomic_write(out / "summary.json", json.dumps(_json_safe(summary), indent=2) + "\n")
    _log(quiet, f"status: {report.status} after {report.iterations} iterations "
                f"({report.wall_time:.2f} s); results in {out}")
    return EXIT_CODES[report.status]


def _sweep_cell(args):
    """One (s*, seed) solve; failures of any kind are recorded, never raised."""
    cfg, s_final, seed, rng_range = args
    try:
        problem = build_problem(cfg)
        opts = cfg.options().with_(s_final=s_final, z_final=s_final)
        Y0 = random_initial_guess(problem, seed, rng_range)
        rep = solve(problem, Y0, opts)
    except Exception as exc:  # noqa: BLE001 - keep sweeping
        return {"s_final": s_final, "seed": seed, "status": f"error: {exc}",
                "iterations": 0, "wall_time": math.nan}
    return {"s_final": s_final, "seed": seed, "status": rep.status,
            "iterations": rep.iterations, "wall_time": rep.wall_time}


def sweep_workers() -> int:
    raw = os.environ.get(SWEEP_WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{SWEEP_WORKERS_ENV} must be an integer, got '{raw}'") from None
    return max(1, n)


def aggregate_sweep(runs: list) -> list:
    rows = []
    for sf in sorted({r["s_final"] for r in runs}, reverse=True):
        cell = [r for r in runs if r["s_final"] == sf]
        ok = [r for r in cell if r["status"] == OPTIMAL]
        rows.append({
            "s_final": sf, "successes": len(ok), "attempts": len(cell),
            "mean_iterations": float(np.mean([r["iterations"] for r in ok])) if ok else math.nan,
            "mean_wall_time": float(np.mean([r["wall_time"] for r in cell])),
        })
    return rows


def cmd_sweep(cfg: RunConfig, quiet: bool = False) -> int:
    sw = cfg.sweep
    grid = [float(v) for v in sw.get("s_final", DEFAULT_SWEEP)]
    seeds = int(sw.get("seeds", 20))
    first = int(sw.get("first_seed", 0))
    rng_range = float(sw.get("range", 1.0))
    if not grid or seeds < 1:
        raise ConfigError("sweep: need at least one s_final value and one seed")
    if any(not v > 0 for v in grid):
        raise ConfigError("sweep.s_final: values must be positive")
    build_problem(cfg)  # fail fast on config problems
    opts = cfg.options()
    for v in grid:  # every cell must be a valid option set
        try:
            opts.with_(s_final=v, z_final=v)
        except ValueError as exc:
            raise ConfigError(f"sweep.s_final={v}: {exc}") from None
    jobs = [(cfg, sf, first + i, rng_range) for sf in grid for i in range(seeds)]
    workers = sweep_workers()
    runs = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = ex.map(_sweep_cell, jobs)
            for res in results:
                runs.append(res)
                _log(quiet, f"s*={res['s_final']:.0e} seed={res['seed']}: {res['status']} ({res['iterations']} it)")
    else:
        for job in jobs:
            res = _sweep_cell(job)
            runs.append(res)
            _log(quiet, f"s*={res['s_final']:.0e} seed={res['seed']}: {res['status']} ({res['iterations']} it)")
    runs.sort(key=lambda r: (-r["s_final"], r["seed"]))
    out = cfg.out_dir
    _write_table(out / "sweep_runs.csv", ["s_final", "seed", "status", "iterations", "wall_time"], runs)
    table = aggregate_sweep(runs)
    _write_table(out / "sweep_summary.csv",
                 ["s_final", "successes", "attempts", "mean_iterations", "mean_wall_time"], table)
    for row in table:
        _log(quiet, f"s*={row['s_final']:.0e}: {row['successes']}/{row['attempts']} optimal, "
                    f"mean iterations {row['mean_iterations']:.2f}")
    return 0


def _write_table(path: Path, cols: list, rows: list):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r[c]) if isinstance(r[c], float) else str(r[c]) for c in cols])
    _atomic_write(path, buf.getvalue())


def _fb_self_test(rng) -> list:
    bad = []
    pts = rng.uniform(-2, 2, size=(200, 3))
    pts[:, 2] = np.abs(pts[:, 2])
    h = 1e-6
    for a, b, z in pts:
        ga, gb = fb_grad(a, b, z)
        if not (-2 <= ga <= 0 and -2 <= gb <= 0):
            bad.append(f"fb_grad({a:.3g}, {b:.3g}, {z:.3g}) outside [-2, 0]")
        if math.sqrt(a * a + b * b + z * z) > 1e-3:
            fa = (fb(a + h, b, z) - fb(a - h, b, z)) / (2 * h)
            fbb = (fb(a, b + h, z) - fb(a, b - h, z)) / (2 * h)
            if max(abs(fa - ga), abs(fbb - gb)) > 1e-6:
                bad.append(f"fb_grad mismatch at ({a:.3g}, {b:.3g}, {z:.3g})")
    return bad


def _linear_solver_self_test(problem: DiscretizedOCPEC, opts: SolverOptions) -> list:
    Y = cold_start(problem)
    pt = linearize(problem, Y, opts.s0, opts.z0, opts.nu_J, opts.nu_G)
    dY, _ = factor_and_solve(pt.matrix, pt.residual)
    K = pt.matrix.to_dense()
    T = pt.residual.data.reshape(-1)
    ref = np.linalg.solve(K, -T)
    err = np.abs(dY.reshape(-1) - ref).max() / max(1.0, np.abs(ref).max())
    return [] if err < 1e-8 else [f"Riccati solve differs from dense solve (rel. error {err:.2e})"]


def cmd_check(cfg: RunConfig, quiet: bool = False, seed: int = 0) -> int:
    problem = build_problem(cfg)
    opts = cfg.options()
    rng = np.random.default_rng(seed)
    failures = []
    Zr = rng.uniform(-1, 1, size=(problem.dims.N, problem.dims.n_Z))
    for label, Z in (("cold start", cold_start(problem).Z), ("random point", Zr)):
        rep = check_derivatives(problem, Z, tol=1e-5, seed=seed)
        _log(quiet, f"derivatives at {label}:\n{rep.summary()}")
        if not rep.ok:
            failures.append(f"derivative check failed at {label}")
    failures += _fb_self_test(rng)
    if problem.dims.N * (problem.dims.n_x + problem.dims.n_Z) <= 20000:
        failures += _linear_solver_self_test(problem, opts)
    for msg in failures:
        print(f"FAIL: {msg}", file=sys.stderr)
    _log(quiet, "all checks passed" if not failures else f"{len(failures)} check(s) failed")
    return 0 if not failures else EXIT_CHECK_FAILED


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ocpec", description="Non-interior-point OCPEC solver")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in (("solve", "solve one problem"),
                           ("sweep", "random-start sweep over s_final values"),
                           ("check", "derivative and linear-solver self-tests")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--out", help="output directory (overrides output.dir)")
        sp.add_argument("--seed", type=int, help="random initial guess seed (sweep: first seed)")
        sp.add_argument("--s-final", type=float, dest="s_final",
                        help="target s* (and z*); sweep: run only this value")
        sp.add_argument("--quiet", action="store_true", help="suppress progress output")
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.out:
            cfg.output["dir"] = args.out
        if args.s_final is not None:
            if args.command == "sweep":
                cfg.sweep["s_final"] = [args.s_final]
            else:
                cfg.solver.update(s_final=args.s_final, z_final=args.s_final)
                cfg.options()
        if args.seed is not None:
            if args.command == "sweep":
                cfg.sweep["first_seed"] = args.seed
            elif args.command == "solve":
                cfg.initial_guess.update(mode="random", seed=args.seed)
        if args.command == "solve":
            return cmd_solve(cfg, args.quiet)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.quiet)
        return cmd_check(cfg, args.quiet, seed=args.seed or 0)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
