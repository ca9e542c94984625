"""Command-line entry point: ``bbmkit <subcommand> ...``.

JSON configuration in, CSV/JSON out. Exit codes: 0 success, 2 validation or
usage error, 3 numerical convergence failure, 4 verification failure.

A spectral config is either a bare field description::

    {"dim": 3, "shape": "bump", "radius": 1.0, "height": 1.0}

or an object with a ``potential`` key plus optional ``nodes`` (quadrature
size, default 128). ``simulate`` takes the simulator schema (see
:class:`bbmkit.sim.SimConfig`); ``oracle`` takes ``potential``, ``beta``,
``t_end`` and optional ``h``, ``dt``, ``n_max``, ``mode``, ``output_times``
and ``x0``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConvergenceError, ValidationError
from .moments import limit_moments_sub, subcritical_f, supercritical_f, xi_moments
from .pde import PdeProblem, solve_rho_bar
from .potential import make_potential
from .quadrature import build_grid
from .sim import SimConfig, run_ensemble
from .spectral import beta_critical, ground_state, lambda0, refinement_change

SEED_ENV = "BBMKIT_SEED"
EXIT_OK, EXIT_USAGE, EXIT_CONVERGENCE, EXIT_VERIFY = 0, 2, 3, 4
DEFAULT_POTENTIAL = {"dim": 3, "shape": "bump", "radius": 1.0, "height": 1.0}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(f"{self.prog}: {message}")


@dataclass
class RunManifest:
    command: str
    config: dict
    version: str = __version__
    config_hash: str = ""
    seeds: list = field(default_factory=list)
    started: str = field(default_factory=lambda: time.strftime("%Y-%m-%dT%H:%M:%S%z"))
    wall_clock_s: float = 0.0
    outputs: list = field(default_factory=list)
    platform: str = field(default_factory=platform.python_version)

    def finish(self, t0: float) -> None:
        self.wall_clock_s = round(time.perf_counter() - t0, 3)

    def write(self, path: Path) -> None:
        self.outputs.append(str(path))
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def _load_json(path):
    if path is None:
        return None
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from None


def _spectral_setup(args):
    cfg = _load_json(args.config) or {}
    pot = cfg.get("potential", cfg if "shape" in cfg else DEFAULT_POTENTIAL)
    p = make_potential(pot)
    nodes = int(args.nodes if args.nodes is not None else cfg.get("nodes", 128))
    grid = build_grid(p, nodes)
    echo = {"potential": p.to_dict(), "nodes": nodes}
    return p, grid, echo


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _out_dir(args) -> Path | None:
    if getattr(args, "out", None) is None:
        return None
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_betacr(args) -> int:
    p, grid, echo = _spectral_setup(args)
    bc = beta_critical(p, grid)
    out = {"beta_cr": bc, "dim": p.dim, "nodes": grid.n_nodes, "panels": grid.n_panels}
    if p.dim == 3:
        out["refinement_change"] = refinement_change(0.0, p, grid)
    out["config_hash"] = _hash(echo)
    _emit(out)
    return EXIT_OK


def cmd_lambda0(args) -> int:
    p, grid, echo = _spectral_setup(args)
    lam = lambda0(args.beta, p, grid)
    _emit({"beta": args.beta, "lambda0": lam, "config_hash": _hash({**echo, "beta": args.beta})})
    return EXIT_OK


def cmd_groundstate(args) -> int:
    p, grid, echo = _spectral_setup(args)
    gs = ground_state(args.beta, p, grid, normalization=args.normalization)
    lo, hi = gs.support
    reach = args.reach
    xs = np.linspace(0.0 if p.dim == 3 else lo - reach, hi + reach, args.points)
    vals = gs.radial(xs)
    info = {"beta": gs.beta, "lambda0": gs.lambda0, "mass": gs.mass,
            "normalization": gs.normalization, "tail_amplitude": list(gs.tail_amplitude)}
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "psi"])
            w.writerows([repr(float(x)), repr(float(v))] for x, v in zip(xs, vals))
        info["output"] = str(path)
    _emit(info)
    return EXIT_OK


def cmd_moments(args) -> int:
    p, grid, echo = _spectral_setup(args)
    xs = [float(x) for x in args.x]
    if args.regime == "super":
        tab = supercritical_f(args.beta, args.order, xs, p, grid)
        mom = {j: xi_moments(tab, x) for j, x in enumerate(tab.points)}
    else:
        tab = subcritical_f(args.beta, args.order, xs, p, grid)
        mom = {j: limit_moments_sub(tab, x) for j, x in enumerate(tab.points)}
    rows = tab.to_rows(mom)
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "x", "f_n", "moment"])
            w.writerows([n, repr(x), repr(f), repr(m)] for n, x, f, m in rows)
    else:
        w = csv.writer(sys.stdout)
        w.writerow(["n", "x", "f_n", "moment"])
        w.writerows(rows)
    return EXIT_OK


def _seed(args, cfg_seed):
    if args.seed is not None:
        return int(args.seed)
    if os.environ.get(SEED_ENV):
        try:
            return int(os.environ[SEED_ENV])
        except ValueError:
            raise ValidationError(f"{SEED_ENV} must be an integer") from None
    return int(cfg_seed)


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    raw = _load_json(args.config)
    if raw is None:
        raise ValidationError("simulate needs --config")
    raw = dict(raw)
    raw["seed"] = _seed(args, raw.get("seed", 0))
    cfg = SimConfig.from_dict(raw)
    gs = None
    if args.psi:
        grid = build_grid(cfg.potential, args.nodes or 128)
        gs = ground_state(cfg.beta, cfg.potential, grid, normalization="L2")
    rep = run_ensemble(cfg, gs, workers=args.workers)
    out = _out_dir(args) or Path(".")
    man = RunManifest("simulate", cfg.to_dict(), config_hash=cfg.hash(),
                      seeds=[cfg.seed, cfg.seed + cfg.replicas - 1])
    csv_path = out / "counts.csv"
    rep.write_csv(csv_path)
    man.outputs.append(str(csv_path))
    summary = {"config": cfg.to_dict(), "config_hash": cfg.hash(), **rep.summary()}
    if gs is not None:
        summary["lambda0"] = gs.lambda0
    sum_path = out / "summary.json"
    sum_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    man.outputs.append(str(sum_path))
    man.finish(t0)
    man.write(out / "manifest.json")
    print(f"wrote {csv_path} ({rep.replicas} replicas, {rep.n_truncated} truncated)")
    return EXIT_OK


def cmd_oracle(args) -> int:
    t0 = time.perf_counter()
    raw = _load_json(args.config)
    if raw is None:
        raise ValidationError("oracle needs --config")
    raw = dict(raw)
    known = {"potential", "beta", "t_end", "h", "dt", "n_max", "mode", "output_times", "x0"}
    extra = set(raw) - known
    if extra:
        raise ValidationError(f"unknown oracle config keys: {sorted(extra)}")
    try:
        p = make_potential(raw["potential"])
        kw = {k: raw[k] for k in ("h", "dt", "n_max", "mode") if k in raw}
        prob = PdeProblem(p, float(raw["beta"]), float(raw["t_end"]),
                          output_times=tuple(raw.get("output_times", ())), **kw)
    except KeyError as exc:
        raise ValidationError(f"oracle config missing {exc}") from None
    sol = solve_rho_bar(prob)
    out = _out_dir(args) or Path(".")
    path = out / "rho_bar.csv"
    sol.write_csv(path)
    x0 = raw.get("x0", [0.0] * p.dim)
    at = {f"rho_{n}": sol.at(x0 if p.dim == 3 else x0[0], n).tolist()
          for n in range(1, prob.n_max + 1)}
    man = RunManifest("oracle", raw, config_hash=_hash(raw))
    man.outputs.append(str(path))
    man.finish(t0)
    man.write(out / "manifest.json")
    _emit({"times": sol.times.tolist(), "x0": x0, **at, "stability": prob.stability()})
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import Reference, run_suite

    t0 = time.perf_counter()
    cfg = _load_json(args.config) or {}
    ref_kw = {}
    if "potential" in cfg:
        ref_kw["potential"] = make_potential(cfg["potential"])
    for key in ("nodes", "replicas", "workers"):
        if key in cfg:
            ref_kw[key] = int(cfg[key])
    if args.replicas is not None:
        ref_kw["replicas"] = args.replicas
    ref_kw["seed"] = _seed(args, cfg.get("seed", 1))
    ref_kw["workers"] = args.workers
    ref = Reference(**ref_kw)
    results = run_suite(args.suite, ref, on_result=lambda c: print(c.line(), flush=True))
    report = {
        "suite": args.suite,
        "passed": all(c.passed for c in results),
        "criteria": [c.to_dict() for c in results],
        "reference": {"potential": ref.potential.to_dict(), "nodes": ref.nodes,
                      "replicas": ref.replicas, "seed": ref.seed},
        "version": __version__,
        "wall_clock_s": round(time.perf_counter() - t0, 3),
    }
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(report, indent=2) + "\n")
    return EXIT_OK if report["passed"] else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="bbmkit", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def spectral(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON field description or {potential, nodes}")
        sp.add_argument("--nodes", type=int, help="quadrature nodes (overrides config)")
        return sp

    spectral("betacr", "critical intensity and grid diagnostics").set_defaults(func=cmd_betacr)
    sp = spectral("lambda0", "growth exponent at a given intensity")
    sp.add_argument("--beta", type=float, required=True)
    sp.set_defaults(func=cmd_lambda0)
    sp = spectral("groundstate", "ground state profile as CSV")
    sp.add_argument("--beta", type=float, required=True)
    sp.add_argument("--normalization", choices=["L2", "critical"])
    sp.add_argument("--points", type=int, default=201)
    sp.add_argument("--reach", type=float, default=4.0, help="distance past the support")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_groundstate)
    sp = spectral("moments", "f_n table and limit moments as CSV")
    sp.add_argument("--regime", choices=["super", "sub"], required=True)
    sp.add_argument("--beta", type=float, required=True)
    sp.add_argument("--order", type=int, default=4)
    sp.add_argument("--x", type=float, nargs="+", default=[0.0])
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_moments)

    sp = sub.add_parser("simulate", help="Monte Carlo ensemble")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--seed", type=int, help=f"base seed (default: ${SEED_ENV}, then config)")
    sp.add_argument("--workers", type=int, default=1, help="threads; never changes results")
    sp.add_argument("--psi", action="store_true", help="accumulate ground-state scores")
    sp.add_argument("--nodes", type=int)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("oracle", help="finite-difference moment hierarchy")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", help="output directory")
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("verify", help="acceptance suite with pass/fail per criterion")
    sp.add_argument("--suite", choices=["super", "sub", "critical", "all"], required=True)
    sp.add_argument("--out", help="report JSON path")
    sp.add_argument("--config", help="optional overrides: potential, nodes, replicas, seed")
    sp.add_argument("--replicas", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_verify)
    return ap


def run_command(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ValueError as exc:   # ValidationError, DomainError and numeric input errors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except SystemExit as exc:   # --help / --version
        return int(exc.code or 0)


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
