"""Command-line front end: ``obstacle-well <subcommand> --config FILE``.

Exit codes: 0 success, 1 usage or configuration error, 2 a solver failure
or a failed invariant (the report is still written).
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io as fio
from .config import ConfigError, RunConfig, load_config
from .continuation import (
    SweepAborted,
    epsilon_schedule,
    epsilon_sweep,
    epsilon_sweep_checks,
    lambda_schedule,
    lambda_sweep,
    lambda_sweep_checks,
    limit_vi_verify,
    truncation_consistency,
    vi_verify,
)
from .energy import AxiomViolation, energy, energy_total, penalty_axioms_check
from .model import PowerCritical
from .solver import (
    GeometryError,
    SolverError,
    check_norm_bound,
    find_endpoint_e,
    geometry_check,
    mountain_pass,
    sobolev_estimate,
)

log = logging.getLogger("obstacle_well")

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2
SUBCOMMANDS = ("solve", "sweep-eps", "sweep-lambda", "verify", "geometry", "estimate-sobolev", "axioms", "heatmap")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="obstacle-well", description="Penalised obstacle problems with steep potential wells.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, help="INI run configuration")
    p.add_argument("--out", help="output directory (overrides [output] dir)")
    p.add_argument("--seed", type=int, help="rng seed (overrides [solver] rng_seed)")
    p.add_argument("--slice", type=int, dest="slice_index", help="x3 index for 3D heatmaps")
    p.add_argument("--field", help="raw field dump for the heatmap subcommand")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def worker_count() -> int:
    raw = os.environ.get("OBSTACLE_WELL_THREADS")
    if raw is None:
        return min(2, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"OBSTACLE_WELL_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("OBSTACLE_WELL_THREADS must be >= 1")
    return n


class Run:
    """Collects artifacts and writes the manifest."""

    def __init__(self, rc: RunConfig, out: Path, seed: int, command: str):
        self.rc, self.out, self.seed, self.command = rc, out, seed, command
        self.artifacts: list[Path] = []
        out.mkdir(parents=True, exist_ok=True)

    @property
    def formats(self):
        return self.rc.output.formats

    def json(self, name, obj):
        self.artifacts.append(fio.write_json(self.out / name, obj))

    def text(self, name, text):
        p = self.out / name
        p.write_text(text)
        self.artifacts.append(p)

    def field(self, stem, u):
        if self.rc.output.dump_fields:
            self.artifacts += fio.dump_field(self.out / stem, u, self.rc.problem.grid, self.formats)

    def manifest(self, status):
        entries = [{"file": p.name, "sha256": fio.sha256_file(p)} for p in self.artifacts]
        combined = hashlib.sha256("".join(e["sha256"] for e in entries).encode()).hexdigest()
        fio.write_json(
            self.out / "manifest.json",
            {
                "command": self.command,
                "config_sha256": self.rc.digest,
                "seed": self.seed,
                "status": status,
                "artifacts": entries,
                "artifacts_sha256": combined,
            },
        )


def _solve_report(res, ps):
    rep = res.to_dict()
    rep["flags"] = res.flags
    rep["newton_history"] = res.newton_history
    rep["energy"] = energy(res.u, ps).to_dict()
    umax = float(np.max(res.u))
    rep["min_u"] = float(np.min(res.u))
    rep["max_u"] = umax
    accepted = res.refined and res.level > 0 and rep["min_u"] >= -1e-8 * umax
    rep["accepted"] = bool(accepted)
    if accepted:
        rep["norm_bound"] = check_norm_bound(res, ps)
    return rep


def cmd_solve(run: Run):
    ps, cfg = run.rc.problem, run.rc.solver
    res = mountain_pass(ps, cfg)
    rep = _solve_report(res, ps)
    run.json("solve.json", rep)
    run.field("u", res.u)
    ok = rep["accepted"] and rep["norm_bound"]["ok"]
    return EXIT_OK if ok else EXIT_FAIL


def _eps_list(rc):
    return epsilon_schedule(rc.sweep.eps0, rc.sweep.eps_steps)


def _lam_list(rc):
    return lambda_schedule(rc.sweep.lambda_base, rc.sweep.lambda_steps)


def _write_sweep(run, name, report):
    if "csv" in run.formats:
        run.text(f"{name}.csv", report.to_csv())
    if "json" in run.formats:
        run.json(f"{name}.json", report.to_dict())
    if report.u is not None:
        run.field(f"{name}_u", report.u)


def cmd_sweep_eps(run: Run):
    rc = run.rc
    try:
        rep = epsilon_sweep(rc.problem, _eps_list(rc), rc.solver)
    except SweepAborted as exc:
        _write_sweep(run, "sweep_eps", exc.report)
        return EXIT_FAIL
    rep.meta["checks"] = epsilon_sweep_checks(rep, float(np.max(rc.problem.phi_plus)))
    _write_sweep(run, "sweep_eps", rep)
    return EXIT_OK if rep.meta["checks"]["ok"] else EXIT_FAIL


def cmd_sweep_lambda(run: Run):
    rc = run.rc
    try:
        rep = lambda_sweep(rc.problem, _lam_list(rc), rc.solver, _eps_list(rc))
    except SweepAborted as exc:
        _write_sweep(run, "sweep_lambda", exc.report)
        return EXIT_FAIL
    rep.meta["checks"] = lambda_sweep_checks(rep)
    _write_sweep(run, "sweep_lambda", rep)
    return EXIT_OK if rep.meta["checks"]["ok"] else EXIT_FAIL


def cmd_verify(run: Run):
    """Both sweeps (independent, so run concurrently) and the VI checks."""
    rc = run.rc
    ps, eps_list = rc.problem, _eps_list(rc)
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        f_eps = pool.submit(epsilon_sweep, ps, eps_list, rc.solver)
        f_lam = pool.submit(lambda_sweep, ps, _lam_list(rc), rc.solver, eps_list)
        try:
            eps_rep, lam_rep = f_eps.result(), f_lam.result()
        except SweepAborted as exc:
            run.json("verify.json", {"ok": False, "failure": str(exc), "report": exc.report.to_dict()})
            return EXIT_FAIL
    final = ps.with_params(eps=eps_list[-1])
    top = final.with_params(lam=_lam_list(rc)[-1])
    vi = vi_verify(eps_rep.u, final, 200, seed=run.seed)
    lim = limit_vi_verify(lam_rep.u, top, 200, seed=run.seed)
    cons = truncation_consistency(lam_rep.u, top.truncation, top.potential.omega_tilde(top.grid), top)
    rep = {
        "eps_sweep": epsilon_sweep_checks(eps_rep, float(np.max(ps.phi_plus))),
        "lambda_sweep": lambda_sweep_checks(lam_rep),
        "vi": vi,
        "limit_vi": lim,
        "truncation": cons,
    }
    rep["vi"]["ok"] = vi["max_violation"] >= -1e-6 * vi["scale"]
    rep["limit_vi"]["ok"] = (
        lim["max_violation"] >= -1e-5 * lim["scale"] and abs(lim["energy_ratio"] - 1.0) <= 0.1
    )
    rep["ok"] = all(rep[k]["ok"] for k in ("eps_sweep", "lambda_sweep", "vi", "limit_vi", "truncation"))
    run.json("verify.json", rep)
    run.field("vi_u", eps_rep.u)
    run.field("limit_u", lam_rep.u)
    return EXIT_OK if rep["ok"] else EXIT_FAIL


def cmd_geometry(run: Run):
    ps = run.rc.problem
    try:
        rep = geometry_check(ps, samples=50, seed=run.seed)
        ok = True
    except GeometryError as exc:
        rep, ok = exc.report, False
    e = find_endpoint_e(ps)
    rep["I_e"] = energy_total(e, ps)
    rep["norm_e"] = ps.norm(e)
    rep["phi_plus_below_rho"] = rep["I_phi_plus"] < rep["rho"]
    rep["ok"] = ok and rep["phi_plus_below_rho"] and rep["I_e"] < 0 and rep["norm_e"] > rep["r"]
    run.json("geometry.json", rep)
    return EXIT_OK if rep["ok"] else EXIT_FAIL


def cmd_estimate_sobolev(run: Run):
    ps = run.rc.problem
    if ps.grid.dim < 3:
        raise UsageError("estimate-sobolev needs a 3D configuration")
    S = sobolev_estimate(ps.grid)
    rep = {"S": S, "n": ps.grid.n, "L": ps.grid.L}
    nl = ps.nonlinearity
    if isinstance(nl, PowerCritical):
        rep["level_bound"] = (nl.q - 2) / (2 * nl.q) * S ** (ps.grid.dim / 2)
    run.json("sobolev.json", rep)
    return EXIT_OK


def cmd_axioms(run: Run):
    try:
        rep = penalty_axioms_check(run.rc.problem, trials=100, seed=run.seed)
    except AxiomViolation as exc:
        run.json("axioms.json", {"passed": False, "axiom": exc.axiom, "witness": exc.witness, "report": exc.report})
        return EXIT_FAIL
    run.json("axioms.json", rep)
    return EXIT_OK


def cmd_heatmap(run: Run, field_path, slice_index):
    if field_path is None:
        raise UsageError("heatmap needs --field <raw dump>")
    try:
        u, grid = fio.read_field_raw(field_path)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read field dump: {exc}") from None
    pot = run.rc.problem.potential
    try:
        files = fio.emit_heatmap(
            run.out / (Path(field_path).stem + ".pgm"),
            u,
            grid,
            rings=(pot.well_radius, pot.tilde_radius),
            slice_index=slice_index,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    run.artifacts += files
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"obstacle-well: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    run = None
    try:
        worker_count()  # reject a bad thread setting before any work
        rc = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise UsageError("--seed must be an unsigned 64-bit integer")
            rc.solver = dataclasses.replace(rc.solver, rng_seed=args.seed)
        seed = rc.solver.rng_seed
        out = Path(args.out or rc.output.dir)
        run = Run(rc, out, seed, args.subcommand)
        handlers = {
            "solve": cmd_solve,
            "sweep-eps": cmd_sweep_eps,
            "sweep-lambda": cmd_sweep_lambda,
            "verify": cmd_verify,
            "geometry": cmd_geometry,
            "estimate-sobolev": cmd_estimate_sobolev,
            "axioms": cmd_axioms,
        }
        if args.subcommand == "heatmap":
            code = cmd_heatmap(run, args.field, args.slice_index)
        else:
            if args.slice_index is not None:
                raise UsageError("--slice is only used by the heatmap subcommand")
            code = handlers[args.subcommand](run)
    except (ConfigError, UsageError) as exc:
        print(f"obstacle-well: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, ArithmeticError, RuntimeError) as exc:
        log.error("%s failed: %s", args.subcommand, exc)
        if run is None:
            return EXIT_FAIL
        run.json("failure.json", {"command": args.subcommand, "error": type(exc).__name__, "message": str(exc)})
        run.manifest("failed")
        return EXIT_FAIL
    run.manifest("ok" if code == EXIT_OK else "failed")
    return code


if __name__ == "__main__":
    sys.exit(main())
