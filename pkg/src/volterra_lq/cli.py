"""Command-line entry point: solve, simulate, verify, reduce-check.

Exit codes: 0 success, 1 usage/configuration error, 2 solver finished but the
solution is not strongly regular, 3 a verification check failed.  Every run
writes a manifest (atomically, success or failure) into the output directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from datetime import datetime, timezone

from . import __version__
from .artifacts import (
    load_strategy,
    save_batch_summary,
    save_field_csv,
    save_per_path_costs,
    save_pi_pair,
    save_strategy,
    save_triangle_csv,
    write_json_atomic,
)
from .classical import sde_reduction_compare
from .ebsvie import optimal_inhomogeneous, value_functional
from .errors import (
    ConfigError,
    InvalidArgumentError,
    KernelNotSquareIntegrableError,
    NotSDEReducibleError,
    OracleFailureError,
    SolverDivergenceError,
)
from .fields import Strategy, build_problem
from .riccati import kleinman_solve
from .simulate import estimate_cost, simulate_closed_loop
from .verify import CHECKS

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NOT_STRONGLY_REGULAR = 2
EXIT_CHECK_FAILED = 3

_CONFIG_ERRORS = (ConfigError, InvalidArgumentError, KernelNotSquareIntegrableError,
                  NotSDEReducibleError, OSError, json.JSONDecodeError, KeyError,
                  TypeError, ValueError)


def _read_json(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _load_problem(args) -> tuple[dict, object]:
    cfg = _read_json(args.config)
    if args.steps is not None:
        cfg = dict(cfg)
        cfg["steps"] = args.steps
    return cfg, build_problem(cfg)


class Manifest:
    """Collects run metadata and guarantees an atomic write on exit."""

    def __init__(self, command: str, args):
        self.payload = {
            "command": command,
            "config_path": getattr(args, "config", None),
            "out_dir": args.out,
            "tool_version": __version__,
            "grid": {},
            "solver": {},
            "timings": {},
            "status": "running",
            "started_at": datetime.now(timezone.utc).isoformat(),
        }
        self._t0 = time.perf_counter()
        self._marks = {}

    def set_grid(self, p):
        self.payload["grid"] = {"horizon": p.grid.horizon, "steps": p.grid.n_steps,
                                "d": p.d, "l": p.ell}

    def set_solver(self, **kwargs):
        self.payload["solver"].update(kwargs)

    def mark(self, name: str):
        now = time.perf_counter()
        last = self._marks.get("_last", self._t0)
        self.payload["timings"][name] = round(now - last, 6)
        self._marks["_last"] = now

    def finish(self, status: str, error: str | None = None):
        self.payload["status"] = status
        if error:
            self.payload["error"] = error
        self.payload["wall_clock"] = round(time.perf_counter() - self._t0, 6)
        self.payload["finished_at"] = datetime.now(timezone.utc).isoformat()
        os.makedirs(self.payload["out_dir"], exist_ok=True)
        write_json_atomic(os.path.join(self.payload["out_dir"], "manifest.json"),
                          self.payload)


def _cmd_solve(args) -> int:
    manifest = Manifest("solve", args)
    try:
        cfg, p = _load_problem(args)
        manifest.set_grid(p)
        manifest.set_solver(tol=args.tol)
        sol = kleinman_solve(p, tol=args.tol)
        manifest.mark("riccati_solve")
        ff = optimal_inhomogeneous(sol.P, sol.xi_check, sol.gamma_check, p)
        manifest.mark("feedforward")
        value = value_functional(sol.P, ff.eta, ff.kappa, p.t0_index, p.x, p)
        out = args.out
        os.makedirs(out, exist_ok=True)
        save_pi_pair(out, sol.P)
        save_strategy(out, Strategy(sol.xi_check, sol.gamma_check, ff.v_hat))
        save_field_csv(os.path.join(out, "kappa.csv"), ff.kappa, prefix="kappa")
        from .fields import TriangleKernel

        eta_kernel = TriangleKernel.from_samples(p.grid, ff.eta.values)
        save_triangle_csv(os.path.join(out, "eta.csv"), eta_kernel, prefix="eta",
                          diagonal_marker=True)
        with open(os.path.join(out, "value_table.csv"), "w") as fh:
            fh.write("t0_index,t0,value\n")
            fh.write(f"{p.t0_index},{p.grid.nodes[p.t0_index]!r},{value!r}\n")
        write_json_atomic(os.path.join(out, "regularity.json"), {
            **sol.regularity.as_dict(),
            "outer_iterations": sol.outer_iterations,
            "gain_deltas": [rec["gain_delta"] for rec in sol.iterate_log],
            "value_at_input": value,
            "max_kappa_range_residual": float(ff.range_residual.max()),
        })
        manifest.mark("artifacts")
        _render_solve_figures(out, p, sol, ff)
        manifest.mark("figures")
    except _CONFIG_ERRORS as exc:
        manifest.finish("error", f"{type(exc).__name__}: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverDivergenceError as exc:
        manifest.finish("solver-divergence", str(exc))
        print(f"solver divergence: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not sol.strongly_regular:
        manifest.finish("not-strongly-regular")
        print(f"solution is not strongly regular "
              f"(lambda = {sol.regularity.lambda_min:.6g}); artifacts written to {args.out}")
        return EXIT_NOT_STRONGLY_REGULAR
    manifest.finish("ok")
    print(f"strongly regular solution (lambda = {sol.regularity.lambda_min:.6g}, "
          f"{sol.outer_iterations} iterations); value at input = {value:.6g}; "
          f"artifacts in {args.out}")
    return EXIT_OK


def _render_solve_figures(out: str, p, sol, ff):
    from . import reports

    figdir = os.path.join(out, "figures")
    reports.fig_p1_profile(sol.P, os.path.join(figdir, "p1_profile.png"))
    reports.fig_min_eig_profile(sol.regularity, p.grid,
                                os.path.join(figdir, "min_eig_profile.png"))
    reports.fig_feedforward(ff.v_hat, os.path.join(figdir, "feedforward.png"))
    reports.fig_gamma_heatmap(sol.gamma_check, os.path.join(figdir, "gamma_heatmap.png"))
    reports.fig_iterates(sol.iterate_log, os.path.join(figdir, "iterates.png"))


def _cmd_simulate(args) -> int:
    manifest = Manifest("simulate", args)
    manifest.payload["strategy_dir"] = args.strategy
    try:
        if args.paths < 1:
            raise InvalidArgumentError(f"--paths must be positive, got {args.paths}")
        cfg, p = _load_problem(args)
        manifest.set_grid(p)
        manifest.set_solver(paths=args.paths, seed=args.seed)
        strategy = load_strategy(args.strategy, p.grid, p.d, p.ell)
        batch = simulate_closed_loop(p, strategy, p.t0_index, p.x,
                                     args.paths, args.seed)
        manifest.mark("simulate")
        mean, se = estimate_cost(batch, p)
        os.makedirs(args.out, exist_ok=True)
        save_batch_summary(os.path.join(args.out, "batch_summary.json"), batch, mean, se)
        if args.per_path_costs:
            save_per_path_costs(os.path.join(args.out, "per_path_costs.csv"), batch)
        manifest.mark("artifacts")
    except _CONFIG_ERRORS as exc:
        manifest.finish("error", f"{type(exc).__name__}: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    manifest.finish("ok")
    print(f"simulated {batch.n_paths} paths (seed {batch.seed}): "
          f"mean cost {mean:.6g} +/- {se:.3g}; {batch.n_flagged} flagged")
    return EXIT_OK


def _cmd_verify(args) -> int:
    manifest = Manifest("verify", args)
    try:
        vcfg = _read_json(args.config)
        unknown = set(vcfg) - {"checks", "problems", "paths", "seed"}
        if unknown:
            raise ConfigError(f"verify config: unknown keys {sorted(unknown)}")
        names = vcfg.get("checks", list(CHECKS))
        for name in names:
            if name not in CHECKS:
                raise ConfigError(f"unknown check name {name!r}; "
                                  f"known: {sorted(CHECKS)}")
        problems = vcfg.get("problems")
        if not problems:
            raise ConfigError("verify config: a non-empty problems list is required")
        n_paths = int(vcfg.get("paths", args.paths))
        seed = int(vcfg.get("seed", args.seed))
        base_dir = os.path.dirname(os.path.abspath(args.config))
        results = []
        for idx, spec in enumerate(problems):
            prob_checks = names
            label = None
            if isinstance(spec, dict) and "config" in spec:
                unknown = set(spec) - {"config", "checks", "label"}
                if unknown:
                    raise ConfigError(f"problems[{idx}]: unknown keys {sorted(unknown)}")
                prob_checks = spec.get("checks", names)
                for name in prob_checks:
                    if name not in CHECKS:
                        raise ConfigError(f"unknown check name {name!r}; "
                                          f"known: {sorted(CHECKS)}")
                label = spec.get("label")
                spec = spec["config"]
            if isinstance(spec, str):
                path = spec if os.path.isabs(spec) else os.path.join(base_dir, spec)
                pcfg = _read_json(path)
                label = label or os.path.basename(path)
            else:
                pcfg = spec
                label = label or f"problem_{idx}"
            if args.steps is not None:
                pcfg = dict(pcfg)
                pcfg["steps"] = args.steps
            p = build_problem(pcfg)
            sol = None
            for name in prob_checks:
                kwargs = {}
                if name in ("optimality", "frechet", "monotone"):
                    if sol is None:
                        sol = kleinman_solve(p)
                    kwargs["sol"] = sol
                if name == "optimality":
                    kwargs.update(n_paths=n_paths, seed=seed)
                if name == "frechet":
                    kwargs.update(n_paths=max(n_paths // 10, 200), seed=seed)
                res = CHECKS[name](p, **kwargs)
                results.append((label, res))
                manifest.mark(f"{label}:{name}")
        os.makedirs(args.out, exist_ok=True)
        payload = {"checks": [{"problem": lbl, **res.as_dict()} for lbl, res in results],
                   "all_passed": all(res.passed for _, res in results)}
        write_json_atomic(os.path.join(args.out, "verify_report.json"), payload)
        _render_verify_figures(args.out, results)
    except _CONFIG_ERRORS as exc:
        manifest.finish("error", f"{type(exc).__name__}: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverDivergenceError as exc:
        manifest.finish("solver-divergence", str(exc))
        print(f"solver divergence: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for lbl, res in results:
        flag = "PASS" if res.passed else ("INCONCLUSIVE" if res.inconclusive else "FAIL")
        print(f"[{flag}] {lbl} :: {res.name}")
    if not payload["all_passed"]:
        manifest.finish("checks-failed")
        return EXIT_CHECK_FAILED
    manifest.finish("ok")
    return EXIT_OK


def _render_verify_figures(out: str, results):
    from . import reports

    for lbl, res in results:
        if res.name == "duality" and "residual_refined" in res.measured:
            ns = [1, 2]
            errs = [res.measured["residual"], res.measured["residual_refined"]]
            reports.fig_convergence(ns, errs,
                                    os.path.join(out, "figures", f"{lbl}_duality_order.png"),
                                    title=f"{lbl}: duality residual vs refinement")
        if res.name == "reduction" and res.measured.get("entries"):
            entries = res.measured["entries"]
            pairs = [(e["rel_error"], e.get("rel_error_refined")) for e in entries]
            if pairs and pairs[0][1] is not None:
                reports.fig_convergence([1, 2], list(pairs[0]),
                                        os.path.join(out, "figures",
                                                     f"{lbl}_reduction_order.png"),
                                        title=f"{lbl}: reduction error vs refinement")


def _cmd_reduce_check(args) -> int:
    manifest = Manifest("reduce-check", args)
    try:
        cfg, p = _load_problem(args)
        manifest.set_grid(p)
        manifest.set_solver(tol=args.tol)
        rep = sde_reduction_compare(p, tol=args.tol)
        manifest.mark("reduction")
        os.makedirs(args.out, exist_ok=True)
        write_json_atomic(os.path.join(args.out, "reduction_report.json"), rep.as_dict())
        from . import reports

        errs = [e.rel_error for e in rep.entries]
        refined = [e.rel_error_refined for e in rep.entries]
        if refined[0] is not None:
            reports.fig_convergence([p.grid.n_steps, 2 * p.grid.n_steps],
                                    [errs[0], refined[0]],
                                    os.path.join(args.out, "figures", "reduction_order.png"),
                                    title="Reduction error vs refinement")
    except _CONFIG_ERRORS as exc:
        manifest.finish("error", f"{type(exc).__name__}: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverDivergenceError, OracleFailureError) as exc:
        manifest.finish("error", str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for e in rep.entries:
        order = f", ratio {2.0 ** e.order:.2f}" if e.order is not None else ""
        print(f"t0 = {e.t0:.3f}: volterra {e.value_volterra:.6g} vs "
              f"ode {e.value_ode:.6g} (rel err {e.rel_error:.3e}{order})")
    if not rep.passed:
        manifest.finish("checks-failed")
        return EXIT_CHECK_FAILED
    manifest.finish("ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="volterra-lq",
        description="LQ control of stochastic Volterra integral equations: "
                    "solve the Riccati-Volterra system, simulate closed loops, "
                    "and verify against classical oracles.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, with_tol_default=None):
        sp.add_argument("--config", required=True, help="problem configuration JSON")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--steps", type=int, default=None,
                        help="override the grid steps from the configuration")

    sp = sub.add_parser("solve", help="solve the Riccati-Volterra system and "
                                      "write the optimal strategy artifacts")
    common(sp)
    sp.add_argument("--tol", type=float, default=1e-8, help="gain-iteration tolerance")
    sp.set_defaults(func=_cmd_solve)

    sp = sub.add_parser("simulate", help="Monte Carlo of a stored strategy")
    common(sp)
    sp.add_argument("--strategy", required=True,
                    help="directory holding gains_xi.csv / gains_gamma.csv / feedforward_v.csv")
    sp.add_argument("--paths", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--per-path-costs", action="store_true")
    sp.set_defaults(func=_cmd_simulate)

    sp = sub.add_parser("verify", help="run named verification checks from a config")
    common(sp)
    sp.add_argument("--paths", type=int, default=20000)
    sp.add_argument("--seed", type=int, default=7)
    sp.set_defaults(func=_cmd_verify)

    sp = sub.add_parser("reduce-check", help="compare against the classical Riccati ODE")
    common(sp)
    sp.add_argument("--tol", type=float, default=0.02, help="relative error tolerance")
    sp.set_defaults(func=_cmd_reduce_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses code 2 for usage errors; remap to the documented taxonomy
        return EXIT_USAGE if exc.code not in (0, None) else 0
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
