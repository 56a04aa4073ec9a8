"""Command-line front end: ``stochhom {cell,run,converge,report}``.

Exit codes: 0 success, 1 runtime or solver failure, 2 invalid configuration.
"""
from __future__ import annotations

import argparse
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (build_coefficient, build_grid, build_initial, build_noise, build_plan,
                     build_solver_config, load_config, n_steps)
from .errors import (BoundViolation, ConfigError, DegenerateInput, InvariantViolation,
                     LipschitzViolation, NotElliptic, NotSymmetric, PlanInfeasible,
                     ResolutionViolation, StochHomError, UnsupportedCoefficient)

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
CONFIG_ERRORS = (ConfigError, ResolutionViolation, PlanInfeasible, DegenerateInput,
                 NotSymmetric, NotElliptic, LipschitzViolation, UnsupportedCoefficient)
OUTPUT_ENV = "STOCHHOM_OUTPUT"


def _versions():
    import scipy
    return {"stochhom": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def output_dir(cfg, command, args, stamp_extra=""):
    """``<root>/<command>-<hash>``: the stamp is derived from the resolved
    configuration and command options, so reruns land in the same place."""
    root = args.output or cfg["output", "directory"] or os.environ.get(OUTPUT_ENV) or "runs"
    import hashlib
    stamp = hashlib.sha256((cfg.digest() + stamp_extra).encode()).hexdigest()[:12]
    out = Path(root) / f"{command}-{stamp}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out, cfg, command, extra=None):
    manifest = {"command": command, "config_hash": cfg.digest(), "config": cfg.resolved(),
                "seed": cfg["noise", "seed"], "versions": _versions(),
                "files": sorted(p.name for p in out.iterdir() if p.name != "manifest.json")}
    manifest.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True,
                                                  default=repr) + "\n")


def _print_config(cfg, out=None):
    out = out or sys.stdout
    print(f"# resolved configuration ({cfg.source}, sha256 {cfg.digest()[:12]})", file=out)
    print(cfg.render(), file=out)
    print(file=out)


# --- commands ---------------------------------------------------------------

def cmd_cell(cfg, args):
    from .cell import effective_tensor, solve_correctors, voigt_reuss_bounds
    from .cell.homogenizer import bracket_violation
    from .mac import write_snapshot
    coef = build_coefficient(cfg)
    corr = solve_correctors(coef, rtol=cfg["coefficient", "rtol"])
    eff = effective_tensor(coef, corr)
    lo, hi = voigt_reuss_bounds(coef)
    viol = max(0.0, float(bracket_violation(eff.a_bar, lo, hi)))
    out = output_dir(cfg, "cell", args)
    rows = [("a_bar_11", eff.a_bar[0, 0]), ("a_bar_12", eff.a_bar[0, 1]),
            ("a_bar_22", eff.a_bar[1, 1]), ("kappa_eff", eff.kappa_eff),
            ("reuss_11", lo[0, 0]), ("reuss_12", lo[0, 1]), ("reuss_22", lo[1, 1]),
            ("voigt_11", hi[0, 0]), ("voigt_12", hi[0, 1]), ("voigt_22", hi[1, 1]),
            ("bracket_violation", viol),
            ("max_corrector_residual", float(np.max(corr.residual_norm)))]
    with open(out / "effective.csv", "w") as fh:
        fh.write("quantity,value\n")
        for k, v in rows:
            fh.write(f"{k},{float(v)!r}\n")
    with open(out / "residuals.csv", "w") as fh:
        fh.write("direction,tau_slice,residual\n")
        for i in range(2):
            for t in range(coef.n_tau):
                fh.write(f"{i + 1},{t},{float(corr.residual_norm[i, t])!r}\n")
    n = coef.n_y
    taus = -0.5 + np.arange(coef.n_tau) / coef.n_tau
    for i in range(2):
        for t, tau in enumerate(taus):
            write_snapshot(out / f"eta{i + 1}_t{t}.oscf", "corrector", corr.eta[i, t], float(tau))
    write_manifest(out, cfg, "cell")
    print(f"a_bar = [[{eff.a_bar[0, 0]:.10g}, {eff.a_bar[0, 1]:.10g}], "
          f"[{eff.a_bar[1, 0]:.10g}, {eff.a_bar[1, 1]:.10g}]]")
    print(f"kappa_eff = {eff.kappa_eff:.10g}; Voigt-Reuss bracket violation = {viol:.3g}")
    print(f"wrote {out}")
    return EXIT_OK


def _resolve_eps(cfg, args):
    if args.homogenized:
        return None
    if args.eps is not None:
        from .config import eval_fraction
        try:
            return eval_fraction(args.eps)
        except ValueError:
            raise ConfigError(f"--eps: cannot parse {args.eps!r}") from None
    return cfg["run", "eps"]


def cmd_run(cfg, args):
    from .mac import write_snapshot
    from .noise import sample_path, write_path
    from .solver import NSSolver
    eps = _resolve_eps(cfg, args)
    if args.seed is not None:
        cfg.override("noise", "seed", int(args.seed))
    cfg.override("run", "eps", eps)
    grid = build_grid(cfg)
    sc = build_solver_config(cfg, eps=eps, grid=grid)
    rho0, u0 = build_initial(cfg, grid)
    solver = NSSolver(sc)
    path = sample_path(sc.noise, sc.n_steps, sc.dt) if sc.noise is not None else None
    out = output_dir(cfg, "run", args)
    traj, report = solver.run(rho0, u0, path)
    report.to_csv(out / "energy.csv")
    if path is not None:
        write_path(out / "noise.oscw", path)
    snaps = traj.snapshots if traj.snapshots else [traj.final]
    steps = [round(s.t / sc.dt) for s in snaps]
    for n, st in zip(steps, snaps):
        tag = f"{n:06d}"
        write_snapshot(out / f"density_{tag}.oscf", "density", st.rho.rho, st.t)
        write_snapshot(out / f"pressure_{tag}.oscf", "pressure", st.pi, st.t)
        write_snapshot(out / f"u_{tag}.oscf", "u", st.u.u, st.t)
        write_snapshot(out / f"v_{tag}.oscf", "v", st.u.v, st.t)
    extra = {"eps": eps, "n_steps": sc.n_steps,
             "noise_path_sha256": path.digest() if path is not None else None}
    write_manifest(out, cfg, "run", extra)
    ke = report.ke
    print(f"{'homogenized' if eps is None else f'eps = {eps:g}'}: {sc.n_steps} steps, "
          f"KE {ke[0]:.6g} -> {ke[-1]:.6g}")
    print(f"wrote {out}")
    return EXIT_OK


def _emit_report(report, out, fit=True):
    report.to_csv(out / "report.csv")
    summary = report.summary()
    if not fit:
        summary.pop("slopes", None)
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    print("epsilon,metric,mean,stderr,n_samples")
    for e, metric, m, s, n in report.table_rows():
        print(f"{e:g},{metric},{m:.6e},{s:.3e},{n}")
    if fit:
        for k, v in report.slopes().items():
            print(f"slope[{k}] = {v[0]:.4f} (R^2 = {v[1]:.4f})" if not isinstance(v, str)
                  else f"slope[{k}]: {v}")


def cmd_converge(cfg, args):
    from .lab import fit_rate, run_ladder
    fit = cfg["plan", "fit"]
    ladder = cfg["plan", "eps"]
    if fit and len(ladder) < 3:
        fit_rate(ladder, [1.0] * len(ladder))  # raises DegenerateInput
    plan = build_plan(cfg)
    out = output_dir(cfg, "converge", args)
    report = run_ladder(plan, jobs=args.jobs)
    (out / "raw.json").write_text(report.to_json() + "\n")
    _emit_report(report, out, fit)
    if not report.shared_paths():
        raise InvariantViolation("runs of one sample did not share a noise path")
    write_manifest(out, cfg, "converge", {"jobs_independent": True})
    print(f"wrote {out}")
    return EXIT_OK


def cmd_report(args):
    from .lab import ConvergenceReport
    src = Path(args.source)
    raw = src / "raw.json" if src.is_dir() else src
    try:
        report = ConvergenceReport.from_json(raw.read_text())
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"{raw}: cannot read stored metrics ({exc})") from None
    out = raw.parent
    _emit_report(report, out, fit=len(report.eps) >= 3)
    return EXIT_OK


# --- entry point -------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="stochhom", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("config", help="INI experiment configuration")
        sp.add_argument("-o", "--output", help=f"output root (overrides ${OUTPUT_ENV})")
        return sp

    with_config(sub.add_parser("cell", help="solve the cell problems, write the effective tensor"))
    r = with_config(sub.add_parser("run", help="one oscillating or homogenized solver run"))
    g = r.add_mutually_exclusive_group()
    g.add_argument("--eps", help="scale parameter (e.g. 0.125 or 1/8)")
    g.add_argument("--homogenized", action="store_true", help="run the homogenized system")
    r.add_argument("--seed", type=int, help="noise seed (overrides [noise] seed)")
    c = with_config(sub.add_parser("converge", help="epsilon-ladder convergence experiment"))
    c.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    rep = sub.add_parser("report", help="re-render tables from stored raw metrics")
    rep.add_argument("source", help="converge output directory or its raw.json")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args)
        if getattr(args, "jobs", 1) < 1:
            raise ConfigError("--jobs must be at least 1")
        cfg = load_config(args.config)
        _print_config(cfg)
        handler = {"cell": cmd_cell, "run": cmd_run, "converge": cmd_converge}[args.command]
        return handler(cfg, args)
    except CONFIG_ERRORS as exc:
        print(f"stochhom: configuration error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StochHomError, BoundViolation, InvariantViolation, FloatingPointError) as exc:
        print(f"stochhom: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
