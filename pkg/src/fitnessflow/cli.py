"""Command-line front end.

Verbs::

    fitnessflow check --scenario s.toml            # parse + model report
    fitnessflow run   --scenario s.toml [--out D]  # solve, diagnose, write artifacts
    fitnessflow sweep --scenario s.toml --param dt --values 0.01,0.005 [--jobs N]

Exit status: 0 when every selected check passes, 1 when one fails, 2 on a
parse or execution error.  ``FITNESSFLOW_JOBS`` sets the sweep worker
count when ``--jobs`` is not given.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import (
    DiagnosticsReport,
    _jsonable,
    beckner_sup,
    extinction_instability_probe,
    fit_decay_rate,
    grad_estimate_audit,
    l2_difference,
    ode_oracle,
    verify_edi,
)
from .errors import FitnessFlowError, ScenarioError
from .functionals import entropy
from .grid import Grid, _fmt
from .model import check_am4, critical_entropy
from .scenario import SWEEP_PARAMETERS, Scenario, _build, _parse_pattern, load_scenario
from .solver import SolverConfig, Trajectory, run, write_run

__all__ = ["main", "execute", "sweep", "model_report"]

log = logging.getLogger("fitnessflow")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_ERROR = 0, 1, 2
SWEEP_COLUMNS = ("value", "status", "E_end", "gamma", "r2", "edi_max_abs_residual",
                 "l2_diff_prev", "wall_time_s", "error")


def model_report(scenario: Scenario) -> dict:
    """Structural condition, critical entropy and initial entropy."""
    data, grid = scenario.data, scenario.grid
    am4 = check_am4(data)
    ce = critical_entropy(data, grid)
    e0 = entropy(data, grid, scenario.u0)
    return {
        "am4": {**am4.to_dict(), "holds": am4.holds},
        "critical_entropy": ce.to_dict(),
        "E_u0": e0,
        "subcritical": bool(e0 < ce.value),
        "u_inf_min": float(data.u_inf.min()),
        "u_inf_max": float(data.u_inf.max()),
    }


@dataclass
class ExecutionResult:
    code: int
    run_dir: Path
    trajectory: Trajectory | None = None
    report: DiagnosticsReport | None = None
    error: str | None = None


def _oracle_check(sc: Scenario, traj: Trajectory, report: DiagnosticsReport):
    d = sc.diagnostics
    flat_u0 = sc.u0.reshape(sc.u0.shape[0], -1)
    if not np.all(flat_u0 == flat_u0[:, :1]):
        report.flag("oracle", 0.0, "initial state is not spatially constant")
        return
    try:
        ref = ode_oracle(sc.data, flat_u0[:, 0], traj.times[-1])
    except FitnessFlowError as exc:
        report.flag("oracle", getattr(exc, "time", None), str(exc))
        return
    final = traj.states[-1].reshape(ref.size, -1)
    err = float(np.max(np.abs(final - ref[:, None])) / max(np.max(np.abs(ref)), 1e-300))
    report.oracle_error = err
    if not err <= d.oracle_tol:
        report.flag("oracle", traj.times[-1], f"relative error {err:.3e} > {d.oracle_tol:g}")


def _diagnose(sc: Scenario, traj: Trajectory, model: dict, backend) -> DiagnosticsReport:
    d = sc.diagnostics
    report = DiagnosticsReport(extra={"model": model})
    checks = set(d.checks)
    t0, t1 = traj.times[0], traj.times[-1]
    if "am4" in checks or "decay" in checks:
        if not model["am4"]["holds"]:
            report.flag("am4", t0, f"structural condition fails: kappa={model['am4']['kappa']:.6g}")
    if "subcritical" in checks and not model["subcritical"]:
        report.flag("subcritical", t0, f"E(u0)={model['E_u0']:.6g} >= E*={model['critical_entropy']['E_star']:.6g}")
    if "stationary" in checks:
        dev = [float(np.max(np.abs(u - traj.states[0]))) for u in traj.states if u is not None]
        worst = int(np.argmax(dev))
        report.extra["stationary"] = {"max_deviation": max(dev), "passed": max(dev) <= d.stationary_tol}
        if max(dev) > d.stationary_tol:
            report.flag("stationary", traj.times[worst], f"deviation {max(dev):.3e} > {d.stationary_tol:g}")
    if "edi" in checks:
        edi = verify_edi(traj, d.edi_tol_scale)
        report.edi_residuals = [float(r) for r in edi.residuals]
        report.extra["edi"] = {k: v for k, v in edi.to_dict().items() if k != "residuals"}
        if not edi.passed:
            report.flag("edi", float(edi.times[edi.worst]), f"residual {edi.residuals[edi.worst]:.3e} below tolerance")
    if "decay" in checks:
        fit = fit_decay_rate(traj, window=d.decay_window)
        report.gamma_fit = fit.to_dict()
        e = traj.energies
        if not fit.gamma > 0:
            report.flag("decay", fit.window[0], f"fitted gamma={fit.gamma:.6g} is not positive")
        if not fit.r2 >= d.decay_r2_min:
            report.flag("decay", fit.window[0], f"R2={fit.r2:.6f} < {d.decay_r2_min}")
        if not e[-1] <= d.decay_drop * e[0]:
            report.flag("decay", t1, f"E(t_end)/E(0)={e[-1] / e[0] if e[0] else math.inf:.3e} > {d.decay_drop:g}")
    if "beckner" in checks:
        sup = beckner_sup(sc.data, traj)
        report.beckner_sup = sup
        if sup is None or not math.isfinite(sup):
            report.flag("beckner", t1, "Beckner ratio undefined or infinite along the run")
    if "grad" in checks:
        audit = grad_estimate_audit(traj)
        report.grad_bound = audit.to_dict()
        if not audit.passed:
            report.flag("grad", t1, f"super-linear growth: last-quarter slope {audit.slope_late:.3e} > {audit.slope_early:.3e}")
    if "oracle" in checks:
        _oracle_check(sc, traj, report)
    if "probe" in checks:
        pattern = _parse_pattern(d.probe_pattern, sc.data.n_species, "probe", [])
        cfg = SolverConfig(**{**asdict(sc.solver), "t_end": d.probe_window})
        probe = extinction_instability_probe(sc.data, sc.grid, pattern, d.probe_eta, d.probe_window,
                                             cfg, backend=backend)
        report.extra["probe"] = probe.to_dict()
        if not probe.fitness_positive:
            report.flag("probe", 0.0, f"reintroduced fitness min {probe.min_reintroduced_fitness:.3e} <= 0")
        if not probe.mass_increasing:
            report.flag("probe", d.probe_window, "reintroduced mass is not strictly increasing")
    return report


def _execute(sc: Scenario, out_dir=None, backend=None) -> ExecutionResult:
    out = Path(out_dir) if out_dir is not None else Path(sc.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        model = model_report(sc)
        traj = run(sc.data, sc.grid, sc.u0, sc.solver, backend=backend)
        report = _diagnose(sc, traj, model, backend)
        (out / "diagnostics.json").write_text(report.to_json())
        (out / "summary.txt").write_text(f"scenario: {sc.name}\n" + report.summary())
        (out / "scenario.json").write_text(json.dumps(_jsonable(sc.raw), indent=2, sort_keys=True) + "\n")
        persisted = traj
        if sc.snapshots == "ends":
            states = [None] * len(traj)
            states[0], states[-1] = traj.states[0], traj.states[-1]
            persisted = Trajectory(**{**traj.__dict__, "states": states})
        write_run(out, persisted, sc.data, extra_files=("diagnostics.json", "summary.txt", "scenario.json"),
                  extra={"scenario": sc.name, "exit_code": EXIT_OK if report.passed else EXIT_CHECK_FAILED})
    except (FitnessFlowError, OSError, ValueError, ArithmeticError) as exc:
        msg = f"{type(exc).__name__}: {exc}"
        log.error("%s", msg)
        return ExecutionResult(EXIT_ERROR, out, error=msg)
    return ExecutionResult(EXIT_OK if report.passed else EXIT_CHECK_FAILED, out, traj, report)


def execute(scenario: Scenario, out_dir=None, backend=None) -> tuple[int, Path]:
    """Run model checks, the solver and the selected diagnostics; write the run directory."""
    res = _execute(scenario, out_dir, backend)
    return res.code, res.run_dir


def _parse_value(text: str):
    text = text.strip()
    if text in ("auto",):
        return text
    if text in ("inf", "infinity"):
        return math.inf
    return float(text)


def _sweep_child(args):
    raw, base_dir, parameter, value, out, backend = args
    t0 = time.perf_counter()
    row = {"value": value, "status": EXIT_ERROR, "E_end": math.nan, "gamma": math.nan, "r2": math.nan,
           "edi_max_abs_residual": math.nan, "error": ""}
    try:
        sc = _build(raw, Path(base_dir)).with_param(parameter, value)
    except ScenarioError as exc:
        row["error"] = "; ".join(exc.errors)
        row["wall_time_s"] = time.perf_counter() - t0
        return row, None
    res = _execute(sc, out, backend)
    row["wall_time_s"] = time.perf_counter() - t0
    row["status"] = res.code
    if res.trajectory is None:
        row["error"] = res.error or ""
        return row, None
    traj = res.trajectory
    row["E_end"] = float(traj.energies[-1])
    if res.report.gamma_fit is not None:
        fit = res.report.gamma_fit
    else:
        fit = fit_decay_rate(traj).to_dict()
    row["gamma"], row["r2"] = fit["gamma"], fit["r2"]
    row["edi_max_abs_residual"] = verify_edi(traj, sc.diagnostics.edi_tol_scale).max_abs if len(traj) > 1 else 0.0
    g = sc.grid
    return row, (g.extents, g.spacing, g.origin, traj.states[-1])


def _row_text(row):
    out = []
    for c in SWEEP_COLUMNS:
        v = row.get(c, "")
        if isinstance(v, float):
            out.append(_fmt(v))
        elif isinstance(v, str):
            out.append('"' + v.replace('"', "'") + '"' if ("," in v or "\n" in v) else v)
        else:
            out.append(str(v))
    return ",".join(out)


def sweep(scenario: Scenario, parameter: str, values, out_dir=None, jobs=None, backend=None):
    """One run per value, concurrently; writes ``sweep.csv`` in value order.

    Returns ``(exit_code, csv_path, rows)``.  ``l2_diff_prev`` is the L2
    distance between the final states of consecutive rows.
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ScenarioError([f"unknown sweep parameter {parameter!r}; use one of {SWEEP_PARAMETERS}"])
    values = list(values)
    out = Path(out_dir) if out_dir is not None else Path(scenario.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(scenario.raw, str(scenario.base_dir), parameter, v, str(out / f"{parameter}_{k:03d}"), backend)
             for k, v in enumerate(values)]
    jobs = max(1, int(jobs or os.environ.get("FITNESSFLOW_JOBS") or os.cpu_count() or 1))
    if jobs == 1 or len(tasks) == 1:
        results = [_sweep_child(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            results = list(pool.map(_sweep_child, tasks))
    rows = []
    prev = None
    for row, final in results:
        row["l2_diff_prev"] = math.nan
        if final is not None and prev is not None:
            try:
                ga = Grid(prev[0], prev[1], prev[2])
                gb = Grid(final[0], final[1], final[2])
                row["l2_diff_prev"] = l2_difference(ga, prev[3], gb, final[3])
            except FitnessFlowError:
                pass
        prev = final if final is not None else prev
        rows.append(row)
    path = out / "sweep.csv"
    with open(path, "w") as fh:
        fh.write(",".join(SWEEP_COLUMNS) + "\n")
        for row in rows:
            fh.write(_row_text(row) + "\n")
    manifest = {
        "version": __version__,
        "parameter": parameter,
        "values": [_fmt(v) if isinstance(v, float) else v for v in values],
        "runs": [Path(t[4]).name for t in tasks],
        "files": {"sweep.csv": hashlib.sha256(path.read_bytes()).hexdigest()},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    codes = [r["status"] for r in rows]
    code = EXIT_OK if all(c == EXIT_OK for c in codes) else EXIT_CHECK_FAILED
    return code, path, rows


def _build_parser():
    p = argparse.ArgumentParser(prog="fitnessflow", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb, help_ in (("check", "parse the scenario and print the model report"),
                        ("run", "run the scenario and its diagnostics"),
                        ("sweep", "run the scenario over a list of parameter values")):
        sp = sub.add_parser(verb, help=help_)
        sp.add_argument("--scenario", required=True, type=Path, help="scenario TOML file")
        sp.add_argument("-v", "--verbose", action="store_true")
        if verb != "check":
            sp.add_argument("--out", type=Path, default=None, help="output directory (default from scenario)")
            sp.add_argument("--backend", choices=("python", "cython"), default=None)
        if verb == "sweep":
            sp.add_argument("--param", required=True, choices=SWEEP_PARAMETERS)
            sp.add_argument("--values", required=True, help="comma-separated values ('inf', 'auto' allowed)")
            sp.add_argument("--jobs", type=int, default=None, help="worker processes (env FITNESSFLOW_JOBS)")
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        sc = load_scenario(args.scenario)
    except ScenarioError as exc:
        for e in exc.errors:
            print(f"{args.scenario}: {e}", file=sys.stderr)
        return EXIT_ERROR

    if args.verb == "check":
        try:
            rep = model_report(sc)
        except FitnessFlowError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_ERROR
        print(json.dumps(_jsonable(rep), indent=2, sort_keys=True))
        failed = ("am4" in sc.diagnostics.checks and not rep["am4"]["holds"]) or (
            "subcritical" in sc.diagnostics.checks and not rep["subcritical"])
        return EXIT_CHECK_FAILED if failed else EXIT_OK

    if args.backend is not None:
        from ._kernels import BACKENDS
        if args.backend not in BACKENDS:
            print(f"error: backend {args.backend!r} is not available", file=sys.stderr)
            return EXIT_ERROR

    if args.verb == "run":
        res = _execute(sc, args.out, args.backend)
        if res.report is not None:
            sys.stdout.write(res.report.summary())
        print(f"run directory: {res.run_dir}")
        return res.code

    try:
        values = [_parse_value(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        print(f"error: bad --values: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if not values:
        print("error: --values is empty", file=sys.stderr)
        return EXIT_ERROR
    code, path, rows = sweep(sc, args.param, values, args.out, args.jobs, args.backend)
    for row in rows:
        print(_row_text(row))
    print(f"sweep table: {path}")
    return code


if __name__ == "__main__":
    sys.exit(main())
