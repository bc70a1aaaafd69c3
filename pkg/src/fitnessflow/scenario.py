"""Scenario files: TOML text describing one run.

Grammar (every section except ``[model]`` is optional)::

    name = "hetero"

    [domain]
    length = 1.0            # or [Lx, Ly]
    cells = 128             # or [nx, ny]
    origin = 0.0            # or [x0, y0]

    [model]
    n_species = 2
    A = [[2, 1], [1, 2]]    # constant matrix, or {table = "a.csv"} (columns a_1_1 .. a_N_N)
    m = ["3 + sin(2*pi*x)", "3 + cos(2*pi*x)"]   # numbers / expressions, or {table = "m.csv"}
    kappa_tol = 1e-10

    [initial]
    u0 = [0.5, 0.5]         # like m, or "ideal_free", "extinction:{1}", "extinction:{1}+1e-3"

    [solver]                # SolverConfig fields; truncation_M may be "inf"
    t_end = 20.0
    dt = "auto"

    [diagnostics]
    checks = ["am4", "edi", "decay"]

    [output]
    dir = "runs/hetero"
    snapshots = "all"       # or "ends"

Expressions use the grammar of :mod:`fitnessflow.expr`.  Table paths are
relative to the scenario file.  Parsing collects every problem before
raising :class:`ScenarioError`.
"""
from __future__ import annotations

import copy
import math
import re
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import FitnessFlowError, ScenarioError
from .expr import ExpressionError, parse_expression
from .grid import Grid, read_field_csv
from .model import ExtinctionPattern, ProblemData, partial_extinction_state
from .solver import SolverConfig

__all__ = ["Scenario", "DiagnosticsSpec", "parse_scenario", "load_scenario", "SWEEP_PARAMETERS"]

CHECKS = ("am4", "subcritical", "stationary", "edi", "decay", "beckner", "grad", "oracle", "probe")
SWEEP_PARAMETERS = ("dt", "h", "delta", "M", "eta")

_SECTIONS = {
    "name": None,
    "domain": {"length", "cells", "origin"},
    "model": {"n_species", "A", "m", "kappa_tol"},
    "initial": {"u0"},
    "solver": {f.name for f in fields(SolverConfig)},
    "diagnostics": None,  # validated against DiagnosticsSpec
    "output": {"dir", "snapshots"},
}
_EXTINCTION = re.compile(r"^extinction:\{\s*(\d+(?:\s*,\s*\d+)*)?\s*\}\s*(?:\+\s*(\S+))?$")


@dataclass(frozen=True)
class DiagnosticsSpec:
    """Which checks a run performs and their tolerances."""

    checks: tuple = ("am4", "edi")
    edi_tol_scale: float = 10.0
    decay_window: tuple | None = None
    decay_r2_min: float = 0.99
    decay_drop: float = 1e-4
    oracle_tol: float = 1e-3
    stationary_tol: float = 1e-12
    probe_pattern: str = "{1}"
    probe_eta: float = 1e-3
    probe_window: float = 0.5

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class Scenario:
    """A validated scenario together with the objects built from it."""

    name: str
    grid: Grid
    data: ProblemData
    u0: np.ndarray
    solver: SolverConfig
    diagnostics: DiagnosticsSpec
    output_dir: Path
    snapshots: str = "all"
    raw: dict = field(default_factory=dict, repr=False)
    base_dir: Path = field(default=Path("."), repr=False)

    def with_param(self, parameter: str, value) -> "Scenario":
        """Copy with one sweep parameter replaced (see ``SWEEP_PARAMETERS``)."""
        if parameter not in SWEEP_PARAMETERS:
            raise ScenarioError([f"unknown sweep parameter {parameter!r}; use one of {SWEEP_PARAMETERS}"])
        raw = copy.deepcopy(self.raw)
        solver = raw.setdefault("solver", {})
        if parameter == "dt":
            solver["dt"] = value if value == "auto" else float(value)
        elif parameter == "delta":
            solver["delta"] = float(value)
        elif parameter == "M":
            solver["truncation_M"] = value if isinstance(value, str) else float(value)
        elif parameter == "h":
            lengths = self.grid.lengths
            raw.setdefault("domain", {})["cells"] = [int(round(L / float(value))) for L in lengths]
            raw["domain"]["length"] = list(lengths)
        elif parameter == "eta":
            u0 = raw.get("initial", {}).get("u0")
            if isinstance(u0, str) and u0.startswith("extinction:"):
                raw["initial"]["u0"] = u0.split("+")[0].strip() + f"+{float(value)!r}"
            raw.setdefault("diagnostics", {})["probe_eta"] = float(value)
        return _build(raw, self.base_dir)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ScenarioError([f"cannot read {path}: {exc}"]) from None
    return parse_scenario(text, base_dir=path.parent)


def parse_scenario(text: str, base_dir=".") -> Scenario:
    """Parse and validate scenario text; raises :class:`ScenarioError` listing all problems."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError([f"syntax error: {exc}"]) from None
    return _build(raw, Path(base_dir))


# -- building -----------------------------------------------------------------------


def _as_list(v, n=None):
    if isinstance(v, (list, tuple)):
        return list(v)
    return [v] * (n or 1)


def _number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _build_grid(sec, errs):
    dim = None
    length = sec.get("length", 1.0)
    cells = sec.get("cells", 64)
    lengths, ncells = _as_list(length), _as_list(cells)
    dim = max(len(lengths), len(ncells))
    lengths, ncells = _as_list(length, dim), _as_list(cells, dim)
    origin = _as_list(sec.get("origin", 0.0), dim)
    bad = False
    if not all(_number(v) and v > 0 for v in lengths):
        errs.append(f"domain.length must be positive numbers, got {length!r}")
        bad = True
    if not all(isinstance(v, int) and not isinstance(v, bool) for v in ncells):
        errs.append(f"domain.cells must be integers, got {cells!r}")
        bad = True
    if not all(_number(v) for v in origin):
        errs.append(f"domain.origin must be numbers, got {sec.get('origin')!r}")
        bad = True
    if len(lengths) != len(ncells) or len(origin) != dim:
        errs.append("domain.length, cells and origin must have the same dimension")
        bad = True
    if bad:
        return None
    try:
        return Grid.box(tuple(ncells), tuple(float(v) for v in lengths), tuple(float(v) for v in origin))
    except (FitnessFlowError, ValueError) as exc:
        errs.append(f"domain: {exc}")
        return None


def _table(spec, base_dir, grid, prefix, what, errs):
    path = spec.get("table")
    extra = set(spec) - {"table"}
    if extra:
        errs.append(f"{what}: unknown keys {sorted(extra)}")
    if not isinstance(path, str):
        errs.append(f"{what}: table must be a file path")
        return None
    full = base_dir / path
    if not full.is_file():
        errs.append(f"{what}: table file {full} does not exist")
        return None
    if grid is None:
        return None
    try:
        return read_field_csv(full, grid, prefix=prefix)
    except (FitnessFlowError, ValueError) as exc:
        errs.append(f"{what}: {exc}")
        return None


def _field(spec, n, grid, base_dir, what, errs, prefix="species_"):
    """Numbers, expressions or a table -> array (n, *extents)."""
    if isinstance(spec, dict):
        vals = _table(spec, base_dir, grid, prefix, what, errs)
        if vals is not None and vals.shape[0] != n:
            errs.append(f"{what}: table has {vals.shape[0]} columns, expected {n}")
            return None
        return vals
    scalar = not isinstance(spec, (list, tuple))
    items = [spec] if scalar else list(spec)
    if not scalar and len(items) != n:
        errs.append(f"{what}: expected {n} entries, got {len(items)}")
        return None
    parsed = []
    for k, item in enumerate(items):
        label = what if scalar else f"{what}[{k + 1}]"
        if _number(item):
            parsed.append(float(item))
        elif isinstance(item, str):
            try:
                parsed.append(parse_expression(item))
            except ExpressionError as exc:
                errs.append(f"{label}: {exc}")
                parsed.append(None)
        else:
            errs.append(f"{label}: expected a number or expression, got {item!r}")
            parsed.append(None)
    if scalar:
        parsed = parsed * n
    if grid is None or any(p is None for p in parsed):
        return None
    centers = grid.centers()
    out = np.empty((n,) + grid.extents)
    for k, p in enumerate(parsed):
        out[k] = p if isinstance(p, float) else p(*centers)
    if not np.all(np.isfinite(out)):
        errs.append(f"{what}: expressions produce non-finite values")
        return None
    return out


def _build_a(spec, n, grid, base_dir, errs):
    if isinstance(spec, dict):
        vals = _table(spec, base_dir, grid, "a_", "model.A", errs)
        if vals is None:
            return None
        if vals.shape[0] != n * n:
            errs.append(f"model.A: table has {vals.shape[0]} columns, expected {n * n}")
            return None
        return vals.reshape((n, n) + grid.extents)
    try:
        a = np.array(spec, dtype=float)
    except (TypeError, ValueError):
        errs.append(f"model.A must be an {n}x{n} matrix of numbers")
        return None
    if a.shape != (n, n):
        errs.append(f"model.A has shape {a.shape}, expected ({n}, {n})")
        return None
    asym = np.argwhere(a != a.T)
    if asym.size:
        i, j = asym[0]
        errs.append(f"model: a is not symmetric: a[{i + 1},{j + 1}]={a[i, j]:g} != a[{j + 1},{i + 1}]={a[j, i]:g}")
        return None
    return a


def _check_a_table_header(spec, n, base_dir, errs):
    """Table columns for A must be a_i_j in row-major order."""
    path = base_dir / spec.get("table", "")
    if not path.is_file():
        return
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    names = [h for h in header if h not in ("x", "y")]
    want = [f"a_{i}_{j}" for i in range(1, n + 1) for j in range(1, n + 1)]
    if names != want:
        errs.append(f"model.A: table columns must be {want}, got {names}")


def _parse_pattern(text, n, what, errs):
    m = re.fullmatch(r"\{\s*(\d+(?:\s*,\s*\d+)*)?\s*\}", text.strip())
    if not m:
        errs.append(f"{what}: pattern must look like {{1,2}}, got {text!r}")
        return None
    idx = [int(v) - 1 for v in m.group(1).split(",")] if m.group(1) else []
    if any(i < 0 or i >= n for i in idx):
        errs.append(f"{what}: species index out of range 1..{n} in {text!r}")
        return None
    return ExtinctionPattern.of(idx, n)


def _build_u0(spec, n, grid, data, base_dir, errs):
    if isinstance(spec, str) and spec.strip() == "ideal_free":
        return None if data is None else np.array(data.u_inf)
    if isinstance(spec, str) and spec.startswith("extinction:"):
        m = _EXTINCTION.match(spec.strip())
        if not m:
            errs.append(f"initial.u0: cannot parse {spec!r}; use extinction:{{i,..}} or extinction:{{i,..}}+eta")
            return None
        pattern = _parse_pattern("{" + (m.group(1) or "") + "}", n, "initial.u0", errs)
        eta = 0.0
        if m.group(2) is not None:
            try:
                eta = float(m.group(2))
            except ValueError:
                errs.append(f"initial.u0: eta {m.group(2)!r} is not a number")
                return None
            if not eta >= 0:
                errs.append(f"initial.u0: eta must be nonnegative, got {eta}")
                return None
        if pattern is None or data is None:
            return None
        try:
            u = partial_extinction_state(data, pattern)
        except FitnessFlowError as exc:
            errs.append(f"initial.u0: {exc}")
            return None
        u[list(pattern.extinct_sorted)] += eta
        return u
    u = _field(spec, n, grid, base_dir, "initial.u0", errs)
    if u is not None and np.any(u < 0):
        errs.append("initial.u0 must be nonnegative")
        return None
    return u


def _build_solver(sec, errs):
    known = {f.name for f in fields(SolverConfig)}
    kw = {k: v for k, v in sec.items() if k in known}
    if "t_end" not in kw:
        errs.append("solver.t_end is required")
        return None
    if kw.get("truncation_M") in ("inf", "infinity"):
        kw["truncation_M"] = math.inf
    if isinstance(kw.get("dt"), str) and kw["dt"] != "auto":
        errs.append(f"solver.dt must be a positive number or 'auto', got {kw['dt']!r}")
        return None
    try:
        return SolverConfig(**kw)
    except (TypeError, ValueError) as exc:
        for part in str(exc).split("; "):
            errs.append(f"solver: {part}")
        return None


def _build_diagnostics(sec, n, errs):
    known = {f.name for f in fields(DiagnosticsSpec)}
    unknown = set(sec) - known
    for k in sorted(unknown):
        errs.append(f"unknown key diagnostics.{k}")
    kw = {k: v for k, v in sec.items() if k in known}
    checks = kw.get("checks", DiagnosticsSpec.checks)
    if not isinstance(checks, (list, tuple)) or not all(c in CHECKS for c in checks):
        errs.append(f"diagnostics.checks must be a list drawn from {CHECKS}, got {checks!r}")
        checks = ()
    kw["checks"] = tuple(checks)
    win = kw.get("decay_window")
    if win is not None:
        if not (isinstance(win, list) and len(win) == 2 and all(_number(v) for v in win) and win[0] < win[1]):
            errs.append(f"diagnostics.decay_window must be [t0, t1] with t0 < t1, got {win!r}")
        else:
            kw["decay_window"] = (float(win[0]), float(win[1]))
    for key in ("edi_tol_scale", "decay_r2_min", "decay_drop", "oracle_tol", "stationary_tol",
                "probe_eta", "probe_window"):
        if key in kw and not (_number(kw[key]) and kw[key] >= 0):
            errs.append(f"diagnostics.{key} must be a nonnegative number, got {kw[key]!r}")
    if "probe" in kw["checks"] and n is not None:
        _parse_pattern(str(kw.get("probe_pattern", DiagnosticsSpec.probe_pattern)), n,
                       "diagnostics.probe_pattern", errs)
    return DiagnosticsSpec(**kw)


def _build(raw: dict, base_dir: Path) -> Scenario:
    errs: list[str] = []
    for key in sorted(set(raw) - set(_SECTIONS)):
        errs.append(f"unknown key {key!r}")
    for sec, allowed in _SECTIONS.items():
        if allowed is None or sec not in raw:
            continue
        if not isinstance(raw[sec], dict):
            errs.append(f"[{sec}] must be a table")
            continue
        for key in sorted(set(raw[sec]) - allowed):
            errs.append(f"unknown key {sec}.{key}")
    name = raw.get("name", "scenario")
    if not isinstance(name, str) or not re.fullmatch(r"[A-Za-z0-9_.\-]+", name):
        errs.append(f"name must be a simple identifier, got {name!r}")
        name = "scenario"

    section = {s: raw.get(s, {}) if isinstance(raw.get(s, {}), dict) else {} for s in _SECTIONS if s != "name"}
    grid = _build_grid(section["domain"], errs)

    model = section["model"]
    n = model.get("n_species")
    if not (isinstance(n, int) and not isinstance(n, bool) and n >= 1):
        errs.append(f"model.n_species must be a positive integer, got {n!r}")
        n = None
    data = None
    if n is not None:
        if "A" not in model:
            errs.append("model.A is required")
        if "m" not in model:
            errs.append("model.m is required")
        a = _build_a(model["A"], n, grid, base_dir, errs) if "A" in model else None
        if isinstance(model.get("A"), dict):
            _check_a_table_header(model["A"], n, base_dir, errs)
        m = _field(model["m"], n, grid, base_dir, "model.m", errs, prefix="m_") if "m" in model else None
        kappa_tol = model.get("kappa_tol", 1e-10)
        if not (_number(kappa_tol) and kappa_tol >= 0):
            errs.append(f"model.kappa_tol must be a nonnegative number, got {kappa_tol!r}")
        elif a is not None and m is not None and grid is not None:
            try:
                data = ProblemData.on_grid(grid, a, m, kappa_tol=float(kappa_tol))
            except FitnessFlowError as exc:
                errs.append(f"model: {exc}")

    u0 = None
    if "u0" not in section["initial"]:
        errs.append("initial.u0 is required")
    elif n is not None:
        u0 = _build_u0(section["initial"]["u0"], n, grid, data, base_dir, errs)

    solver = _build_solver(section["solver"], errs)
    diags = _build_diagnostics(section["diagnostics"], n, errs)

    out = section["output"]
    out_dir = out.get("dir", f"runs/{name}")
    if not isinstance(out_dir, str):
        errs.append("output.dir must be a path")
        out_dir = f"runs/{name}"
    snaps = out.get("snapshots", "all")
    if snaps not in ("all", "ends"):
        errs.append(f"output.snapshots must be 'all' or 'ends', got {snaps!r}")

    if errs:
        raise ScenarioError(errs)
    return Scenario(
        name=name,
        grid=grid,
        data=data,
        u0=u0,
        solver=solver,
        diagnostics=diags,
        output_dir=base_dir / out_dir,
        snapshots=snaps,
        raw=raw,
        base_dir=base_dir,
    )
