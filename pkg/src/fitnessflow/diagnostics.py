"""Post-processing checks on trajectories.

Every check returns a small result object; :class:`DiagnosticsReport`
collects them for one run and serializes to JSON.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DimensionError, FitnessFlowError, SolverError
from .functionals import beckner_ratio
from .grid import Grid, integrate
from .model import ExtinctionPattern, ProblemData, check_am4, fitness, partial_extinction_state

__all__ = [
    "DiagnosticsReport",
    "EdiResult",
    "DecayFit",
    "GradAudit",
    "ProbeReport",
    "RefinementTable",
    "verify_edi",
    "beckner_sup",
    "fit_decay_rate",
    "ode_oracle",
    "grad_estimate_audit",
    "extinction_instability_probe",
    "refinement_study",
    "l2_difference",
]

ORACLE_RTOL = 1e-10
FLOOR_REL = float(np.finfo(float).eps)


def _series(trajectory, name):
    return np.array([getattr(fv, name) for fv in trajectory.functionals], dtype=float)


# -- entropy-dissipation inequality -------------------------------------------------


@dataclass
class EdiResult:
    times: np.ndarray
    residuals: np.ndarray
    tolerances: np.ndarray
    passed: bool
    worst: int | None

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.residuals))) if self.residuals.size else 0.0

    def to_dict(self):
        return {
            "residuals": [float(r) for r in self.residuals],
            "interval_starts": [float(t) for t in self.times],
            "max_abs_residual": self.max_abs,
            "passed": self.passed,
            "worst_interval": self.worst,
        }


def verify_edi(trajectory, tol_scale=10.0) -> EdiResult:
    """Residual ``E(t0) - E(t1) - int D`` on each snapshot interval.

    The dissipation integral is the solver's step-resolved trapezoid sum
    when recorded, else the trapezoid over the two snapshots.  An interval
    passes when ``r >= -tol_scale * (t1 - t0 + h^2) * (1 + E(t0))``.
    """
    t = np.asarray(trajectory.times, dtype=float)
    if t.size < 2:
        raise FitnessFlowError("verify_edi needs at least 2 snapshots")
    E = _series(trajectory, "entropy")
    cum = getattr(trajectory, "dissipation_integral", None)
    if cum is not None and len(cum) == t.size:
        dint = np.diff(np.asarray(cum, dtype=float))
    else:
        D = _series(trajectory, "dissipation")
        dint = 0.5 * np.diff(t) * (D[1:] + D[:-1])
    h2 = max(trajectory.grid.spacing) ** 2
    r = E[:-1] - E[1:] - dint
    tol = tol_scale * (np.diff(t) + h2) * (1.0 + E[:-1])
    bad = np.flatnonzero(r < -tol)
    worst = int(np.argmin(r + tol)) if bad.size else None
    return EdiResult(t[:-1], r, tol, bool(bad.size == 0), worst)


def beckner_sup(data: ProblemData, trajectory):
    """Largest Beckner ratio over the stored states, or None if none is defined."""
    vals = [
        beckner_ratio(data, trajectory.grid, u)
        for u in trajectory.states
        if u is not None
    ]
    vals = [v for v in vals if v is not None]
    return max(vals) if vals else None


# -- exponential decay --------------------------------------------------------------


@dataclass
class DecayFit:
    gamma: float
    r2: float
    window: tuple[float, float]
    n_points: int
    floor_time: float | None = None

    def to_dict(self):
        return {
            "gamma": self.gamma,
            "r2": self.r2,
            "window": list(self.window),
            "n_points": self.n_points,
            "floor_time": self.floor_time,
        }


def fit_decay_rate(trajectory, window=None, floor_rel=FLOOR_REL) -> DecayFit:
    """Least-squares slope of ``log E`` over ``window``; ``gamma = -slope``.

    ``trajectory`` may also be a pair ``(times, entropies)``.  The default
    window drops the first 20% of the run.  Once ``E`` falls to
    ``floor_rel * max(E)`` or below (zero included) the remaining points are
    excluded and the first such time is reported as ``floor_time``.
    """
    if isinstance(trajectory, tuple):
        t, E = (np.asarray(v, dtype=float) for v in trajectory)
    else:
        t, E = np.asarray(trajectory.times, dtype=float), _series(trajectory, "entropy")
    if window is None:
        window = (t[0] + 0.2 * (t[-1] - t[0]), t[-1])
    lo, hi = window
    inside = (t >= lo) & (t <= hi)
    floor = floor_rel * float(np.max(E)) if E.size else 0.0
    below = inside & (E <= floor)
    floor_time = None
    if below.any():
        floor_time = float(t[np.argmax(below)])
        inside &= t < floor_time
    if inside.sum() < 3:
        return DecayFit(math.nan, math.nan, (float(lo), float(hi)), int(inside.sum()), floor_time)
    x, y = t[inside], np.log(E[inside])
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        return DecayFit(0.0, 1.0, (float(lo), float(hi)), int(inside.sum()), floor_time)
    slope, icpt = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (slope * x + icpt)) ** 2))
    r2 = 1.0 - ss_res / ss_tot
    return DecayFit(float(-slope), r2, (float(lo), float(hi)), int(inside.sum()), floor_time)


# -- ODE oracle ---------------------------------------------------------------------


def _constant_coefficients(data):
    if isinstance(data, ProblemData):
        a, m = data.a, data.m
        flat_m = m.reshape(m.shape[0], -1)
        if not np.all(flat_m == flat_m[:, :1]):
            raise DimensionError("ode_oracle needs spatially constant m")
        if a.ndim > 2:
            flat_a = a.reshape(a.shape[0], a.shape[1], -1)
            if not np.all(flat_a == flat_a[:, :, :1]):
                raise DimensionError("ode_oracle needs spatially constant a")
            a = flat_a[:, :, 0]
        return np.asarray(a, dtype=float), flat_m[:, 0].astype(float)
    a, m = data
    return np.asarray(a, dtype=float), np.asarray(m, dtype=float)


def ode_oracle(data, u0, t_end, rtol=ORACLE_RTOL, times=None, blowup=1e12):
    """Integrate ``du_i/dt = u_i (m_i - (a u)_i)`` with an embedded Runge-Kutta pair.

    ``data`` is a spatially constant :class:`ProblemData` or a pair
    ``(a, m)``.  Returns the state at ``t_end``, or at each of ``times``.
    """
    if rtol > ORACLE_RTOL:
        raise ValueError(f"oracle tolerance must be <= {ORACLE_RTOL}")
    a, m = _constant_coefficients(data)
    u0 = np.asarray(u0, dtype=float)

    def rhs(_, u):
        return u * (m - a @ u)

    def blew_up(_, u):
        return blowup - np.max(np.abs(u))

    blew_up.terminal = True
    sol = solve_ivp(rhs, (0.0, float(t_end)), u0, method="DOP853", rtol=rtol,
                    atol=rtol * 1e-4, t_eval=times, events=blew_up)
    if sol.status == 1:
        raise SolverError("ODE solution blew up", time=float(sol.t_events[0][0]))
    if not sol.success:
        raise SolverError(f"ODE integration failed: {sol.message}", time=float(sol.t[-1]))
    return sol.y[:, -1] if times is None else sol.y.T


# -- gradient estimate --------------------------------------------------------------


@dataclass
class GradAudit:
    times: np.ndarray
    cumulative: np.ndarray
    c_fit: float
    slope_early: float
    slope_late: float
    passed: bool

    def to_dict(self):
        return {
            "cumulative_final": float(self.cumulative[-1]),
            "c_fit": self.c_fit,
            "slope_third_quarter": self.slope_early,
            "slope_last_quarter": self.slope_late,
            "passed": self.passed,
        }


def _slope(x, y):
    if x.size < 2 or np.ptp(x) == 0:
        return 0.0
    return float(np.polyfit(x, y, 1)[0])


def grad_estimate_audit(trajectory, rtol=0.05) -> GradAudit:
    """Cumulative ``int_0^T int |grad u|^2`` and a linear-growth check.

    ``c_fit`` is the smallest constant with ``G(T) <= c_fit (1 + T)`` that
    also covers the late growth rate.  The second half of the run is split
    in two; the audit fails when the slope of ``G`` over the last quarter
    exceeds that over the third quarter by more than ``rtol`` (plus
    roundoff slack), i.e. when the growth is still accelerating.
    ``trajectory`` may also be a pair ``(times, grad_u_l2)``.
    """
    if isinstance(trajectory, tuple):
        t, g = (np.asarray(v, dtype=float) for v in trajectory)
    else:
        t, g = np.asarray(trajectory.times, dtype=float), _series(trajectory, "grad_u_l2")
    if t.size < 2:
        raise FitnessFlowError("grad_estimate_audit needs at least 2 snapshots")
    cum = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(t) * (g[1:] + g[:-1]))])
    T = t - t[0]
    third = (T >= 0.5 * T[-1]) & (T <= 0.75 * T[-1])
    last = T >= 0.75 * T[-1]
    s_early, s_late = _slope(T[third], cum[third]), _slope(T[last], cum[last])
    c_fit = max(float(np.max(cum / (1.0 + T))), s_late, 0.0)
    slack = 1e-12 * (1.0 + float(np.max(np.abs(cum)))) / max(T[-1], 1e-300)
    passed = bool(s_late <= max(s_early, 0.0) * (1.0 + rtol) + slack)
    return GradAudit(t, cum, c_fit, s_early, s_late, passed)


# -- extinction instability ---------------------------------------------------------


@dataclass
class ProbeReport:
    pattern: str
    eta: float
    am4_holds: bool
    min_reintroduced_fitness: float
    fitness_positive: bool
    times: np.ndarray
    masses: np.ndarray  # (snapshots, |I|)
    mass_increasing: bool

    @property
    def passed(self) -> bool:
        return self.fitness_positive and self.mass_increasing

    def to_dict(self):
        return {
            "pattern": self.pattern,
            "eta": self.eta,
            "am4_holds": self.am4_holds,
            "min_reintroduced_fitness": self.min_reintroduced_fitness,
            "fitness_positive": self.fitness_positive,
            "mass_increasing": self.mass_increasing,
            "passed": self.passed,
        }


def extinction_instability_probe(data: ProblemData, grid: Grid, pattern: ExtinctionPattern,
                                 eta, t_window=0.5, config=None, backend=None) -> ProbeReport:
    """Reintroduce ``eta`` of the extinct species at an extinction state.

    Reports whether their fitness is positive in every cell at ``t = 0``
    and whether their masses increase strictly over ``[0, t_window]``.
    """
    from .solver import SolverConfig, run

    u0 = partial_extinction_state(data, pattern, strict=False)
    ext = list(pattern.extinct_sorted)
    u0[ext] += eta
    f = fitness(data, u0)
    fmin = float(f[ext].min()) if ext else math.inf
    if config is None:
        config = SolverConfig(t_end=t_window, snapshot_stride=50)
    elif config.t_end != t_window:
        config = SolverConfig(**{**config.__dict__, "t_end": t_window})
    traj = run(data, grid, u0, config, backend=backend, keep_states=False)
    masses = np.array([fv.masses[ext] for fv in traj.functionals]).reshape(len(traj), len(ext))
    increasing = bool(len(ext) > 0 and np.all(np.diff(masses, axis=0) > 0))
    return ProbeReport(
        pattern=str(pattern),
        eta=float(eta),
        am4_holds=check_am4(data).holds,
        min_reintroduced_fitness=fmin,
        fitness_positive=bool(fmin > 0),
        times=np.asarray(traj.times),
        masses=masses,
        mass_increasing=increasing,
    )


# -- refinement -----------------------------------------------------------------------


def _restrict(grid_f: Grid, u_f, grid_c: Grid):
    """Average a fine-grid field onto a coarser grid whose extents divide it."""
    ratios = []
    for nf, nc in zip(grid_f.extents, grid_c.extents):
        if nf % nc:
            raise DimensionError(f"cannot restrict {grid_f.extents} onto {grid_c.extents}")
        ratios.append(nf // nc)
    lead = u_f.shape[: u_f.ndim - grid_f.dim]
    shape = list(lead)
    for nc, r in zip(grid_c.extents, ratios):
        shape += [nc, r]
    axes = tuple(len(lead) + 2 * k + 1 for k in range(grid_f.dim))
    return u_f.reshape(shape).mean(axis=axes)


def l2_difference(grid_a: Grid, u_a, grid_b: Grid, u_b) -> float:
    """L2 norm of ``u_a - u_b``, restricting the finer field onto the coarser grid."""
    if grid_a.extents != grid_b.extents:
        if grid_a.n_cells > grid_b.n_cells:
            u_a, grid_a = _restrict(grid_a, u_a, grid_b), grid_b
        else:
            u_b = _restrict(grid_b, u_b, grid_a)
    diff = np.asarray(u_a) - np.asarray(u_b)
    return math.sqrt(float(np.sum(integrate(grid_a, diff * diff))))


@dataclass
class RefinementTable:
    parameter: str
    values: list
    diffs: list
    orders: list
    monotone: bool
    flags: list = field(default_factory=list)

    def to_dict(self):
        return {
            "parameter": self.parameter,
            "values": [float(v) for v in self.values],
            "diffs": self.diffs,
            "orders": self.orders,
            "monotone": self.monotone,
            "flags": self.flags,
        }


def refinement_study(simulate, values, parameter="dt") -> RefinementTable:
    """Successive L2 differences of final states over a parameter sequence.

    ``simulate(value)`` returns ``(grid, state)``.  ``diffs[k]`` compares
    levels ``k`` and ``k + 1``; ``orders[k] = log(diffs[k] / diffs[k+1]) /
    log(values[k] / values[k+1])`` (NaN when undefined, e.g. infinite values).
    A difference that grows, or stays equal without being zero, is flagged;
    consecutive zero differences mean the levels already agree exactly.
    """
    values = list(values)
    if len(values) < 3:
        raise ValueError("refinement_study needs at least 3 levels")
    results = [simulate(v) for v in values]
    diffs = [
        l2_difference(results[k][0], results[k][1], results[k + 1][0], results[k + 1][1])
        for k in range(len(values) - 1)
    ]
    orders = []
    for k in range(len(diffs) - 1):
        v0, v1 = float(values[k]), float(values[k + 1])
        ok = all(map(math.isfinite, (v0, v1))) and v0 > 0 and v1 > 0 and v0 != v1
        ok = ok and diffs[k] > 0 and diffs[k + 1] > 0
        orders.append(math.log(diffs[k] / diffs[k + 1]) / math.log(v0 / v1) if ok else math.nan)
    flags = [
        f"non-monotone: diff[{k + 1}]={diffs[k + 1]:.3e} >= diff[{k}]={diffs[k]:.3e}"
        for k in range(len(diffs) - 1)
        if diffs[k + 1] > diffs[k] or (diffs[k + 1] == diffs[k] and diffs[k] > 0)
    ]
    return RefinementTable(parameter, values, diffs, orders, not flags, flags)


# -- report -------------------------------------------------------------------------


@dataclass
class DiagnosticsReport:
    """Results of the checks selected for one run; flags are append-only."""

    edi_residuals: list | None = None
    gamma_fit: dict | None = None
    oracle_error: float | None = None
    beckner_sup: float | None = None
    grad_bound: dict | None = None
    flags: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def flag(self, prop, time=None, detail=""):
        self.flags.append({"property": prop, "time": time, "detail": detail})

    @property
    def passed(self) -> bool:
        return not self.flags

    def to_dict(self):
        return {
            "edi_residuals": self.edi_residuals,
            "gamma_fit": self.gamma_fit,
            "oracle_error": self.oracle_error,
            "beckner_sup": self.beckner_sup,
            "grad_bound": self.grad_bound,
            "flags": self.flags,
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True) + "\n"

    def summary(self) -> str:
        lines = []
        if self.edi_residuals is not None:
            worst = min(self.edi_residuals) if self.edi_residuals else 0.0
            lines.append(f"EDI: {len(self.edi_residuals)} intervals, min residual {worst:.3e}")
        if self.gamma_fit is not None:
            g = self.gamma_fit
            lines.append(f"decay: gamma={g['gamma']:.6g} R2={g['r2']:.6f} window={g['window']}")
        if self.oracle_error is not None:
            lines.append(f"ODE oracle: relative error {self.oracle_error:.3e}")
        if self.beckner_sup is not None:
            lines.append(f"Beckner ratio sup: {self.beckner_sup:.6g}")
        if self.grad_bound is not None:
            lines.append(
                f"gradient estimate: cumulative {self.grad_bound['cumulative_final']:.6g}, "
                f"C_fit {self.grad_bound['c_fit']:.6g}"
            )
        for key in sorted(self.extra):
            if isinstance(self.extra[key], dict) and "passed" in self.extra[key]:
                lines.append(f"{key}: {'pass' if self.extra[key]['passed'] else 'FAIL'}")
        lines.append("status: " + ("PASS" if self.passed else f"FAIL ({len(self.flags)} flags)"))
        for fl in self.flags:
            lines.append(f"  flag {fl['property']} at t={fl['time']}: {fl['detail']}")
        return "\n".join(lines) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj
