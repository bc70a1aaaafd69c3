"""Explicit upwind finite-volume time integration.

One step for species ``i`` reads::

    u_i' = u_i + dt * ( -div(upwind(min(u_i, M), grad f_i)) + R_i + delta * lap(u_i) )

with ``R_i = min(u_i, M) f_i`` (explicit) or its Patankar form in which the
negative part is taken proportionally to the updated density.  Boundary
faces carry no flux.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._kernels import get_advance
from .errors import ContractViolation, SolverError
from .functionals import FunctionalValues, csv_header, evaluate
from .grid import Grid, _fmt, write_field_csv
from .model import ProblemData, _as_stack, _check_state

__all__ = [
    "SolverConfig",
    "Trajectory",
    "step",
    "run",
    "stability_bound",
    "auto_timestep",
    "write_run",
]

REACTION_SCHEMES = ("explicit", "patankar")


@dataclass(frozen=True)
class SolverConfig:
    """Time-stepping parameters.

    ``dt`` is a positive number or ``"auto"``; in auto mode each step uses
    ``cfl_safety`` over the positivity bound plus the explicit
    cross-diffusion limit, never more than ``dt_cap``.
    """

    t_end: float
    dt: float | str = "auto"
    cfl_safety: float = 0.45
    delta: float = 0.0
    truncation_M: float = math.inf
    reaction_scheme: str = "explicit"
    snapshot_stride: int = 1
    dt_cap: float = 0.05

    def __post_init__(self):
        errs = []
        if not (self.dt == "auto" or (isinstance(self.dt, (int, float)) and self.dt > 0)):
            errs.append(f"dt must be positive or 'auto', got {self.dt!r}")
        if not (self.t_end > 0 and math.isfinite(self.t_end)):
            errs.append(f"t_end must be positive and finite, got {self.t_end!r}")
        if not 0 < self.cfl_safety <= 1:
            errs.append(f"cfl_safety must lie in (0, 1], got {self.cfl_safety!r}")
        if not self.delta >= 0:
            errs.append(f"delta must be nonnegative, got {self.delta!r}")
        if not self.truncation_M > 0:
            errs.append(f"truncation_M must be positive, got {self.truncation_M!r}")
        if self.reaction_scheme not in REACTION_SCHEMES:
            errs.append(f"reaction_scheme must be one of {REACTION_SCHEMES}")
        if not (isinstance(self.snapshot_stride, int) and self.snapshot_stride >= 1):
            errs.append(f"snapshot_stride must be a positive integer, got {self.snapshot_stride!r}")
        if not self.dt_cap > 0:
            errs.append(f"dt_cap must be positive, got {self.dt_cap!r}")
        if errs:
            raise ValueError("; ".join(errs))

    @property
    def fixed_dt(self) -> float:
        """``dt`` as a float, 0.0 in auto mode (the kernels' convention)."""
        return 0.0 if self.dt == "auto" else float(self.dt)

    def to_dict(self):
        d = asdict(self)
        d["truncation_M"] = "inf" if math.isinf(self.truncation_M) else self.truncation_M
        return d

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _kernel_arrays(data: ProblemData, grid: Grid, u):
    """Contiguous ``(N, ncells)`` copies of ``u`` and ``m``, ``a`` as ``(N, N, 1 or ncells)``."""
    n = data.n_species
    u2 = np.array(u, dtype=float, order="C").reshape(n, -1)
    a3 = np.ascontiguousarray(data.a.reshape(n, n, -1))
    m2 = np.ascontiguousarray(data.m).reshape(n, -1)
    return u2, a3, m2


def _check_input(data: ProblemData, grid: Grid, u) -> np.ndarray:
    data.check_grid(grid)
    u = _check_state(data, u)
    if not np.all(np.isfinite(u)):
        raise ContractViolation("state contains NaN or Inf")
    if np.any(u < 0):
        raise ContractViolation(f"state must be nonnegative (min {u.min():.3g})")
    return u


def _parts(data: ProblemData, grid: Grid, u, config: SolverConfig):
    """Maxima entering the time-step bounds: ``(S_pos, S_diff)``."""
    from .grid import face_gradient
    from .model import fitness

    f = fitness(data, u)
    gmax = max(float(np.max(np.abs(g))) / h for g, h in zip(face_gradient(grid, f), grid.spacing))
    fneg = max(0.0, float(np.max(-f)))
    inv_h2 = sum(1.0 / h**2 for h in grid.spacing)
    s_pos = gmax * 2 * grid.dim + fneg + 2.0 * config.delta * inv_h2
    rowsum = np.abs(_as_stack(data.a)).sum(axis=2)  # (cells or 1, N)
    ut = np.minimum(u, config.truncation_M).reshape(data.n_species, -1).T
    s_diff = 2.0 * float(np.max(ut * rowsum)) * inv_h2
    return s_pos, s_diff


def stability_bound(data: ProblemData, grid: Grid, u, config: SolverConfig) -> float:
    """Largest ``dt`` keeping the explicit update nonnegative, times ``cfl_safety``.

    ``cfl_safety / (2d max|grad f_i|/h + max (f_i)_- + 2 delta sum 1/h^2)``,
    ``inf`` when every term vanishes.
    """
    u = _check_input(data, grid, u)
    s_pos, _ = _parts(data, grid, u, config)
    return math.inf if s_pos == 0 else config.cfl_safety / s_pos


def auto_timestep(data: ProblemData, grid: Grid, u, config: SolverConfig) -> float:
    """The step size used in auto mode.

    Adds the explicit-diffusion limit of the cross-diffusion part
    ``div(u~_i sum_j a_ij grad u_j)`` (spectral radius bounded by
    ``max u~_i sum_j |a_ij|``) to the positivity bound; capped at ``dt_cap``.
    """
    u = _check_input(data, grid, u)
    s_pos, s_diff = _parts(data, grid, u, config)
    s = s_pos + s_diff
    return min(config.dt_cap, math.inf if s == 0 else config.cfl_safety / s)


def _advance(grid, arrays, t, t_end, n_steps, config, backend, reaction_out=None):
    u2, a3, m2 = arrays
    nx, ny = grid.extents if grid.dim == 2 else (grid.extents[0], 1)
    hx = grid.spacing[0]
    hy = grid.spacing[1] if grid.dim == 2 else 1.0
    status, t_new, k, d_int, d_end, dt = get_advance(backend)(
        u2, a3, m2, nx, ny, hx, hy, grid.dim, grid.cell_volume, float(t), float(t_end), int(n_steps),
        config.fixed_dt, config.cfl_safety, config.delta, float(config.truncation_M),
        config.reaction_scheme == "patankar", config.dt_cap, reaction_out,
    )
    if status == 1:
        raise SolverError(f"fixed dt={config.fixed_dt!r} exceeds the positivity bound", time=t_new)
    if status == 2:
        raise SolverError("non-finite value in update", time=t_new)
    return t_new, k, d_int, d_end, dt


def step(data: ProblemData, grid: Grid, u, config: SolverConfig, dt=None,
         return_reaction=False, backend=None):
    """One time step; returns the new state (and the applied reaction rate).

    ``dt`` overrides the configured step size.  The applied reaction is
    the per-cell rate that makes ``u' - u = dt * (transport + reaction)``
    hold as computed, which for the Patankar scheme involves ``u'``.
    """
    u = _check_input(data, grid, u)
    if dt is not None:
        config = SolverConfig(**{**asdict(config), "dt": float(dt), "t_end": max(float(dt), config.t_end)})
    arrays = _kernel_arrays(data, grid, u)
    react = np.zeros_like(arrays[0]) if return_reaction else None
    t_end = config.fixed_dt if config.dt != "auto" else math.inf
    _advance(grid, arrays, 0.0, t_end, 1, config, backend, react)
    out = arrays[0].reshape(u.shape)
    if return_reaction:
        return out, react.reshape(u.shape)
    return out


@dataclass
class Trajectory:
    """Snapshots of a run with their functionals.

    ``dissipation_integral[k]`` is the step-resolved trapezoid sum of the
    dissipation from ``times[0]`` to ``times[k]``; ``steps[k]`` the step
    count and ``dts[k]`` the last step size before snapshot ``k``.
    """

    grid: Grid
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    functionals: list = field(default_factory=list)
    dissipation_integral: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    dts: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    data_fingerprint: str = ""
    config_fingerprint: str = ""
    backend: str = ""

    def append(self, t, u, fv: FunctionalValues, d_int, n_steps, dt):
        if self.times and not t > self.times[-1]:
            raise SolverError("snapshot times must increase", time=t)
        self.times.append(float(t))
        self.states.append(u)
        self.functionals.append(fv)
        self.dissipation_integral.append(float(d_int))
        self.steps.append(int(n_steps))
        self.dts.append(float(dt))

    def __len__(self):
        return len(self.times)

    @property
    def energies(self) -> np.ndarray:
        return np.array([fv.entropy for fv in self.functionals])

    @property
    def dissipations(self) -> np.ndarray:
        return np.array([fv.dissipation for fv in self.functionals])

    def series(self, name) -> np.ndarray:
        return np.array([getattr(fv, name) for fv in self.functionals])

    def at(self, t) -> np.ndarray:
        """State of the snapshot nearest to ``t``."""
        k = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        return self.states[k]


def run(data: ProblemData, grid: Grid, u0, config: SolverConfig, backend=None,
        keep_states=True) -> Trajectory:
    """Integrate from ``u0`` to ``config.t_end``.

    Snapshots are taken at the start, every ``snapshot_stride`` steps and
    at the end.  With ``keep_states=False`` only the first and last states
    are stored (functionals are kept for every snapshot).
    """
    from ._kernels import BACKEND

    u0 = _check_input(data, grid, u0)
    arrays = _kernel_arrays(data, grid, u0)
    traj = Trajectory(
        grid=grid,
        config=config.to_dict(),
        data_fingerprint=data.fingerprint(),
        config_fingerprint=config.fingerprint(),
        backend=backend or BACKEND,
    )
    t = 0.0
    steps = 0
    d_cum = 0.0
    traj.append(t, u0.copy(), evaluate(data, grid, u0, t), d_cum, steps, 0.0)
    while t < config.t_end:
        t, k, d_int, _, dt = _advance(grid, arrays, t, config.t_end, config.snapshot_stride, config, backend)
        if k == 0:
            break
        steps += k
        d_cum += d_int
        u = arrays[0].reshape(u0.shape).copy()
        if not keep_states and len(traj.states) > 1:
            traj.states[-1] = None
        try:
            fv = evaluate(data, grid, u, t)
        except Exception as exc:  # attach the failing time
            raise SolverError(f"{type(exc).__name__}: {exc}", time=t) from exc
        traj.append(t, u, fv, d_cum, steps, dt)
    return traj


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_functionals_csv(path, trajectory: Trajectory, n_species) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(csv_header(n_species)) + "\n")
        for fv in trajectory.functionals:
            fh.write(",".join(_fmt(v) for v in fv.row()) + "\n")


def write_run(out_dir, trajectory: Trajectory, data: ProblemData, extra_files=(), extra=None) -> Path:
    """Persist a trajectory as CSVs plus a JSON manifest with content hashes.

    ``extra_files`` are paths (relative to ``out_dir``) already written by
    the caller that should also be listed in the manifest.
    """
    out = Path(out_dir)
    (out / "snapshots").mkdir(parents=True, exist_ok=True)
    files = ["functionals.csv"]
    write_functionals_csv(out / "functionals.csv", trajectory, data.n_species)
    for k, (t, u) in enumerate(zip(trajectory.times, trajectory.states)):
        if u is None:
            continue
        name = f"snapshots/snapshot_{k:06d}.csv"
        write_field_csv(out / name, trajectory.grid, u)
        files.append(name)
    files.extend(extra_files)
    manifest = {
        "version": __version__,
        "backend": trajectory.backend,
        "config": trajectory.config,
        "config_fingerprint": trajectory.config_fingerprint,
        "data_fingerprint": trajectory.data_fingerprint,
        "grid": {"extents": list(trajectory.grid.extents), "spacing": list(trajectory.grid.spacing),
                 "origin": list(trajectory.grid.origin)},
        "n_snapshots": len(trajectory),
        "steps": trajectory.steps[-1] if trajectory.steps else 0,
        "snapshot_times": [_fmt(t) for t in trajectory.times],
        "files": {name: _sha256(out / name) for name in files},
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out
