"""Entropy, dissipation and the other gradient-flow functionals.

All integrals use the midpoint rule of :func:`fitnessflow.grid.integrate`.
Face integrals weight each interior face by one cell volume.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConsistencyError, ContractViolation, FitnessFlowError
from .grid import Grid, face_gradient, integrate
from .model import ProblemData, _check_state, fitness, matvec, solve_cells

__all__ = [
    "FunctionalValues",
    "entropy",
    "entropy_forms",
    "dissipation",
    "boltzmann",
    "beckner_ratio",
    "fitness_l2",
    "grad_u_l2",
    "evaluate",
    "trajectory_action",
    "csv_header",
]

ENTROPY_RTOL = 1e-9


def _nonneg(u, what):
    if np.any(u < 0):
        raise ContractViolation(f"{what} requires u >= 0 (min {u.min():.3g})")


def _face_sum(grid: Grid, faces) -> float:
    return sum(float(np.sum(F)) for F in faces) * grid.cell_volume


def entropy_forms(data: ProblemData, grid: Grid, u) -> tuple[float, float, float]:
    """The three equivalent expressions of the entropy.

    ``1/2 int a(u - u_inf).(u - u_inf)``, ``1/2 int a^{-1} f.f`` and
    ``1/2 int (u_inf - u).f``.
    """
    u = _check_state(data, u)
    data.check_grid(grid)
    uinf = data.u_inf
    d = u - uinf
    f = fitness(data, u)
    e1 = 0.5 * float(np.sum(integrate(grid, d * matvec(data.a, d))))
    e2 = 0.5 * float(np.sum(integrate(grid, solve_cells(data.a, f) * f)))
    e3 = 0.5 * float(np.sum(integrate(grid, -d * f)))
    return e1, e2, e3


def entropy(data: ProblemData, grid: Grid, u, check=True) -> float:
    """Quadratic entropy relative to the ideal free distribution.

    With ``check`` the three equivalent forms must agree to ``1e-9``
    relative, otherwise :class:`ConsistencyError` is raised.
    """
    e1, e2, e3 = entropy_forms(data, grid, u)
    if check:
        u = np.asarray(u, dtype=float)
        # absolute floor covers cancellation in (u_inf - u).f near u = u_inf
        scale = float(np.sum(integrate(grid, 1.0 + u**2 + data.u_inf**2 + data.m**2)))
        tol = ENTROPY_RTOL * max(abs(e1), abs(e2), abs(e3)) + 1e-13 * scale
        if max(e1, e2, e3) - min(e1, e2, e3) > tol:
            raise ConsistencyError(f"entropy forms disagree: {e1!r}, {e2!r}, {e3!r}")
    return e1


def dissipation(data: ProblemData, grid: Grid, u) -> float:
    """``sum_i int u_i (|grad f_i|^2 + f_i^2)``, face densities by arithmetic mean."""
    u = _check_state(data, u)
    _nonneg(u, "dissipation")
    f = fitness(data, u)
    faces = []
    for k, g in enumerate(face_gradient(grid, f)):
        ax = u.ndim - grid.dim + k
        n = grid.extents[k]
        mean = 0.5 * (np.take(u, np.arange(n - 1), axis=ax) + np.take(u, np.arange(1, n), axis=ax))
        faces.append(mean * g * g)
    return _face_sum(grid, faces) + float(np.sum(integrate(grid, u * f * f)))


def boltzmann(grid: Grid, u) -> np.ndarray:
    """``int (u log u - u + 1)`` per species, with ``0 log 0 = 0``."""
    u = grid.check_cell_field(u, "u")
    _nonneg(u, "boltzmann")
    with np.errstate(divide="ignore", invalid="ignore"):
        ulogu = np.where(u > 0, u * np.log(np.where(u > 0, u, 1.0)), 0.0)
    return np.atleast_1d(integrate(grid, ulogu - u + 1.0))


def fitness_l2(data: ProblemData, grid: Grid, u) -> float:
    f = fitness(data, u)
    return float(np.sum(integrate(grid, f * f)))


def grad_u_l2(grid: Grid, u) -> float:
    return _face_sum(grid, [g * g for g in face_gradient(grid, u)])


def beckner_ratio(data: ProblemData, grid: Grid, u, floor_rel=1e-14):
    """``int sum |f_i|^2 / D(u)``, or ``None`` when ``D`` is below the floor.

    The floor is ``floor_rel * (1 + int sum |f_i|^2)``.
    """
    num = fitness_l2(data, grid, u)
    den = dissipation(data, grid, u)
    if den <= floor_rel * (1.0 + num):
        return None
    return num / den


def csv_header(n_species):
    return (
        ["t", "E", "D"]
        + [f"mass_{i + 1}" for i in range(n_species)]
        + [f"H_{i + 1}" for i in range(n_species)]
        + ["fitness_l2", "grad_u_l2"]
    )


@dataclass
class FunctionalValues:
    t: float
    entropy: float
    dissipation: float
    masses: np.ndarray
    boltzmann: np.ndarray
    fitness_l2: float
    grad_u_l2: float

    def row(self) -> list[float]:
        return (
            [self.t, self.entropy, self.dissipation]
            + [float(v) for v in self.masses]
            + [float(v) for v in self.boltzmann]
            + [self.fitness_l2, self.grad_u_l2]
        )

    def to_dict(self):
        d = asdict(self)
        d["masses"] = [float(v) for v in self.masses]
        d["boltzmann"] = [float(v) for v in self.boltzmann]
        return d


def evaluate(data: ProblemData, grid: Grid, u, t=0.0) -> FunctionalValues:
    """All functionals of one snapshot."""
    return FunctionalValues(
        t=float(t),
        entropy=entropy(data, grid, u),
        dissipation=dissipation(data, grid, u),
        masses=np.atleast_1d(integrate(grid, u)),
        boltzmann=boltzmann(grid, u),
        fitness_l2=fitness_l2(data, grid, u),
        grad_u_l2=grad_u_l2(grid, u),
    )


def trajectory_action(trajectory) -> float:
    """Time integral of the dissipation along a trajectory.

    Uses the step-resolved trapezoid sum recorded by the solver when the
    trajectory carries one, and the trapezoid over snapshots otherwise.
    Accepts a :class:`~fitnessflow.solver.Trajectory` or a pair of arrays
    ``(times, dissipations)``.
    """
    cumulative = getattr(trajectory, "dissipation_integral", None)
    if cumulative is not None and len(cumulative) >= 2:
        return float(cumulative[-1] - cumulative[0])
    if isinstance(trajectory, tuple):
        t, d = (np.asarray(v, dtype=float) for v in trajectory)
    else:
        t, d = np.asarray(trajectory.times), np.array([fv.dissipation for fv in trajectory.functionals])
    if len(t) < 2:
        raise FitnessFlowError("trajectory_action needs at least 2 snapshots")
    return float(np.sum(0.5 * np.diff(t) * (d[1:] + d[:-1])))
