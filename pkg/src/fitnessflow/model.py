"""Problem data, fitness and the steady-state lattice of the competition model.

The interaction matrix ``a`` is stored either as one constant ``(N, N)``
matrix or as a field of shape ``(N, N, *extents)``; the resource ``m`` is
always a field of shape ``(N, *extents)``.  Species indices are 0-based in
code and printed 1-based.
"""
from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    DimensionError,
    EnumerationCapError,
    InvalidDataError,
    SingularMatrixError,
    StructuralConditionError,
)
from .grid import Grid

__all__ = [
    "ProblemData",
    "ExtinctionPattern",
    "Am4Report",
    "CriticalEntropy",
    "fitness",
    "ideal_free_distribution",
    "partial_extinction_state",
    "check_am4",
    "critical_entropy",
    "iter_patterns",
]

DEFAULT_KAPPA_TOL = 1e-10
DEFAULT_COND_CAP = 1e12
DEFAULT_PATTERN_CAP = 20


@dataclass(frozen=True, eq=False)
class ProblemData:
    """Interaction matrix ``a`` and resource field ``m`` on a fixed set of cells."""

    a: np.ndarray
    m: np.ndarray
    kappa_tol: float = DEFAULT_KAPPA_TOL
    cond_cap: float = DEFAULT_COND_CAP

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        m = np.array(self.m, dtype=float)
        if m.ndim < 2:
            raise DimensionError("m must be a field of shape (N, *extents)")
        n = m.shape[0]
        if a.shape[:2] != (n, n) or a.ndim not in (2, m.ndim + 1):
            raise DimensionError(f"a has shape {a.shape}, incompatible with N={n}")
        if a.ndim > 2 and a.shape[2:] != m.shape[1:]:
            raise DimensionError(f"a field extents {a.shape[2:]} != m extents {m.shape[1:]}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(m))):
            raise InvalidDataError("a and m must be finite")
        if self.kappa_tol < 0:
            raise InvalidDataError("kappa_tol must be nonnegative")
        stack = _as_stack(a)
        asym = np.argwhere(stack != np.swapaxes(stack, 1, 2))
        if asym.size:
            c, i, j = asym[0]
            where = "" if a.ndim == 2 else f" at cell {np.unravel_index(c, m.shape[1:])}"
            raise InvalidDataError(
                f"a is not symmetric{where}: a[{i + 1},{j + 1}] != a[{j + 1},{i + 1}]"
            )
        eig = np.linalg.eigvalsh(stack)
        if eig[:, 0].min() <= 0:
            c = int(np.argmin(eig[:, 0]))
            where = "" if a.ndim == 2 else f" at cell {np.unravel_index(c, m.shape[1:])}"
            raise InvalidDataError(
                f"a is not positive definite{where}: smallest eigenvalue {eig[c, 0]:g}"
            )
        a.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "_eig_bounds", (float(eig[:, 0].min()), float(eig[:, -1].max())))

    @classmethod
    def on_grid(cls, grid: Grid, a, m, **kw) -> "ProblemData":
        """Build from a constant matrix or field ``a`` and a vector or field ``m``."""
        m = np.asarray(m, dtype=float)
        if m.ndim == 1:
            m = np.broadcast_to(m.reshape((-1,) + (1,) * grid.dim), (m.size,) + grid.extents)
        data = cls(a, m, **kw)
        data.check_grid(grid)
        return data

    @property
    def n_species(self) -> int:
        return self.m.shape[0]

    @property
    def extents(self) -> tuple[int, ...]:
        return self.m.shape[1:]

    @property
    def constant_a(self) -> bool:
        return self.a.ndim == 2

    @property
    def a_field(self) -> np.ndarray:
        """``a`` as a (possibly broadcast, read-only) array ``(N, N, *extents)``."""
        if self.constant_a:
            return np.broadcast_to(
                self.a.reshape(self.a.shape + (1,) * len(self.extents)), self.a.shape + self.extents
            )
        return self.a

    @property
    def ellipticity(self) -> tuple[float, float]:
        """Smallest and largest eigenvalue of ``a`` over all cells."""
        return self._eig_bounds

    @cached_property
    def u_inf(self) -> np.ndarray:
        return ideal_free_distribution(self)

    def check_grid(self, grid: Grid) -> None:
        if tuple(self.extents) != grid.extents:
            raise DimensionError(f"data extents {self.extents} != grid extents {grid.extents}")

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.a, self.m):
            h.update(str(arr.shape).encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class ExtinctionPattern:
    """Split of the species into an extinct set and its complement."""

    extinct: frozenset[int]
    n_species: int

    def __post_init__(self):
        ext = frozenset(int(i) for i in self.extinct)
        if any(i < 0 or i >= self.n_species for i in ext):
            raise DimensionError(f"extinct set {sorted(ext)} out of range for N={self.n_species}")
        object.__setattr__(self, "extinct", ext)

    @classmethod
    def of(cls, extinct, n_species) -> "ExtinctionPattern":
        return cls(frozenset(extinct), n_species)

    @property
    def survivors(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.n_species) if i not in self.extinct)

    @property
    def extinct_sorted(self) -> tuple[int, ...]:
        return tuple(sorted(self.extinct))

    def __str__(self):
        return "{" + ",".join(str(i + 1) for i in self.extinct_sorted) + "}"


def iter_patterns(n_species, include_empty=False):
    """Subsets by increasing cardinality, lexicographic within a cardinality."""
    start = 0 if include_empty else 1
    for r in range(start, n_species + 1):
        for combo in itertools.combinations(range(n_species), r):
            yield ExtinctionPattern.of(combo, n_species)


def _as_stack(a: np.ndarray) -> np.ndarray:
    """``(cells, N, N)`` view of a constant matrix or matrix field."""
    if a.ndim == 2:
        return a[None]
    n = a.shape[0]
    return np.moveaxis(a.reshape(n, n, -1), 2, 0)


def matvec(a: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Cellwise ``a @ u`` for constant or field ``a``."""
    if a.ndim == 2:
        return np.tensordot(a, u, axes=(1, 0))
    return np.einsum("ij...,j...->i...", a, u)


def solve_cells(a: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Cellwise solve ``a x = rhs``; ``rhs`` has shape ``(n, *extents)``."""
    n = rhs.shape[0]
    b = rhs.reshape(n, -1).T[..., None]
    x = np.linalg.solve(_as_stack(a), b)[..., 0]
    return x.T.reshape(rhs.shape)


def _check_state(data: ProblemData, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != data.m.shape:
        raise DimensionError(f"state has shape {u.shape}, expected {data.m.shape}")
    return u


def fitness(data: ProblemData, u) -> np.ndarray:
    """``f = m - a u`` cellwise."""
    u = _check_state(data, u)
    return data.m - matvec(data.a, u)


def _solve_restricted(data: ProblemData, idx: tuple[int, ...]) -> np.ndarray:
    """Solve ``a[idx, idx] x = m[idx]`` in every cell, guarding conditioning."""
    sub = _as_stack(data.a)[:, idx][:, :, idx]
    cond = np.linalg.cond(sub)
    if not np.all(cond <= data.cond_cap):
        c = int(np.argmax(np.where(np.isfinite(cond), cond, np.inf)))
        raise SingularMatrixError(
            f"restricted matrix on species {[i + 1 for i in idx]} has condition number "
            f"{cond[c]:.3g} > cap {data.cond_cap:.3g}"
        )
    rhs = data.m[list(idx)]
    a_sub = sub[0] if data.constant_a else np.moveaxis(sub, 0, -1).reshape(
        (len(idx), len(idx)) + data.extents
    )
    return solve_cells(a_sub, rhs)


def ideal_free_distribution(data: ProblemData) -> np.ndarray:
    """The coexistence state ``u_inf = a^{-1} m`` (all fitnesses zero)."""
    return _solve_restricted(data, tuple(range(data.n_species)))


def partial_extinction_state(data: ProblemData, pattern: ExtinctionPattern, strict=True):
    """Steady state with the ``pattern`` species absent and survivor fitness zero.

    With ``strict`` a negative survivor density raises
    :class:`StructuralConditionError`; otherwise it is returned as is.
    """
    if pattern.n_species != data.n_species:
        raise DimensionError(f"pattern is for N={pattern.n_species}, data has N={data.n_species}")
    u = np.zeros(data.m.shape)
    surv = pattern.survivors
    if not surv:
        return u
    u[list(surv)] = _solve_restricted(data, surv)
    if strict and np.any(u[list(surv)] < 0):
        k, c = np.unravel_index(int(np.argmin(u[list(surv)])), (len(surv), int(np.prod(data.extents))))
        raise StructuralConditionError(
            f"extinction state {pattern} has negative survivor u_{surv[k] + 1} = "
            f"{u[surv[k]].ravel()[c]:.6g} at cell {np.unravel_index(c, data.extents)}"
        )
    return u


@dataclass
class Am4Report:
    """Minimum bordered determinant over all (I, j, cell) and where it occurs."""

    kappa: float
    extinct: tuple[int, ...]
    j: int
    cell: tuple[int, ...]
    kappa_tol: float
    n_checked: int

    @property
    def holds(self) -> bool:
        return self.kappa >= self.kappa_tol and self.kappa > 0

    def to_dict(self):
        return {
            "kappa": self.kappa,
            "holds": self.holds,
            "argmin_I": [i + 1 for i in self.extinct],
            "argmin_j": self.j + 1,
            "argmin_cell": list(self.cell),
            "kappa_tol": self.kappa_tol,
            "n_checked": self.n_checked,
        }


def bordered_matrix(a: np.ndarray, m: np.ndarray, subset, j) -> np.ndarray:
    """``[[a_II, m_I], [a_jI, m_j]]`` for one cell (``a`` is N x N, ``m`` length N)."""
    rows = list(subset) + [j]
    out = np.empty((len(rows), len(rows)))
    out[:, :-1] = a[np.ix_(rows, list(subset))]
    out[:, -1] = m[rows]
    return out


def check_am4(data: ProblemData, max_species=DEFAULT_PATTERN_CAP) -> Am4Report:
    """Evaluate every bordered determinant and report the minimum.

    Subsets are visited by increasing cardinality, lexicographic within,
    ``j`` increasing, cells in row-major order; ties keep the first hit.
    """
    n = data.n_species
    if n > max_species:
        raise EnumerationCapError(f"N={n} exceeds the enumeration cap {max_species}")
    a = _as_stack(data.a)
    m = data.m.reshape(n, -1).T
    ncell = m.shape[0]
    best = (np.inf, (), -1, 0)
    count = 0
    for r in range(n):
        for subset in itertools.combinations(range(n), r):
            cols = list(subset)
            for j in range(n):
                if j in subset:
                    continue
                rows = cols + [j]
                mat = np.empty((ncell, r + 1, r + 1))
                mat[:, :, :r] = a[:, rows][:, :, cols]
                mat[:, :, r] = m[:, rows]
                det = np.linalg.det(mat) if r else mat[:, 0, 0]
                c = int(np.argmin(det))
                count += ncell
                if det[c] < best[0]:
                    best = (float(det[c]), subset, j, c)
    kappa, subset, j, c = best
    return Am4Report(
        kappa=kappa,
        extinct=tuple(subset),
        j=j,
        cell=tuple(int(i) for i in np.unravel_index(c, data.extents)),
        kappa_tol=data.kappa_tol,
        n_checked=count,
    )


@dataclass
class CriticalEntropy:
    """Minimal entropy over the nonempty extinction patterns."""

    value: float
    pattern: ExtinctionPattern
    entropies: dict = field(default_factory=dict)
    negative_patterns: list = field(default_factory=list)
    min_survivor: float = np.inf

    def to_dict(self):
        return {
            "E_star": self.value,
            "argmin_pattern": str(self.pattern),
            "entropies": {str(p): e for p, e in self.entropies.items()},
            "negative_patterns": [str(p) for p in self.negative_patterns],
            "min_survivor_density": self.min_survivor,
        }


def critical_entropy(data: ProblemData, grid: Grid, max_species=DEFAULT_PATTERN_CAP) -> CriticalEntropy:
    """Enumerate all nonempty extinction patterns and return the smallest entropy.

    Patterns whose survivors go negative (the structural condition fails)
    are still evaluated and listed in ``negative_patterns``.
    """
    from .functionals import entropy

    n = data.n_species
    if n > max_species:
        raise EnumerationCapError(f"N={n} exceeds the enumeration cap {max_species}")
    data.check_grid(grid)
    best = None
    ents = {}
    negative = []
    floor = np.inf
    for pattern in iter_patterns(n):
        u = partial_extinction_state(data, pattern, strict=False)
        surv = list(pattern.survivors)
        if surv:
            low = float(u[surv].min())
            floor = min(floor, low)
            if low < 0:
                negative.append(pattern)
        e = entropy(data, grid, u)
        ents[pattern] = e
        if best is None or e < best[0]:
            best = (e, pattern)
    return CriticalEntropy(best[0], best[1], ents, negative, floor)
