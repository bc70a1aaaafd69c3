"""Uniform cell-centred meshes in one or two dimensions.

Cell fields are arrays whose trailing ``grid.dim`` axes are the grid axes
(any leading axes, typically the species index, are carried along).  Face
fields are tuples with one array per axis holding the interior faces only;
boundary faces are implicit and carry zero normal flux.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractViolation, DimensionError

__all__ = [
    "Grid",
    "face_gradient",
    "cell_divergence",
    "integrate",
    "face_upwind",
    "laplacian",
    "write_field_csv",
    "read_field_csv",
]


@dataclass(frozen=True)
class Grid:
    """Uniform rectangle ``[origin, origin + extents * spacing]``."""

    extents: tuple[int, ...]
    spacing: tuple[float, ...]
    origin: tuple[float, ...] | None = None

    def __post_init__(self):
        ext = tuple(int(n) for n in self.extents)
        h = tuple(float(s) for s in self.spacing)
        if len(ext) not in (1, 2):
            raise DimensionError(f"only 1D and 2D grids are supported, got dim={len(ext)}")
        if len(h) != len(ext):
            raise DimensionError("spacing must have one entry per axis")
        if any(n < 2 for n in ext):
            raise DimensionError(f"need at least 2 cells per axis, got {ext}")
        if not all(np.isfinite(s) and s > 0 for s in h):
            raise DimensionError(f"spacing must be positive, got {h}")
        origin = (0.0,) * len(ext) if self.origin is None else tuple(float(o) for o in self.origin)
        if len(origin) != len(ext):
            raise DimensionError("origin must have one entry per axis")
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "spacing", h)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def box(cls, cells, lengths=None, origin=None):
        """Grid with ``cells`` per axis covering boxes of the given side ``lengths``."""
        cells = (cells,) if np.isscalar(cells) else tuple(cells)
        if lengths is None:
            lengths = (1.0,) * len(cells)
        lengths = (lengths,) if np.isscalar(lengths) else tuple(lengths)
        if len(lengths) != len(cells):
            raise DimensionError("lengths must have one entry per axis")
        return cls(cells, tuple(L / n for L, n in zip(lengths, cells)), origin)

    @property
    def dim(self) -> int:
        return len(self.extents)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.extents))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return self.cell_volume * self.n_cells

    @property
    def lengths(self) -> tuple[float, ...]:
        return tuple(n * h for n, h in zip(self.extents, self.spacing))

    def axis_centers(self, axis: int) -> np.ndarray:
        n, h, o = self.extents[axis], self.spacing[axis], self.origin[axis]
        return o + (np.arange(n) + 0.5) * h

    def centers(self) -> tuple[np.ndarray, ...]:
        """Cell-centre coordinates, one array of shape ``extents`` per axis."""
        return tuple(np.meshgrid(*(self.axis_centers(k) for k in range(self.dim)), indexing="ij"))

    def check_cell_field(self, phi: np.ndarray, name="field") -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        if phi.ndim < self.dim or phi.shape[phi.ndim - self.dim:] != self.extents:
            raise DimensionError(
                f"{name} has shape {phi.shape}, expected trailing axes {self.extents}"
            )
        return phi

    def check_face_field(self, flux, name="flux") -> tuple[np.ndarray, ...]:
        flux = tuple(np.asarray(F, dtype=float) for F in flux)
        if len(flux) != self.dim:
            raise DimensionError(f"{name} needs one array per axis, got {len(flux)}")
        for k, F in enumerate(flux):
            expect = list(self.extents)
            expect[k] -= 1
            if F.ndim < self.dim or F.shape[F.ndim - self.dim:] != tuple(expect):
                raise DimensionError(
                    f"{name}[{k}] has shape {F.shape}, expected trailing axes {tuple(expect)}"
                )
        return flux

    def _axis(self, arr: np.ndarray, k: int) -> int:
        return arr.ndim - self.dim + k


def face_gradient(grid: Grid, phi) -> tuple[np.ndarray, ...]:
    """Two-point difference ``(phi_right - phi_left) / h`` on every interior face."""
    phi = grid.check_cell_field(phi, "phi")
    return tuple(
        np.diff(phi, axis=grid._axis(phi, k)) / grid.spacing[k] for k in range(grid.dim)
    )


def cell_divergence(grid: Grid, flux) -> np.ndarray:
    """Finite-volume divergence with zero flux through the boundary."""
    flux = grid.check_face_field(flux)
    lead = flux[0].shape[: flux[0].ndim - grid.dim]
    out = np.zeros(lead + grid.extents)
    for k, F in enumerate(flux):
        ax = grid._axis(out, k)
        hi = [slice(None)] * out.ndim
        lo = [slice(None)] * out.ndim
        hi[ax] = slice(0, -1)
        lo[ax] = slice(1, None)
        # a face flux leaves its left cell and enters its right cell
        out[tuple(hi)] += F / grid.spacing[k]
        out[tuple(lo)] -= F / grid.spacing[k]
    return out


def integrate(grid: Grid, phi):
    """Midpoint-rule integral over the grid, one value per leading component."""
    phi = grid.check_cell_field(phi, "phi")
    lead = phi.shape[: phi.ndim - grid.dim]
    flat = np.ascontiguousarray(phi).reshape(lead + (-1,))
    total = flat.sum(axis=-1) * grid.cell_volume
    return float(total) if not lead else total


def face_upwind(grid: Grid, u, velocity) -> tuple[np.ndarray, ...]:
    """Donor-cell flux: ``velocity`` times the upwind cell value of ``u``."""
    u = grid.check_cell_field(u, "u")
    velocity = grid.check_face_field(velocity, "velocity")
    if np.any(u < 0):
        raise ContractViolation("face_upwind requires u >= 0")
    out = []
    for k, v in enumerate(velocity):
        ax = grid._axis(u, k)
        left = np.take(u, np.arange(grid.extents[k] - 1), axis=ax)
        right = np.take(u, np.arange(1, grid.extents[k]), axis=ax)
        out.append(v * np.where(v > 0, left, right))
    return tuple(out)


def laplacian(grid: Grid, phi) -> np.ndarray:
    """No-flux discrete Laplacian, ``div(grad phi)``."""
    return cell_divergence(grid, face_gradient(grid, phi))


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_field_csv(path, grid: Grid, u) -> None:
    """Write ``x[,y],species_1..species_N`` rows in row-major cell order."""
    u = grid.check_cell_field(u, "u")
    if u.ndim == grid.dim:
        u = u[None]
    n = u.shape[0]
    coords = [c.ravel() for c in grid.centers()]
    values = u.reshape(n, -1)
    header = ["x", "y"][: grid.dim] + [f"species_{i + 1}" for i in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for c in range(values.shape[1]):
            w.writerow([_fmt(x[c]) for x in coords] + [_fmt(v) for v in values[:, c]])


def read_field_csv(path, grid: Grid | None = None, prefix="species_"):
    """Read a cell-field CSV; returns an array of shape ``(N, *extents)``.

    Columns other than the coordinates must start with ``prefix``.  When a
    grid is given, the row count and coordinates are checked against it.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DimensionError(f"{path}: empty CSV")
    header, body = rows[0], rows[1:]
    ncoord = sum(1 for h in header if h in ("x", "y"))
    if header[:ncoord] != ["x", "y"][:ncoord] or ncoord == 0:
        raise DimensionError(f"{path}: header must start with x[,y], got {header}")
    names = header[ncoord:]
    bad = [h for h in names if not h.startswith(prefix)]
    if bad or not names:
        raise DimensionError(f"{path}: unexpected columns {bad or header}")
    data = np.array([[float(v) for v in r] for r in body if r], dtype=float)
    if data.ndim != 2 or data.shape[1] != len(header):
        raise DimensionError(f"{path}: ragged rows")
    values = data[:, ncoord:].T
    if grid is None:
        return values
    if ncoord != grid.dim or data.shape[0] != grid.n_cells:
        raise DimensionError(
            f"{path}: {data.shape[0]} rows in {ncoord}D, grid has {grid.n_cells} cells in {grid.dim}D"
        )
    for k, c in enumerate(grid.centers()):
        if not np.allclose(data[:, k], c.ravel(), rtol=0, atol=1e-9 * max(grid.lengths)):
            raise DimensionError(f"{path}: coordinates do not match the grid cell centres")
    return values.reshape((len(names),) + grid.extents)
