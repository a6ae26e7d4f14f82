"""Structured grids, field containers and discrete calculus.

Array layout
------------
Fields are plain numpy arrays whose spatial axes are followed by tensor axes:

* scalar  ``(*lead, *extents)``
* vector  ``(*lead, *extents, d)``
* matrix  ``(*lead, *extents, d, d)``
* 3-tensor ``(*lead, *extents, d, d, d)``

``lead`` is any number of leading axes (typically a time axis).  Every
derivative operator takes the tensor ``rank`` so it can find the spatial axes.
Gradients put the new derivative index *first* among the tensor indices, so
``jac(u)[..., i, j] = du_j/dy_i`` (the ``grad u`` layout) and
``hess(u)[..., l, m, j] = d2 u_j / dy_l dy_m``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GridTooCoarseError, InconsistentTrajectoryError


@dataclass(frozen=True)
class Grid:
    """Uniform node-centred grid on a box ``[low, high]``."""

    extents: tuple[int, ...]
    low: tuple[float, ...] | None = None
    high: tuple[float, ...] | None = None

    def __post_init__(self):
        ext = tuple(int(n) for n in self.extents)
        if not 1 <= len(ext) <= 3:
            raise ValueError(f"grid dimension must be 1, 2 or 3, got {len(ext)}")
        if any(n < 2 for n in ext):
            raise ValueError("every axis needs at least two nodes")
        low = tuple(float(a) for a in (self.low if self.low is not None else (0.0,) * len(ext)))
        high = tuple(float(b) for b in (self.high if self.high is not None else (1.0,) * len(ext)))
        if len(low) != len(ext) or len(high) != len(ext):
            raise ValueError("low/high must have one entry per axis")
        if any(b <= a for a, b in zip(low, high)):
            raise ValueError("domain box must have high > low on every axis")
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @property
    def dim(self) -> int:
        return len(self.extents)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((b - a) / (n - 1) for a, b, n in zip(self.low, self.high, self.extents))

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.extents))

    @property
    def volume(self) -> float:
        return float(np.prod([b - a for a, b in zip(self.low, self.high)]))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, n) for a, b, n in zip(self.low, self.high, self.extents)]

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(*extents, d)``."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    @property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.extents, dtype=bool)
        for ax in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[ax] = 0
            mask[tuple(idx)] = True
            idx[ax] = -1
            mask[tuple(idx)] = True
        return mask

    def weights(self) -> np.ndarray:
        """Tensor-product trapezoid weights; they sum to the box volume."""
        w = np.ones(self.extents)
        for ax, (n, h) in enumerate(zip(self.extents, self.spacing)):
            w1 = np.full(n, h)
            w1[0] = w1[-1] = h / 2
            shape = [1] * self.dim
            shape[ax] = n
            w = w * w1.reshape(shape)
        return w

    def refine(self) -> Grid:
        """Halve the spacing on every axis."""
        return Grid(tuple(2 * n - 1 for n in self.extents), self.low, self.high)


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    nsteps: int

    def __post_init__(self):
        if int(self.nsteps) < 1:
            raise ValueError("nsteps must be >= 1")
        if not self.T > self.t0:
            raise ValueError("time grid needs T > t0")
        object.__setattr__(self, "nsteps", int(self.nsteps))

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.nsteps

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.nsteps + 1)

    @property
    def length(self) -> float:
        return self.T - self.t0

    def weights(self) -> np.ndarray:
        w = np.full(self.nsteps + 1, self.dt)
        w[0] = w[-1] = self.dt / 2
        return w

    def truncated(self, nsteps: int) -> TimeGrid:
        """First ``nsteps`` steps of this grid (same dt)."""
        return TimeGrid(self.t0, self.t0 + nsteps * self.dt, nsteps)

    def shifted(self, t0: float) -> TimeGrid:
        return TimeGrid(t0, t0 + self.length, self.nsteps)


def field_rank(grid: Grid, values: np.ndarray, lead: int = 0) -> int:
    rank = values.ndim - lead - grid.dim
    if rank < 0 or tuple(values.shape[lead:lead + grid.dim]) != grid.extents:
        raise ValueError(f"array of shape {values.shape} does not live on grid {grid.extents}")
    if any(s != grid.dim for s in values.shape[lead + grid.dim:]):
        raise ValueError("tensor axes must all have length d")
    return rank


@dataclass(frozen=True)
class Field:
    """A single-time field with its grid; used for validation and CSV exchange."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        field_rank(self.grid, values)
        if not np.all(np.isfinite(values)):
            raise ValueError("field contains non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def rank(self) -> int:
        return self.values.ndim - self.grid.dim

    def to_csv(self, path) -> None:
        g = self.grid
        lines = [
            "# grid d={} extents={} spacing={} low={} rank={}".format(
                g.dim,
                ",".join(str(n) for n in g.extents),
                ",".join(repr(h) for h in g.spacing),
                ",".join(repr(a) for a in g.low),
                self.rank,
            ),
            "i,j,k,component,value",
        ]
        ncomp = g.dim ** self.rank
        flat = self.values.reshape(g.n_nodes, ncomp)
        for node, idx in enumerate(np.ndindex(*g.extents)):
            ijk = list(idx) + [0] * (3 - g.dim)
            for c in range(ncomp):
                lines.append(f"{ijk[0]},{ijk[1]},{ijk[2]},{c},{float(flat[node, c])!r}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> Field:
        text = Path(path).read_text().splitlines()
        header = text[0]
        m = re.match(r"#\s*grid\s+(.*)", header)
        if not m:
            raise ValueError(f"{path}: missing grid header")
        meta = dict(tok.split("=", 1) for tok in m.group(1).split())
        d = int(meta["d"])
        extents = tuple(int(v) for v in meta["extents"].split(","))
        spacing = [float(v) for v in meta["spacing"].split(",")]
        low = [float(v) for v in meta.get("low", ",".join(["0"] * d)).split(",")]
        high = [a + h * (n - 1) for a, h, n in zip(low, spacing, extents)]
        grid = Grid(extents, tuple(low), tuple(high))
        rows = np.loadtxt(text[2:], delimiter=",", ndmin=2)
        ncomp = int(rows[:, 3].max()) + 1 if len(rows) else 1
        rank = int(meta["rank"]) if "rank" in meta else int(round(np.log(ncomp) / np.log(d))) if d > 1 else (0 if ncomp == 1 else 1)
        values = np.zeros(extents + (d,) * rank)
        flat = values.reshape(grid.n_nodes, d ** rank)
        idx = rows[:, :3].astype(int)[:, :d]
        node = np.ravel_multi_index(tuple(idx.T), extents)
        flat[node, rows[:, 3].astype(int)] = rows[:, 4]
        return cls(grid, values)


@dataclass
class Trajectory:
    """Time series of (density-like, velocity-like) pairs on one grid."""

    grid: Grid
    time_grid: TimeGrid
    rho: np.ndarray
    u: np.ndarray
    diagnostics: list = field(default_factory=list)

    def __post_init__(self):
        n = self.time_grid.nsteps + 1
        shape_s = (n,) + self.grid.extents
        if self.rho.shape != shape_s or self.u.shape != shape_s + (self.grid.dim,):
            raise InconsistentTrajectoryError(
                f"inconsistent trajectory: got rho {self.rho.shape}, u {self.u.shape}, "
                f"expected {shape_s} and {shape_s + (self.grid.dim,)}"
            )

    @property
    def frames(self):
        return list(zip(self.rho, self.u))

    @classmethod
    def zeros(cls, grid: Grid, time_grid: TimeGrid) -> Trajectory:
        n = time_grid.nsteps + 1
        return cls(grid, time_grid, np.zeros((n,) + grid.extents), np.zeros((n,) + grid.extents + (grid.dim,)))

    @classmethod
    def from_frames(cls, grid: Grid, time_grid: TimeGrid, frames) -> Trajectory:
        rhos, us = [], []
        for rho, u in frames:
            for f in (rho, u):
                if isinstance(f, Field) and f.grid != grid:
                    raise InconsistentTrajectoryError("inconsistent trajectory: frames live on different grids")
            rhos.append(np.asarray(getattr(rho, "values", rho), dtype=float))
            us.append(np.asarray(getattr(u, "values", u), dtype=float))
        try:
            return cls(grid, time_grid, np.stack(rhos), np.stack(us))
        except ValueError as exc:
            raise InconsistentTrajectoryError(f"inconsistent trajectory: {exc}") from exc


# ---------------------------------------------------------------- calculus

def _check_coarse(grid: Grid, minimum: int = 3) -> None:
    if any(n < minimum for n in grid.extents):
        raise GridTooCoarseError(f"grid too coarse: extents {grid.extents}, need >= {minimum} nodes per axis")


def _spatial_axis(grid: Grid, rank: int, ax: int) -> int:
    return -(rank + grid.dim) + ax


def d1(a: np.ndarray, grid: Grid, ax: int, rank: int = 0) -> np.ndarray:
    """First derivative along one axis: central inside, one-sided second order at the ends."""
    _check_coarse(grid)
    return np.gradient(a, grid.spacing[ax], axis=_spatial_axis(grid, rank, ax), edge_order=2)


def d2(a: np.ndarray, grid: Grid, ax: int, rank: int = 0) -> np.ndarray:
    """Second derivative along one axis; 4-point one-sided closure at the ends."""
    _check_coarse(grid)
    axis = _spatial_axis(grid, rank, ax)
    h2 = grid.spacing[ax] ** 2
    a = np.moveaxis(a, axis, 0)
    out = np.empty_like(a, dtype=float)
    out[1:-1] = (a[:-2] - 2.0 * a[1:-1] + a[2:]) / h2
    if a.shape[0] >= 4:
        out[0] = (2.0 * a[0] - 5.0 * a[1] + 4.0 * a[2] - a[3]) / h2
        out[-1] = (2.0 * a[-1] - 5.0 * a[-2] + 4.0 * a[-3] - a[-4]) / h2
    else:
        out[0] = out[1]
        out[-1] = out[-2]
    return np.moveaxis(out, 0, axis)


def gradient(a: np.ndarray, grid: Grid, rank: int = 0) -> np.ndarray:
    """Gradient of a rank-``rank`` field; derivative index becomes the first tensor index."""
    return np.stack([d1(a, grid, i, rank) for i in range(grid.dim)], axis=-(rank + 1))


def grad(f: np.ndarray, grid: Grid) -> np.ndarray:
    return gradient(f, grid, 0)


def jac(u: np.ndarray, grid: Grid) -> np.ndarray:
    """``jac(u)[..., i, j] = du_j/dy_i``."""
    return gradient(u, grid, 1)


def div(u: np.ndarray, grid: Grid) -> np.ndarray:
    return sum(d1(u[..., i], grid, i) for i in range(grid.dim))


def hess(a: np.ndarray, grid: Grid, rank: int = 0) -> np.ndarray:
    """Second derivatives; compact stencil on the diagonal, products of first differences off it."""
    d = grid.dim
    first = [d1(a, grid, i, rank) for i in range(d)]
    rows = []
    for l in range(d):
        row = []
        for m in range(d):
            row.append(d2(a, grid, l, rank) if l == m else d1(first[m], grid, l, rank))
        rows.append(np.stack(row, axis=-(rank + 1)))
    return np.stack(rows, axis=-(rank + 2))


def laplacian(a: np.ndarray, grid: Grid, rank: int = 1) -> np.ndarray:
    return sum(d2(a, grid, i, rank) for i in range(grid.dim))


def grad_div(u: np.ndarray, grid: Grid) -> np.ndarray:
    """``(grad div u)_i = sum_j d_i d_j u_j`` using the same second differences as ``hess``."""
    H = hess(u, grid, 1)
    return np.einsum("...ijj->...i", H)


def integrate(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Trapezoid integral over the box of a scalar field (leading axes kept)."""
    w = grid.weights()
    axes = tuple(range(-grid.dim, 0))
    return np.sum(f * w, axis=axes)


def pointwise_norm(a: np.ndarray, grid: Grid, rank: int) -> np.ndarray:
    """Euclidean / Frobenius magnitude over the tensor axes."""
    if rank == 0:
        return np.abs(a)
    axes = tuple(range(-rank, 0))
    return np.sqrt(np.sum(a * a, axis=axes))


def time_derivative(a: np.ndarray, dt: float) -> np.ndarray:
    """Backward differences along axis 0; level 0 reuses the first difference."""
    out = np.empty_like(a, dtype=float)
    out[1:] = (a[1:] - a[:-1]) / dt
    out[0] = out[1] if len(a) > 1 else 0.0
    return out
