"""Lagrangian flow-map bookkeeping.

``k`` is the time-integrated velocity gradient (``grad X = I + k``, gradient
layout ``k[..., i, j] = int d_i u_j``), ``grad_k[..., l, i, j] = d_l k_ij``,
and ``e0 = (I + k)^{-1} - I`` so that Eulerian derivatives are
``d/dx_i = (delta_ij + e0_ij) d/dy_j``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import ConfigError, FlowDegenerateError, TrackingError
from .fields import Grid, TimeGrid, gradient, jac, pointwise_norm

DET_FLOOR = 0.5


def e0_from_k(k: np.ndarray, det_floor: float = DET_FLOOR) -> np.ndarray:
    """``(I + k)^{-1} - I`` nodewise; accepts any leading axes."""
    k = np.asarray(k, dtype=float)
    d = k.shape[-1]
    A = np.eye(d) + k
    if np.any(np.linalg.det(A) <= det_floor):
        raise FlowDegenerateError(f"flow map degenerate: det(I+k) <= {det_floor}")
    return np.linalg.inv(A) - np.eye(d)


def de0_dk_apply(k: np.ndarray, dk: np.ndarray, det_floor: float = DET_FLOOR) -> np.ndarray:
    """Directional derivative of ``e0`` at ``k`` along ``dk``: ``-(I+k)^{-1} dk (I+k)^{-1}``."""
    B = np.eye(np.shape(k)[-1]) + e0_from_k(k, det_floor)
    return -B @ np.asarray(dk, dtype=float) @ B


@dataclass(frozen=True)
class FlowState:
    """Accumulated deformation data; arrays may carry a leading time axis."""

    k: np.ndarray
    grad_k: np.ndarray
    e0: np.ndarray
    det_jac: np.ndarray
    delta_accum: np.ndarray | float = 0.0
    det_floor: float = DET_FLOOR

    @classmethod
    def identity(cls, grid: Grid, det_floor: float = DET_FLOOR) -> FlowState:
        d = grid.dim
        ext = grid.extents
        return cls(
            k=np.zeros(ext + (d, d)),
            grad_k=np.zeros(ext + (d, d, d)),
            e0=np.zeros(ext + (d, d)),
            det_jac=np.ones(ext),
            delta_accum=0.0,
            det_floor=det_floor,
        )

    @classmethod
    def from_k(cls, k, grad_k, delta_accum=0.0, det_floor: float = DET_FLOOR) -> FlowState:
        k = np.asarray(k, dtype=float)
        det = np.linalg.det(np.eye(k.shape[-1]) + k)
        if np.any(det <= det_floor):
            raise FlowDegenerateError(f"flow map degenerate: min det(I+k) = {det.min():.4g} <= {det_floor}")
        e0 = np.linalg.inv(np.eye(k.shape[-1]) + k) - np.eye(k.shape[-1])
        return cls(k, np.asarray(grad_k, dtype=float), e0, det, delta_accum, det_floor)

    @property
    def ntimes(self) -> int | None:
        return None if np.ndim(self.delta_accum) == 0 else len(self.delta_accum)

    def at(self, n: int) -> FlowState:
        """Single time level of a time-stacked flow state."""
        return FlowState(self.k[n], self.grad_k[n], self.e0[n], self.det_jac[n], float(np.asarray(self.delta_accum)[n]), self.det_floor)

    def last(self) -> FlowState:
        return self.at(-1)

    def grad_e0(self) -> np.ndarray:
        """``d_l e0`` via the chain rule: ``-(I+e0) (d_l k) (I+e0)``, layout ``[..., l, i, j]``."""
        B = np.eye(self.k.shape[-1]) + self.e0
        return -np.einsum("...ij,...ljk,...km->...lim", B, self.grad_k, B)


def velocity_gradient_sup(u: np.ndarray, grid: Grid) -> np.ndarray:
    """``||grad u||_inf`` per leading slice (Frobenius magnitude, max over nodes)."""
    mag = pointwise_norm(jac(u, grid), grid, 2)
    return mag.reshape(mag.shape[: mag.ndim - grid.dim] + (-1,)).max(axis=-1)


def accumulate(flow: FlowState, u_prev: np.ndarray, u_next: np.ndarray, dt: float, grid: Grid) -> FlowState:
    """One trapezoid step of the flow-map integrals."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    J0, J1 = jac(u_prev, grid), jac(u_next, grid)
    k = flow.k + 0.5 * dt * (J0 + J1)
    grad_k = flow.grad_k + 0.5 * dt * (gradient(J0, grid, 2) + gradient(J1, grid, 2))
    delta = float(flow.delta_accum) + 0.5 * dt * float(velocity_gradient_sup(u_prev, grid) + velocity_gradient_sup(u_next, grid))
    return FlowState.from_k(k, grad_k, delta, flow.det_floor)


def accumulate_history(flow0: FlowState, u: np.ndarray, dt: float, grid: Grid) -> FlowState:
    """Trapezoid accumulation over a whole velocity series ``u[n]``; returns a
    time-stacked FlowState whose level 0 is ``flow0``. Same arithmetic as
    repeated :func:`accumulate`."""
    J = jac(u, grid)
    incr = 0.5 * dt * (J[1:] + J[:-1])
    k = np.concatenate([flow0.k[None], flow0.k[None] + np.cumsum(incr, axis=0)])
    GJ = gradient(J, grid, 2)
    gincr = 0.5 * dt * (GJ[1:] + GJ[:-1])
    grad_k = np.concatenate([flow0.grad_k[None], flow0.grad_k[None] + np.cumsum(gincr, axis=0)])
    sup = velocity_gradient_sup(u, grid)
    delta = float(flow0.delta_accum) + np.concatenate([[0.0], np.cumsum(0.5 * dt * (sup[1:] + sup[:-1]))])
    return FlowState.from_k(k, grad_k, delta, flow0.det_floor)


def stack_flows(flows: list[FlowState]) -> FlowState:
    return FlowState(
        np.stack([f.k for f in flows]),
        np.stack([f.grad_k for f in flows]),
        np.stack([f.e0 for f in flows]),
        np.stack([f.det_jac for f in flows]),
        np.array([float(f.delta_accum) for f in flows]),
        flows[0].det_floor,
    )


def concat_flows(a: FlowState, b: FlowState) -> FlowState:
    """Join two time-stacked flows; ``b``'s first level duplicates ``a``'s last."""
    return FlowState(
        np.concatenate([a.k, b.k[1:]]),
        np.concatenate([a.grad_k, b.grad_k[1:]]),
        np.concatenate([a.e0, b.e0[1:]]),
        np.concatenate([a.det_jac, b.det_jac[1:]]),
        np.concatenate([np.atleast_1d(a.delta_accum), np.atleast_1d(b.delta_accum)[1:]]),
        a.det_floor,
    )


# ------------------------------------------------------------ point tracking

def _in_box(x: np.ndarray, box) -> bool:
    low, high = box
    return bool(np.all(x >= np.asarray(low) - 1e-12) and np.all(x <= np.asarray(high) + 1e-12))


def track_points(velocity, points: np.ndarray, time_grid: TimeGrid, box, tol: float = 1e-14, max_iter: int = 100) -> np.ndarray:
    """Integrate ``dX/dt = velocity(t, X)`` with the implicit trapezoid rule.

    ``velocity(t, x)`` maps ``(..., d)`` points to ``(..., d)`` velocities.
    Returns positions of shape ``(nsteps + 1, *points.shape)``.
    """
    x = np.array(points, dtype=float)
    if not _in_box(x, box):
        raise TrackingError("trajectory left tracking region (initial points outside box)")
    t = time_grid.times
    dt = time_grid.dt
    out = [x.copy()]
    for n in range(time_grid.nsteps):
        v0 = velocity(t[n], x)
        xn = x + dt * v0
        for _ in range(max_iter):
            if not _in_box(xn, box):
                raise TrackingError(f"trajectory left tracking region at t={t[n + 1]:.6g}")
            x_new = x + 0.5 * dt * (v0 + velocity(t[n + 1], xn))
            err = np.max(np.abs(x_new - xn)) if x_new.size else 0.0
            xn = x_new
            if err <= tol * max(1.0, np.max(np.abs(xn))):
                break
        if not _in_box(xn, box):
            raise TrackingError(f"trajectory left tracking region at t={t[n + 1]:.6g}")
        x = xn
        out.append(x.copy())
    return np.stack(out)


def pushforward_points(velocities: np.ndarray, grid: Grid, time_grid: TimeGrid, points, box=None) -> np.ndarray:
    """Push points forward through a gridded Eulerian velocity history
    ``velocities[n]`` (shape ``(*extents, d)``), sampled off-grid by
    multilinear interpolation. ``box`` defaults to the grid box."""
    box = box or (grid.low, grid.high)
    axes = grid.axes()
    interps = [RegularGridInterpolator(axes, v, method="linear", bounds_error=False, fill_value=None) for v in velocities]
    times = time_grid.times

    def vel(t, x):
        n = int(round((t - time_grid.t0) / time_grid.dt))
        return interps[n](np.asarray(x).reshape(-1, grid.dim)).reshape(np.shape(x))

    for v in velocities:
        if v.shape != grid.extents + (grid.dim,):
            raise ValueError("velocity snapshots must be vector fields on the tracking grid")
    if len(velocities) != len(times):
        raise ValueError("need one velocity snapshot per time level")
    return track_points(vel, np.asarray(points, dtype=float), time_grid, box)


# ------------------------------------------------------------ boundary motion

FAMILIES = ("zero", "rigid_translation", "rigid_rotation", "radial_dilation", "custom_table")


def _skew(d: int, axis=None) -> np.ndarray:
    if d == 2:
        return np.array([[0.0, -1.0], [1.0, 0.0]])
    if d == 3:
        a = np.asarray(axis if axis is not None else (0.0, 0.0, 1.0), dtype=float)
        a = a / np.linalg.norm(a)
        return np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
    raise ConfigError("rigid_rotation needs d = 2 or 3")


@dataclass
class BoundaryMotion:
    """Prescribed boundary velocity ``V(t, x)`` with analytic derivatives.

    Families (``s(t) = amplitude * exp(-rate_gamma * t)``):

    * ``zero``               V = 0
    * ``rigid_translation``  V = s(t) * direction
    * ``rigid_rotation``     V = s(t) * W (x - center), W skew (d = 2, 3)
    * ``radial_dilation``    V = s(t) * (x - center)
    * ``custom_table``       multilinear interpolation of CSV samples
    """

    family: str = "zero"
    amplitude: float = 0.0
    rate_gamma: float = 0.0
    dim: int = 1
    direction: tuple | None = None
    center: tuple | None = None
    axis: tuple | None = None
    box: tuple | None = None
    table: str | None = None
    _interp: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown motion family {self.family!r}")
        d = self.dim
        self.direction = np.asarray(self.direction if self.direction is not None else np.eye(d)[0], dtype=float)
        self.center = np.asarray(self.center if self.center is not None else np.full(d, 0.5), dtype=float)
        if self.family == "rigid_rotation":
            self._W = _skew(d, self.axis)
        if self.family == "custom_table":
            self._load_table()

    # envelope ---------------------------------------------------------
    def scale(self, t) -> np.ndarray:
        return self.amplitude * np.exp(-self.rate_gamma * np.asarray(t, dtype=float))

    def dscale(self, t) -> np.ndarray:
        return -self.rate_gamma * self.scale(t)

    def _shape(self, x: np.ndarray) -> np.ndarray:
        if self.family == "zero":
            return np.zeros_like(x)
        if self.family == "rigid_translation":
            return np.broadcast_to(self.direction, x.shape).copy()
        if self.family == "rigid_rotation":
            return (x - self.center) @ self._W.T
        if self.family == "radial_dilation":
            return x - self.center
        raise AssertionError

    def velocity(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.family == "custom_table":
            return self._sample(t, x)
        return self.scale(t) * self._shape(x)

    def dt_velocity(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.family == "custom_table":
            eps = 1e-6
            return (self._sample(t + eps, x) - self._sample(max(t - eps, 0.0), x)) / (t + eps - max(t - eps, 0.0))
        return self.dscale(t) * self._shape(x)

    def grad_velocity(self, t: float, x) -> np.ndarray:
        """``[..., i, j] = dV_j/dx_i``."""
        x = np.asarray(x, dtype=float)
        d = self.dim
        lead = x.shape[:-1]
        if self.family in ("zero", "rigid_translation"):
            return np.zeros(lead + (d, d))
        if self.family == "rigid_rotation":
            return np.broadcast_to(self.scale(t) * self._W.T, lead + (d, d)).copy()
        if self.family == "radial_dilation":
            return np.broadcast_to(self.scale(t) * np.eye(d), lead + (d, d)).copy()
        eps = 1e-6
        out = np.empty(lead + (d, d))
        for i in range(d):
            e = np.zeros(d)
            e[i] = eps
            out[..., i, :] = (self._sample(t, x + e) - self._sample(t, x - e)) / (2 * eps)
        return out

    def hess_velocity(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = self.dim
        if self.family != "custom_table":
            return np.zeros(x.shape[:-1] + (d, d, d))
        eps = 1e-4
        out = np.empty(x.shape[:-1] + (d, d, d))
        for l in range(d):
            e = np.zeros(d)
            e[l] = eps
            out[..., l, :, :] = (self.grad_velocity(t, x + e) - self.grad_velocity(t, x - e)) / (2 * eps)
        return out

    def envelope_constant(self, box=None) -> float:
        """``C`` with ``|dV/dt| + |grad V| + |grad^2 V| <= C * s(t)`` on the box."""
        d = self.dim
        if self.family == "zero" or self.amplitude == 0:
            return 0.0
        box = box or self.box
        if box is None:
            raise ValueError("envelope needs a bounding box")
        low, high = (np.asarray(b, dtype=float) for b in box)
        corners = np.array(np.meshgrid(*[[a, b] for a, b in zip(low, high)], indexing="ij")).reshape(d, -1).T
        rmax = np.max(np.linalg.norm(corners - self.center, axis=-1))
        if self.family == "rigid_translation":
            return self.rate_gamma * float(np.linalg.norm(self.direction))
        if self.family == "rigid_rotation":
            return self.rate_gamma * float(np.linalg.norm(self._W, 2)) * rmax + float(np.linalg.norm(self._W))
        if self.family == "radial_dilation":
            return self.rate_gamma * rmax + np.sqrt(d)
        return np.inf

    # custom table -------------------------------------------------------
    def _load_table(self) -> None:
        if not self.table:
            raise ConfigError("custom_table motion needs motion.table (CSV path)")
        path = Path(self.table)
        if not path.exists():
            raise ConfigError(f"motion table {path} not found")
        with path.open() as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        header, body = rows[0], np.array(rows[1:], dtype=float)
        d = self.dim
        if len(header) != 1 + 2 * d:
            raise ConfigError(f"motion table needs columns t, x1..x{d}, V1..V{d}")
        cols = [np.unique(body[:, i]) for i in range(1 + d)]
        shape = tuple(len(c) for c in cols)
        if np.prod(shape) != len(body):
            raise ConfigError("motion table samples must form a full regular (t, x) grid")
        order = np.lexsort(tuple(body[:, i] for i in reversed(range(1 + d))))
        vals = body[order, 1 + d:].reshape(shape + (d,))
        self._interp = RegularGridInterpolator(cols, vals, method="linear", bounds_error=False, fill_value=None)
        self._tmax = cols[0][-1]

    def _sample(self, t: float, x: np.ndarray) -> np.ndarray:
        pts = np.asarray(x, dtype=float).reshape(-1, self.dim)
        tt = np.full((len(pts), 1), min(max(t, 0.0), self._tmax))
        return self._interp(np.hstack([tt, pts])).reshape(np.shape(x))


def motion_positions(motion: BoundaryMotion, grid: Grid, time_grid: TimeGrid, start=None, box=None) -> np.ndarray:
    """Positions ``X_V(t_n, y)`` of grid labels transported by ``V`` itself,
    starting from ``start`` (defaults to the node coordinates at ``t0``)."""
    start = grid.coords() if start is None else start
    box = box or motion.box or (grid.low, grid.high)
    if motion.family == "zero" or (motion.family != "custom_table" and motion.amplitude == 0):
        return np.broadcast_to(start, (time_grid.nsteps + 1,) + start.shape).copy()
    return track_points(motion.velocity, start, time_grid, box)
