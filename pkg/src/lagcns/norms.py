"""Discrete space-time norms: L_p(L_q), L_p(W^k_q), the composite solution
norms, a Besov-trace surrogate and Eulerian norms evaluated by pullback.

Conventions
-----------
* Space integrals use the grid's trapezoid weights, time integrals the time
  grid's trapezoid weights.
* ``||f||_{W^k_q} = (sum_{o<=k} ||grad^o f||_q^q)^{1/q}`` with pointwise
  Frobenius magnitudes.
* Time derivatives are backward differences on the trajectory's own time grid.
* A decay weight ``gamma > 0`` multiplies the space norm at time ``t`` by
  ``exp(gamma t)`` before the time quadrature.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import FlowDegenerateError, InconsistentTrajectoryError
from .fields import Grid, TimeGrid, Trajectory, gradient, hess, pointwise_norm, time_derivative

KINDS = ("Lp_Lq", "Lp_W1q", "Lp_W2q", "X_norm", "Y_norm", "dotY_seminorm", "besov_trace_surrogate")
ADMISSIBLE_KINDS = ("X_norm", "Y_norm", "dotY_seminorm")


def admissible(p: float, q: float) -> bool:
    return 2.0 / p + 3.0 / q < 1.0


@dataclass(frozen=True)
class NormSpec:
    p: float = 4.0
    q: float = 8.0
    gamma: float = 0.0
    kind: str = "Lp_Lq"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown norm kind {self.kind!r}")
        if not (1 < self.p < np.inf and 1 < self.q < np.inf):
            raise ValueError("norm exponents must satisfy 1 < p, q < inf")
        if self.gamma < 0:
            raise ValueError("decay weight gamma must be >= 0")
        if self.kind in ADMISSIBLE_KINDS and not admissible(self.p, self.q):
            raise ValueError(f"2/p+3/q<1 violated (p={self.p}, q={self.q})")

    def with_kind(self, kind: str) -> NormSpec:
        return NormSpec(self.p, self.q, self.gamma, kind)


@dataclass
class NormReport:
    spec: NormSpec
    value: float
    components: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"spec": asdict(self.spec), "value": self.value, "components": dict(self.components)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> NormReport:
        return cls(NormSpec(**d["spec"]), float(d["value"]), dict(d["components"]))


# ------------------------------------------------------------ space norms

def lq_norm(a: np.ndarray, grid: Grid, q: float, rank: int, density=None) -> np.ndarray:
    """Space L_q norm of each leading-axis slice. ``density`` is an optional
    nonnegative weight (e.g. a Jacobian determinant)."""
    w = grid.weights()
    if density is not None:
        w = w * density
    mag = pointwise_norm(a, grid, rank)
    axes = tuple(range(-grid.dim, 0))
    return np.sum(w * mag**q, axis=axes) ** (1.0 / q)


def wkq_norm(a: np.ndarray, grid: Grid, q: float, k: int, rank: int) -> np.ndarray:
    total = lq_norm(a, grid, q, rank) ** q
    if k >= 1:
        total = total + lq_norm(gradient(a, grid, rank), grid, q, rank + 1) ** q
    if k >= 2:
        total = total + lq_norm(hess(a, grid, rank), grid, q, rank + 2) ** q
    return total ** (1.0 / q)


def time_lp(values: np.ndarray, time_grid: TimeGrid, p: float, gamma: float = 0.0) -> float:
    """Trapezoid L_p norm in time of a per-level sequence of space norms."""
    values = np.asarray(values, dtype=float)
    if gamma:
        values = values * np.exp(gamma * time_grid.times)
    return float(np.sum(time_grid.weights() * values**p) ** (1.0 / p))


def _check_series(a: np.ndarray, grid: Grid, time_grid: TimeGrid) -> int:
    a = np.asarray(a)
    if a.ndim < 1 + grid.dim or a.shape[0] != time_grid.nsteps + 1 or tuple(a.shape[1:1 + grid.dim]) != grid.extents:
        raise InconsistentTrajectoryError(
            f"inconsistent trajectory: series of shape {a.shape} on grid {grid.extents} with {time_grid.nsteps + 1} levels"
        )
    return a.ndim - 1 - grid.dim


def lp_lq_norm(series: np.ndarray, grid: Grid, time_grid: TimeGrid, spec: NormSpec) -> NormReport:
    """L_p in time of L_q / W^1_q / W^2_q in space for a time series of fields."""
    order = {"Lp_Lq": 0, "Lp_W1q": 1, "Lp_W2q": 2}
    if spec.kind not in order:
        raise ValueError(f"lp_lq_norm handles Lp_Lq/Lp_W1q/Lp_W2q, not {spec.kind}")
    if isinstance(series, (list, tuple)):
        arrays = [np.asarray(getattr(f, "values", f), dtype=float) for f in series]
        if len({a.shape for a in arrays}) != 1 or any(getattr(f, "grid", grid) != grid for f in series):
            raise InconsistentTrajectoryError("inconsistent trajectory: frames differ in grid or shape")
        series = np.stack(arrays)
    rank = _check_series(series, grid, time_grid)
    space = wkq_norm(series, grid, spec.q, order[spec.kind], rank)
    value = time_lp(space, time_grid, spec.p, spec.gamma)
    return NormReport(spec, value, {spec.kind: value})


def _lp(series, grid, tg, spec, kind):
    return lp_lq_norm(series, grid, tg, NormSpec(spec.p, spec.q, spec.gamma, kind)).value


def composite_norm(traj: Trajectory, spec: NormSpec, flows=None, transport=None) -> NormReport:
    """Solution-space norms of a (density-like g, velocity-like v) trajectory.

    ``Y_norm``        ||v||_{Lp W2q} + ||v_t||_{Lp Lq} + ||g||_{Lp W1q} + ||g_t||_{Lp W1q}
    ``dotY_seminorm`` ||v||_{Lp W2q} + ||v_t||_{Lp Lq} + ||grad g||_{Lp Lq} + ||g_t||_{Lp W1q}
    ``X_norm``        ||v||_{Lp W2q} + ||v_t||_{Lp Lq} + ||g||_{Lp W1q} + ||g_t||_{Lp Lq}
                      measured on the moving domain when a time series of
                      flow states is supplied (identity flow otherwise);
                      ``transport`` is the fluid velocity used in the material
                      derivative (defaults to ``traj.u``).
    """
    grid, tg = traj.grid, traj.time_grid
    if tg.nsteps < 1:
        raise InconsistentTrajectoryError("inconsistent trajectory: need at least two time levels")
    g, v = traj.rho, traj.u
    g_t = time_derivative(g, tg.dt)
    v_t = time_derivative(v, tg.dt)
    comps = {}
    if spec.kind == "Y_norm":
        comps["v_Lp_W2q"] = _lp(v, grid, tg, spec, "Lp_W2q")
        comps["v_t_Lp_Lq"] = _lp(v_t, grid, tg, spec, "Lp_Lq")
        comps["g_Lp_W1q"] = _lp(g, grid, tg, spec, "Lp_W1q")
        comps["g_t_Lp_W1q"] = _lp(g_t, grid, tg, spec, "Lp_W1q")
    elif spec.kind == "dotY_seminorm":
        comps["v_Lp_W2q"] = _lp(v, grid, tg, spec, "Lp_W2q")
        comps["v_t_Lp_Lq"] = _lp(v_t, grid, tg, spec, "Lp_Lq")
        comps["grad_g_Lp_Lq"] = _lp(gradient(g, grid, 0), grid, tg, spec, "Lp_Lq")
        comps["g_t_Lp_W1q"] = _lp(g_t, grid, tg, spec, "Lp_W1q")
    elif spec.kind == "X_norm":
        if flows is None:
            comps["v_Lp_W2q"] = _lp(v, grid, tg, spec, "Lp_W2q")
            comps["v_t_Lp_Lq"] = _lp(v_t, grid, tg, spec, "Lp_Lq")
            comps["g_Lp_W1q"] = _lp(g, grid, tg, spec, "Lp_W1q")
            comps["g_t_Lp_Lq"] = _lp(g_t, grid, tg, spec, "Lp_Lq")
        else:
            comps.update(_eulerian_x_components(traj, flows, spec, g_t, v_t, transport))
    else:
        raise ValueError(f"composite_norm does not handle {spec.kind}")
    return NormReport(spec, float(sum(comps.values())), comps)


def _eulerian_x_components(traj, flows, spec, g_t, v_t, transport):
    """X-norm summands on Omega_t. Eulerian time derivatives follow from the
    material derivative: f_t = f~_t - u . grad_x f."""
    grid, tg = traj.grid, traj.time_grid
    B = np.eye(grid.dim) + flows.e0
    det = flows.det_jac
    if np.any(det <= 0):
        raise FlowDegenerateError("flow map degenerate: nonpositive Jacobian determinant")
    g, v = traj.rho, traj.u
    grad_g = np.einsum("...ij,...j->...i", B, gradient(g, grid, 0))
    grad_v = np.einsum("...ij,...jk->...ik", B, gradient(v, grid, 1))
    hess_v = eulerian_hessian(v, grid, flows, rank=1)
    q = spec.q

    def lp(space):
        return time_lp(space, tg, spec.p, spec.gamma)

    def lqd(a, rank):
        return lq_norm(a, grid, q, rank, density=det)

    v_w2 = (lqd(v, 1) ** q + lqd(grad_v, 2) ** q + lqd(hess_v, 3) ** q) ** (1 / q)
    g_w1 = (lqd(g, 0) ** q + lqd(grad_g, 1) ** q) ** (1 / q)
    u = traj.u if transport is None else transport
    g_t_e = g_t - np.einsum("...i,...i->...", u, grad_g)
    v_t_e = v_t - np.einsum("...i,...ij->...j", u, grad_v)
    return {
        "v_Lp_W2q": lp(v_w2),
        "v_t_Lp_Lq": lp(lqd(v_t_e, 1)),
        "g_Lp_W1q": lp(g_w1),
        "g_t_Lp_Lq": lp(lqd(g_t_e, 0)),
    }


def eulerian_hessian(a: np.ndarray, grid: Grid, flow, rank: int) -> np.ndarray:
    """``d_{x_i} d_{x_j} f = B_ia d_a (B_jb d_b f)`` with ``B = I + E0`` and
    ``d_a B = -B (d_a k) B``."""
    B = np.eye(grid.dim) + flow.e0
    g1 = gradient(a, grid, rank)
    h = hess(a, grid, rank)
    dB = -np.einsum("...ij,...ajk,...kl->...ail", B, flow.grad_k, B)
    letters = "pqrs"[:rank]
    term1 = np.einsum(f"...ia,...jb,...ab{letters}->...ij{letters}", B, B, h)
    term2 = np.einsum(f"...ia,...ajb,...b{letters}->...ij{letters}", B, dB, g1)
    return term1 + term2


# ---------------------------------------------------------- Besov surrogate

def besov_trace_surrogate(f: np.ndarray, grid: Grid, p: float, q: float, chunk: int = 2048) -> float:
    """``||f||_{W1q}`` plus the order ``1 - 2/p`` Gagliardo seminorm of ``grad f``.

    A monotone, norm-like stand-in for the trace-space norm of initial
    velocities; used for reporting and smallness checks only.
    """
    if not p > 2:
        raise ValueError("surrogate needs p > 2")
    f = np.asarray(getattr(f, "values", f), dtype=float)
    rank = f.ndim - grid.dim
    base = float(wkq_norm(f, grid, q, 1, rank))
    g = gradient(f, grid, rank).reshape(grid.n_nodes, -1)
    x = grid.coords().reshape(grid.n_nodes, grid.dim)
    w = grid.weights().ravel()
    s1 = 1.0 - 2.0 / p
    expo = s1 * q + grid.dim
    total = 0.0
    n = grid.n_nodes
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        dist = np.sqrt(((x[sl, None, :] - x[None, :, :]) ** 2).sum(-1))
        diff = np.sqrt(((g[sl, None, :] - g[None, :, :]) ** 2).sum(-1))
        with np.errstate(divide="ignore", invalid="ignore"):
            term = np.where(dist > 0, diff**q / np.where(dist > 0, dist, 1.0) ** expo, 0.0)
        total += float(np.sum(term * w[sl, None] * w[None, :]))
    return base + total ** (1.0 / q)


# ------------------------------------------------------ Eulerian pullback

def eulerian_pullback_norm(f: np.ndarray, grid: Grid, flow, spec: NormSpec) -> float:
    """Norm on ``Omega_t`` of a field given on the reference grid, by change
    of variables: ``int_{Omega_t} |f|^q dx = int_{Omega_0} |f~|^q det(grad X) dy``."""
    f = np.asarray(getattr(f, "values", f), dtype=float)
    order = {"Lp_Lq": 0, "Lp_W1q": 1, "Lp_W2q": 2}[spec.kind]
    det = flow.det_jac
    rank = f.ndim - np.ndim(det)
    if rank > 1 and order >= 1:
        raise ValueError("Eulerian gradient norms are implemented for scalar and vector fields")
    if np.any(det <= 0):
        raise FlowDegenerateError("flow map degenerate: nonpositive Jacobian determinant")
    q = spec.q
    total = lq_norm(f, grid, q, rank, density=det) ** q
    if order >= 1:
        B = np.eye(grid.dim) + flow.e0
        sub = "...ij,...j->...i" if rank == 0 else "...ij,...jk->...ik"
        gx = np.einsum(sub, B, gradient(f, grid, rank))
        total = total + lq_norm(gx, grid, q, rank + 1, density=det) ** q
    if order >= 2:
        total = total + lq_norm(eulerian_hessian(f, grid, flow, rank), grid, q, rank + 2, density=det) ** q
    out = total ** (1.0 / q)
    return float(out) if np.ndim(out) == 0 else out


# -------------------------------------------------------- embedding check

def embedding_check(series: np.ndarray, grid: Grid, time_grid: TimeGrid, p: float, q: float) -> dict:
    """Discrete form of ``int_0^T ||grad f||_inf dt <= T^{1/p'} C ||f||_{Lp W2q}``
    with ``C`` the measured ratio ``max_t ||grad f||_inf / ||f||_{W2q}``."""
    rank = _check_series(series, grid, time_grid)
    gmax = pointwise_norm(gradient(series, grid, rank), grid, rank + 1).reshape(len(series), -1).max(axis=1)
    w2 = wkq_norm(series, grid, q, 2, rank)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(w2 > 0, gmax / np.where(w2 > 0, w2, 1.0), 0.0)
    c_embed = float(ratio.max())
    lhs = float(np.sum(time_grid.weights() * gmax))
    p_dual = p / (p - 1.0)
    rhs = time_grid.length ** (1.0 / p_dual) * c_embed * time_lp(w2, time_grid, p)
    return {"lhs": lhs, "rhs": rhs, "c_embed": c_embed}
