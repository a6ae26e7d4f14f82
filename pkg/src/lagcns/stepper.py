"""Implicit time stepping of the linearized momentum/continuity system.

Unknowns are ordered node-major with the velocity component fastest
(``index = node * d + component``), matching ``u.reshape(-1)``.  Density is
eliminated: with a theta-scheme (theta = 1 is backward Euler)

    eta^{n+1} = eta^n + dt*g_th - dt*rho0*div(u_th),   u_th = theta*u^{n+1} + (1-theta)*u^n

and the velocity system

    rho0/dt - theta*L - theta^2*dt*gamma0*grad(rho0 div)

is factored once per problem.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .errors import BlowUpError, SolverDivergenceError
from .fields import Grid, TimeGrid, Trajectory, grad_div, laplacian, time_derivative
from .transformed import LiftData, LinearRHS, MaterialParams


# ------------------------------------------------------------ sparse stencils

def d1_matrix(n: int, h: float) -> sps.csr_matrix:
    """1D first derivative, same stencil as ``np.gradient(edge_order=2)``."""
    A = sps.lil_matrix((n, n))
    for i in range(1, n - 1):
        A[i, i - 1], A[i, i + 1] = -0.5 / h, 0.5 / h
    A[0, 0:3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
    A[n - 1, n - 3:n] = np.array([1.0, -4.0, 3.0]) / (2 * h)
    return A.tocsr()


def d2_matrix(n: int, h: float) -> sps.csr_matrix:
    """1D second derivative matching :func:`lagcns.fields.d2`."""
    A = sps.lil_matrix((n, n))
    for i in range(1, n - 1):
        A[i, i - 1:i + 2] = np.array([1.0, -2.0, 1.0]) / h**2
    if n >= 4:
        A[0, 0:4] = np.array([2.0, -5.0, 4.0, -1.0]) / h**2
        A[n - 1, n - 4:n] = np.array([-1.0, 4.0, -5.0, 2.0]) / h**2
    else:
        A[0] = A[1]
        A[n - 1] = A[n - 2]
    return A.tocsr()


def _axis_op(grid: Grid, ax: int, op1d) -> sps.csr_matrix:
    mats = [sps.identity(n, format="csr") for n in grid.extents]
    mats[ax] = op1d
    out = mats[0]
    for m in mats[1:]:
        out = sps.kron(out, m, format="csr")
    return out


@dataclass
class Operators:
    """Scalar-node operators and their vector-valued liftings for one grid."""

    D1: list
    D2: list
    lap: sps.csr_matrix
    graddiv: sps.csr_matrix
    div: sps.csr_matrix
    grad: sps.csr_matrix


@lru_cache(maxsize=16)
def operators(grid: Grid) -> Operators:
    d = grid.dim
    D1 = [_axis_op(grid, a, d1_matrix(grid.extents[a], grid.spacing[a])) for a in range(d)]
    D2 = [_axis_op(grid, a, d2_matrix(grid.extents[a], grid.spacing[a])) for a in range(d)]
    Id = sps.identity(d, format="csr")
    lap = sum(sps.kron(D2[a], Id, format="csr") for a in range(d))
    blocks = []
    for i in range(d):
        for j in range(d):
            e = sps.csr_matrix(([1.0], ([i], [j])), shape=(d, d))
            op = D2[i] if i == j else D1[i] @ D1[j]
            blocks.append(sps.kron(op, e, format="csr"))
    graddiv = sum(blocks)
    div_ = sum(sps.kron(D1[j], sps.csr_matrix(([1.0], ([0], [j])), shape=(1, d)), format="csr") for j in range(d))
    grad_ = sum(sps.kron(D1[i], sps.csr_matrix(([1.0], ([i], [0])), shape=(d, 1)), format="csr") for i in range(d))
    return Operators(D1, D2, lap.tocsr(), graddiv.tocsr(), div_.tocsr(), grad_.tocsr())


# ------------------------------------------------------------ problem

@dataclass
class LinearProblem:
    grid: Grid
    time_grid: TimeGrid
    rho0: np.ndarray
    gamma0: np.ndarray
    mat: MaterialParams
    rhs: LinearRHS | None = None
    u_init: np.ndarray | None = None
    eta_init: np.ndarray | None = None
    bdata: np.ndarray | None = None
    scheme: str = "be"
    solver: str = "auto"
    tol: float = 1e-10
    rho_floor: float = 1e-3
    momentum_only: bool = False

    def __post_init__(self):
        g = self.grid
        self.rho0 = np.broadcast_to(np.asarray(self.rho0, dtype=float), g.extents).copy()
        self.gamma0 = np.broadcast_to(np.asarray(self.gamma0, dtype=float), g.extents).copy()
        if np.any(self.rho0 < self.rho_floor):
            raise ValueError(f"rho0 below floor {self.rho_floor}")
        if np.any(self.gamma0 < 0):
            raise ValueError("gamma0 must be nonnegative")
        if self.scheme not in ("be", "cn"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.solver not in ("auto", "direct", "krylov"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.u_init is None:
            self.u_init = np.zeros(g.extents + (g.dim,))
        if self.eta_init is None:
            self.eta_init = np.zeros(g.extents)
        if self.momentum_only:
            self.gamma0 = np.zeros(g.extents)

    @property
    def theta(self) -> float:
        return 1.0 if self.scheme == "be" else 0.5


class _Factor:
    """Solve ``A x = b`` to the problem's relative residual tolerance."""

    def __init__(self, A: sps.csr_matrix, method: str, tol: float):
        self.A = A.tocsc()
        self.tol = tol
        self.method = method
        if method == "direct":
            self.lu = spla.splu(self.A)
        else:
            dinv = 1.0 / A.diagonal()
            self.M = spla.LinearOperator(A.shape, matvec=lambda x: dinv * x)

    def solve(self, b: np.ndarray, x0=None) -> tuple[np.ndarray, float]:
        nb = np.linalg.norm(b)
        if nb == 0:
            return np.zeros_like(b), 0.0
        if self.method == "direct":
            x = self.lu.solve(b)
            r = b - self.A @ x
            if np.linalg.norm(r) > self.tol * nb:
                x = x + self.lu.solve(r)
        else:
            x, info = spla.gmres(self.A, b, x0=x0, rtol=self.tol, atol=0.0, M=self.M, restart=200, maxiter=50)
            if info < 0:
                raise SolverDivergenceError(f"step solver divergence: gmres info={info}")
        res = np.linalg.norm(b - self.A @ x) / nb
        if not np.isfinite(res) or res > max(self.tol, 1e-12) * 10:
            raise SolverDivergenceError(f"step solver divergence: relative residual {res:.3e}")
        return x, res


def _bmask(grid: Grid) -> np.ndarray:
    return np.repeat(grid.boundary_mask.reshape(-1), grid.dim)


def velocity_matrix(problem: LinearProblem) -> sps.csr_matrix:
    g, mat, th, dt = problem.grid, problem.mat, problem.theta, problem.time_grid.dt
    ops = operators(g)
    d = g.dim
    rho_v = np.repeat(problem.rho0.reshape(-1), d)
    gam_v = np.repeat(problem.gamma0.reshape(-1), d)
    L = mat.mu * ops.lap + mat.lam_combo * ops.graddiv
    A = sps.diags(rho_v / dt) - th * L
    if np.any(problem.gamma0 != 0):
        A = A - th * th * dt * sps.diags(gam_v) @ ops.grad @ sps.diags(problem.rho0.reshape(-1)) @ ops.div
    A = A.tolil()
    bm = np.flatnonzero(_bmask(g))
    A[bm, :] = 0.0
    A[bm, bm] = 1.0
    return A.tocsr()


def _level(arr, n, shape):
    return np.zeros(shape) if arr is None else np.asarray(arr[n], dtype=float).reshape(-1)


def solve_linear(problem: LinearProblem) -> Trajectory:
    """Integrate over the problem's time grid; returns ``rho = eta``, ``u``."""
    g, tg = problem.grid, problem.time_grid
    d, dt, th = g.dim, tg.dt, problem.theta
    N = g.n_nodes
    ops = operators(g)
    method = problem.solver
    if method == "auto":
        method = "direct" if d <= 2 else "krylov"
    fac = _Factor(velocity_matrix(problem), method, problem.tol)
    mat = problem.mat
    L = mat.mu * ops.lap + mat.lam_combo * ops.graddiv
    rho_n = problem.rho0.reshape(-1)
    rho_v = np.repeat(rho_n, d)
    gam_v = np.repeat(problem.gamma0.reshape(-1), d)
    coupled = np.any(problem.gamma0 != 0) and not problem.momentum_only
    bm = _bmask(g)
    rhs = problem.rhs
    f = None if rhs is None else rhs.f
    gsrc = None if rhs is None else rhs.g

    u = np.asarray(problem.u_init, dtype=float).reshape(-1).copy()
    eta = np.asarray(problem.eta_init, dtype=float).reshape(-1).copy()
    us, etas, diags = [u.copy()], [eta.copy()], []
    for n in range(tg.nsteps):
        f_th = th * _level(f, n + 1, d * N) + (1 - th) * _level(f, n, d * N)
        g_th = th * _level(gsrc, n + 1, N) + (1 - th) * _level(gsrc, n, N)
        b = rho_v * u / dt + f_th
        if th < 1:
            b += (1 - th) * (L @ u)
        if coupled:
            b -= gam_v * (ops.grad @ (eta + th * dt * g_th))
            if th < 1:
                b += th * (1 - th) * dt * gam_v * (ops.grad @ (rho_n * (ops.div @ u)))
        b[bm] = _level(problem.bdata, n + 1, d * N)[bm]
        u_new, res = fac.solve(b, x0=u)
        if problem.momentum_only:
            eta_new = eta
        else:
            eta_new = eta + dt * g_th - dt * rho_n * (ops.div @ (th * u_new + (1 - th) * u))
        if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(eta_new))):
            raise BlowUpError(f"blow-up detected at step {n + 1}")
        u, eta = u_new, eta_new
        us.append(u.copy())
        etas.append(eta.copy())
        diags.append({"step": n + 1, "residual": res, "eta_min": float(eta.min()), "eta_max": float(eta.max()),
                      "u_max": float(np.abs(u).max()) if u.size else 0.0})
    shape = (tg.nsteps + 1,) + g.extents
    return Trajectory(g, tg, np.stack(etas).reshape(shape), np.stack(us).reshape(shape + (d,)), diags)


def solve_momentum(problem: LinearProblem) -> Trajectory:
    """Velocity-only variant (no pressure coupling); ``rho`` of the result is zero."""
    p = LinearProblem(**{**problem.__dict__, "momentum_only": True, "gamma0": 0.0})
    traj = solve_linear(p)
    return Trajectory(traj.grid, traj.time_grid, np.zeros_like(traj.rho), traj.u, traj.diagnostics)


def solve_monolithic(problem: LinearProblem) -> Trajectory:
    """Backward Euler for the coupled (u, eta) pair as one block system, no elimination."""
    g, tg = problem.grid, problem.time_grid
    d, dt, N = g.dim, tg.dt, g.n_nodes
    ops = operators(g)
    mat = problem.mat
    L = mat.mu * ops.lap + mat.lam_combo * ops.graddiv
    rho_n = problem.rho0.reshape(-1)
    rho_v = np.repeat(rho_n, d)
    gam_v = np.repeat(problem.gamma0.reshape(-1), d)
    A11 = (sps.diags(rho_v / dt) - L).tolil()
    A12 = (sps.diags(gam_v) @ ops.grad).tolil()
    bm = np.flatnonzero(_bmask(g))
    A11[bm, :] = 0.0
    A11[bm, bm] = 1.0
    A12[bm, :] = 0.0
    A21 = sps.diags(rho_n) @ ops.div
    A22 = sps.identity(N) / dt
    A = sps.bmat([[A11.tocsr(), A12.tocsr()], [A21, A22]], format="csc")
    lu = spla.splu(A)
    rhs = problem.rhs
    u = np.asarray(problem.u_init, dtype=float).reshape(-1).copy()
    eta = np.asarray(problem.eta_init, dtype=float).reshape(-1).copy()
    us, etas = [u.copy()], [eta.copy()]
    for n in range(tg.nsteps):
        b1 = rho_v * u / dt + (0 if rhs is None else rhs.f[n + 1].reshape(-1))
        b1[bm] = _level(problem.bdata, n + 1, d * N)[bm]
        b2 = eta / dt + (0 if rhs is None else rhs.g[n + 1].reshape(-1))
        x = lu.solve(np.concatenate([b1, b2]))
        u, eta = x[: d * N], x[d * N:]
        us.append(u.copy())
        etas.append(eta.copy())
    shape = (tg.nsteps + 1,) + g.extents
    return Trajectory(g, tg, np.stack(etas).reshape(shape), np.stack(us).reshape(shape + (d,)))


def lift_boundary(v_tilde: np.ndarray, rho_ref, grid: Grid, time_grid: TimeGrid, mat: MaterialParams,
                  scheme: str = "be", solver: str = "auto") -> LiftData:
    """Parabolic lifting of boundary values ``v_tilde`` (time series of vector
    fields whose boundary nodes carry the data).

    Solves ``rho_ref d_t u_b - mu lap u_b - (mu/3 + zeta) grad div u_b = 0`` with
    ``u_b = v_tilde`` on the boundary and ``u_b(0) = v_tilde(0)``, via the
    shifted unknown ``w = u_b - v_tilde`` with homogeneous data.  The time
    derivative of ``v_tilde`` in the shifted source is the backward difference,
    so ``u_b`` satisfies the discrete lifting equation exactly.
    """
    rho = np.broadcast_to(np.asarray(rho_ref, dtype=float), grid.extents)
    dvt = time_derivative(v_tilde, time_grid.dt)
    if not np.any(v_tilde):
        z = np.zeros_like(v_tilde)
        return LiftData(z, z.copy(), z.copy())
    src = -(rho[..., None] * dvt - mat.mu * laplacian(v_tilde, grid) - mat.lam_combo * grad_div(v_tilde, grid))
    nlev = time_grid.nsteps + 1
    prob = LinearProblem(
        grid, time_grid, rho, 0.0, mat,
        rhs=LinearRHS(src, np.zeros((nlev,) + grid.extents)),
        scheme=scheme, solver=solver, momentum_only=True,
    )
    w = solve_linear(prob).u
    u_b = w + v_tilde
    return LiftData(u_b, time_derivative(u_b, time_grid.dt), np.array(v_tilde))


def boundary_extension(motion, grid: Grid, time_grid: TimeGrid, positions: np.ndarray) -> np.ndarray:
    """``V(t_n, X_V(t_n, y))`` at every node, ``positions`` from
    :func:`lagcns.lagrangian.motion_positions`."""
    return np.stack([motion.velocity(t, positions[n]) for n, t in enumerate(time_grid.times)])
