"""Symbolic oracles: frame-change identities on analytic flows and
manufactured solutions for the linear stepper."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .fields import Grid, TimeGrid, div, grad_div, laplacian
from .lagrangian import FlowState
from .stepper import LinearProblem, solve_linear
from .transformed import (
    LinearRHS,
    MaterialParams,
    PressureLaw,
    pressure_gradient,
    transform_div,
    transform_grad_div,
    transform_laplacian,
    transform_pressure_grad,
)

IDENTITIES = ("div", "pressure_grad", "laplacian", "grad_div")
FLOWS = ("identity", "dilation", "rotation", "shear", "nonlinear")


def _symbols(d):
    return sp.symbols(" ".join(f"y{i + 1}" for i in range(d)), real=True, seq=True)


def flow_map(name: str, d: int, ys, a: float = 0.1, theta: float = 0.2, s: float = 0.2):
    """Analytic flow map ``X(y)`` about the unit-box center."""
    c = [sp.Rational(1, 2)] * d
    if name == "identity":
        return list(ys)
    if name == "dilation":
        return [(1 + a) * y for y in ys]
    if name == "rotation":
        if d < 2:
            raise ValueError("rotation needs d >= 2")
        X = list(ys)
        r1, r2 = ys[0] - c[0], ys[1] - c[1]
        X[0] = c[0] + sp.cos(theta) * r1 - sp.sin(theta) * r2
        X[1] = c[1] + sp.sin(theta) * r1 + sp.cos(theta) * r2
        return X
    if name == "shear":
        if d < 2:
            raise ValueError("shear needs d >= 2")
        X = list(ys)
        X[0] = ys[0] + s * ys[1]
        return X
    if name == "nonlinear":
        X = [y + sp.Rational(1, 20) * y**2 for y in ys]
        if d >= 2:
            X[0] += sp.Rational(1, 10) * sp.sin(ys[1])
            X[1] += sp.Rational(2, 25) * ys[0] * ys[1]
        return X
    raise ValueError(f"unknown flow {name!r}")


def eulerian_fields(d: int, xs):
    """Analytic ``u(x)``, ``rho(x)`` used by the identity checks."""
    if d == 1:
        u = [sp.sin(2 * xs[0]) + xs[0] ** 3]
    elif d == 2:
        u = [sp.sin(xs[0]) * sp.cos(xs[1]), xs[0] ** 2 * xs[1] + sp.exp(xs[1])]
    else:
        u = [sp.sin(xs[0]) * sp.cos(xs[1]), xs[0] ** 2 * xs[2] + sp.exp(xs[1]), sp.cos(xs[0] + xs[2])]
    rho = 1 + sp.Rational(1, 5) * sp.cos(sum(xs))
    return u, rho


def _lamb(ys, expr, coords):
    f = sp.lambdify(ys, expr, "numpy")
    args = [coords[..., i] for i in range(coords.shape[-1])]
    return np.broadcast_to(np.asarray(f(*args), dtype=float), coords.shape[:-1]).copy()


@dataclass
class IdentityCase:
    """Symbolic data for one flow: ``k``, ``grad k``, composed fields and Eulerian oracles."""

    flow: str
    d: int
    ys: tuple
    k: list
    grad_k: list
    u_t: list
    rho_t: object
    oracle: dict

    @classmethod
    def build(cls, flow: str, d: int) -> IdentityCase:
        ys = _symbols(d)
        xs = sp.symbols(" ".join(f"x{i + 1}" for i in range(d)), real=True, seq=True)
        X = flow_map(flow, d, ys)
        k = [[sp.diff(X[j], ys[i]) - (1 if i == j else 0) for j in range(d)] for i in range(d)]
        gk = [[[sp.diff(k[i][j], ys[l]) for j in range(d)] for i in range(d)] for l in range(d)]
        u, rho = eulerian_fields(d, xs)
        sub = dict(zip(xs, X))
        pi = rho**2
        dv = sum(sp.diff(u[i], xs[i]) for i in range(d))
        oracle = {
            "div": dv.subs(sub),
            "pressure_grad": [sp.diff(pi, x).subs(sub) for x in xs],
            "laplacian": [sum(sp.diff(c, x, 2) for x in xs).subs(sub) for c in u],
            "grad_div": [sp.diff(dv, x).subs(sub) for x in xs],
        }
        return cls(flow, d, ys, k, gk, [c.subs(sub) for c in u], rho.subs(sub), oracle)

    def evaluate(self, grid: Grid) -> dict:
        """Max-node errors of the four identities on ``grid``."""
        c = grid.coords()
        d = self.d
        ev = lambda e: _lamb(self.ys, e, c)  # noqa: E731
        K = np.stack([np.stack([ev(self.k[i][j]) for j in range(d)], -1) for i in range(d)], -2)
        GK = np.stack(
            [np.stack([np.stack([ev(self.grad_k[l][i][j]) for j in range(d)], -1) for i in range(d)], -2)
             for l in range(d)],
            -3,
        )
        flow = FlowState.from_k(K, GK)
        u = np.stack([ev(e) for e in self.u_t], -1)
        rho = ev(self.rho_t)
        mat = MaterialParams(1.0, 0.0, PressureLaw("power", 1.0, 2.0), 1.0)
        got = {
            "div": transform_div(u, grid, flow),
            "pressure_grad": transform_pressure_grad(rho, grid, flow, mat),
            "laplacian": transform_laplacian(u, grid, flow),
            "grad_div": transform_grad_div(u, grid, flow),
        }
        if self.flow == "identity":
            # the two frames coincide; the reference is the plain discrete operator
            want = {
                "div": div(u, grid),
                "pressure_grad": pressure_gradient(rho, grid, mat),
                "laplacian": laplacian(u, grid),
                "grad_div": grad_div(u, grid),
            }
        else:
            want = {
                "div": ev(self.oracle["div"]),
                "pressure_grad": np.stack([ev(e) for e in self.oracle["pressure_grad"]], -1),
                "laplacian": np.stack([ev(e) for e in self.oracle["laplacian"]], -1),
                "grad_div": np.stack([ev(e) for e in self.oracle["grad_div"]], -1),
            }
        return {name: float(np.max(np.abs(got[name] - want[name]))) for name in IDENTITIES}


@dataclass
class TransformReport:
    rows: list = field(default_factory=list)  # dicts: flow, dim, identity, N, error, ratio

    def ratios(self):
        return [r["ratio"] for r in self.rows if r["ratio"] is not None]


def verify_transform(flows=("dilation", "rotation", "shear", "nonlinear"), dims=(1, 2), sizes=(17, 33, 65)) -> TransformReport:
    """Errors of the four identities for every (flow, dim) pair under h-halving."""
    rep = TransformReport()
    for d in dims:
        for flow in flows:
            if d == 1 and flow in ("rotation", "shear"):
                continue
            case = IdentityCase.build(flow, d)
            errs = [case.evaluate(Grid((n,) * d)) for n in sizes]
            for name in IDENTITIES:
                for i, n in enumerate(sizes):
                    e = errs[i][name]
                    ratio = None
                    if i > 0 and flow != "identity" and e > 0:
                        ratio = errs[i - 1][name] / e
                    rep.rows.append({"flow": flow, "dim": d, "identity": name, "N": n, "error": e, "ratio": ratio})
    return rep


# ------------------------------------------------------------ MMS

@dataclass
class MmsReport:
    rows: list = field(default_factory=list)  # study, dim, size, error_u, error_eta
    orders: dict = field(default_factory=dict)
    bands: dict = field(default_factory=lambda: {"time": (0.8, 1.2), "space": (1.7, 2.3)})

    @property
    def ok(self) -> bool:
        for (study, _), order in self.orders.items():
            lo, hi = self.bands[study]
            if not lo <= order <= hi:
                return False
        return bool(self.orders)


def _mms_fields(d: int, study: str):
    t = sp.symbols("t", real=True)
    ys = _symbols(d)
    if study == "time":
        # quadratic in space: all stencils exact
        shape_u = [ys[i] * (1 - ys[i]) + sp.Rational(1, 4) * ys[(i + 1) % d] ** 2 for i in range(d)]
        shape_e = sum(y**2 for y in ys) + ys[0] * ys[-1]
        u = [sp.sin(3 * t + i) * s for i, s in enumerate(shape_u)]
        eta = sp.cos(2 * t) * shape_e / 4
    else:
        # affine in time: backward Euler exact
        u = [(1 + t) * sp.sin(sp.pi * ys[i]) * sp.exp(ys[(i + 1) % d] / 2) for i in range(d)]
        eta = (1 + t / 2) * sp.cos(2 * ys[0]) * sp.exp(ys[-1] / 3) / 4
    return t, ys, u, eta


def manufactured_problem(grid: Grid, tg: TimeGrid, study: str, mat: MaterialParams, rho0: float = 1.0, gamma0: float = 1.2):
    """Linear problem with sources injected so the chosen analytic pair solves it."""
    d = grid.dim
    t, ys, u, eta = _mms_fields(d, study)
    lam = sp.Rational(1, 3) * sp.nsimplify(mat.mu) + sp.nsimplify(mat.zeta)
    divu = sum(sp.diff(u[i], ys[i]) for i in range(d))
    f = [
        rho0 * sp.diff(u[i], t)
        - mat.mu * sum(sp.diff(u[i], y, 2) for y in ys)
        - lam * sp.diff(divu, ys[i])
        + gamma0 * sp.diff(eta, ys[i])
        for i in range(d)
    ]
    g = sp.diff(eta, t) + rho0 * divu
    c = grid.coords()
    args = [c[..., i] for i in range(d)]

    def series(expr):
        fn = sp.lambdify((t,) + tuple(ys), expr, "numpy")
        return np.stack([np.broadcast_to(np.asarray(fn(tt, *args), dtype=float), grid.extents) for tt in tg.times])

    U = np.stack([series(e) for e in u], -1)
    E = series(eta)
    rhs = LinearRHS(np.stack([series(e) for e in f], -1), series(g))
    prob = LinearProblem(grid, tg, rho0, gamma0, mat, rhs=rhs, u_init=U[0], eta_init=E[0], bdata=U)
    return prob, U, E


def _order(sizes, errors) -> float:
    return float(np.polyfit(np.log(sizes), np.log(errors), 1)[0])


def mms_study(dims=(1, 2), time_steps=(20, 40, 80), space_sizes=(17, 33, 65), T: float = 0.5,
              time_N: int = 9, space_nsteps: int = 4, mat: MaterialParams | None = None) -> MmsReport:
    """Time order at fixed grid with spatially quadratic solutions; space order
    with solutions affine in time."""
    mat = mat or MaterialParams(1.0, 0.1, PressureLaw("linear", 1.0), 1.0)
    rep = MmsReport()
    for d in dims:
        errs = []
        for n in time_steps:
            grid = Grid((time_N,) * d)
            tg = TimeGrid(0.0, T, n)
            prob, U, E = manufactured_problem(grid, tg, "time", mat)
            traj = solve_linear(prob)
            eu, ee = float(np.abs(traj.u[-1] - U[-1]).max()), float(np.abs(traj.rho[-1] - E[-1]).max())
            errs.append(max(eu, ee))
            rep.rows.append({"study": "time", "dim": d, "size": tg.dt, "error_u": eu, "error_eta": ee})
        rep.orders[("time", d)] = _order([T / n for n in time_steps], errs)
        errs, hs = [], []
        for n in space_sizes:
            grid = Grid((n,) * d)
            tg = TimeGrid(0.0, T, space_nsteps)
            prob, U, E = manufactured_problem(grid, tg, "space", mat)
            traj = solve_linear(prob)
            eu, ee = float(np.abs(traj.u[-1] - U[-1]).max()), float(np.abs(traj.rho[-1] - E[-1]).max())
            errs.append(max(eu, ee))
            hs.append(grid.spacing[0])
            rep.rows.append({"study": "space", "dim": d, "size": grid.spacing[0], "error_u": eu, "error_eta": ee})
        rep.orders[("space", d)] = _order(hs, errs)
    return rep
