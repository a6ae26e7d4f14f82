"""Nonlinear solvers built on the linear stepper.

The unknown of the local problem is the perturbation pair ``(eta, v)`` with
``rho~ = eta + rho0`` and ``u~ = v + u_b``, where ``u_b`` is the parabolic
lifting of the boundary motion.  ``apply_S`` maps an iterate to the solution
of the linear problem whose right-hand side is evaluated at that iterate;
Picard iteration from zero converges to the nonlinear solution.

Global mode chains windows linearized about ``rho_star``; the flow map keeps
accumulating across windows.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    ConfigError,
    DensityOutOfRangeError,
    FlowDegenerateError,
    NonContractionError,
    SmallnessExitError,
)
from .fields import Grid, TimeGrid, Trajectory, integrate, jac, time_derivative
from .lagrangian import BoundaryMotion, FlowState, accumulate_history, concat_flows, motion_positions
from .norms import NormSpec, admissible, besov_trace_surrogate, composite_norm, lq_norm, wkq_norm
from .stepper import LinearProblem, boundary_extension, lift_boundary, solve_linear
from .transformed import LiftData, MaterialParams, rhs_local


@dataclass
class InitialData:
    rho0: np.ndarray
    u0: np.ndarray
    motion: BoundaryMotion


@dataclass
class LocalSolveConfig:
    T: float = 0.1
    nsteps: int = 20
    M: float = 1.0
    L: float = 10.0
    picard_tol: float = 1e-8
    max_iters: int = 50
    p: float = 4.0
    q: float = 8.0
    min_fraction: float = 1.0 / 16.0
    scheme: str = "be"
    solver: str = "auto"
    tol: float = 1e-10
    rho_floor: float = 1e-3
    det_floor: float = 0.5

    def __post_init__(self):
        errs = []
        if not admissible(self.p, self.q):
            errs.append(f"2/p+3/q<1 violated (p={self.p}, q={self.q}): admissibility of the exponents")
        for name in ("T", "M", "L", "picard_tol"):
            if not getattr(self, name) > 0:
                errs.append(f"{name} must be > 0")
        if int(self.nsteps) < 1 or int(self.max_iters) < 1:
            errs.append("nsteps and max_iters must be >= 1")
        if errs:
            raise ConfigError(errs)

    @property
    def y_spec(self) -> NormSpec:
        return NormSpec(self.p, self.q, 0.0, "Y_norm")


@dataclass
class GlobalSolveConfig:
    epsilon: float = 0.05
    gamma: float = 0.25
    window: float = 0.5
    max_windows: int = 8
    track_bootstrap: bool = True
    growth_windows: int = 3

    def __post_init__(self):
        errs = []
        if not self.epsilon > 0:
            errs.append("epsilon must be > 0")
        if not self.gamma > 0:
            errs.append("gamma must be > 0")
        if not self.window > 0:
            errs.append("window must be > 0")
        if int(self.max_windows) < 1:
            errs.append("max_windows must be >= 1")
        if errs:
            raise ConfigError(errs)


@dataclass
class Context:
    """Everything ``apply_S`` needs besides the iterate."""

    grid: Grid
    time_grid: TimeGrid
    mat: MaterialParams
    rho_lin: np.ndarray
    lift: LiftData
    eta_init: np.ndarray
    v_init: np.ndarray
    flow0: FlowState
    spec: NormSpec
    scheme: str = "be"
    solver: str = "auto"
    tol: float = 1e-10
    rho_floor: float = 1e-3

    @classmethod
    def make(cls, cfg: LocalSolveConfig, grid, tg, mat, rho_lin, lift, eta_init, v_init, flow0) -> Context:
        return cls(grid, tg, mat, rho_lin, lift, eta_init, v_init, flow0, cfg.y_spec, cfg.scheme, cfg.solver,
                   cfg.tol, cfg.rho_floor)

    def truncated(self, nsteps: int) -> Context:
        return replace(self, time_grid=self.time_grid.truncated(nsteps), lift=self.lift.truncated(nsteps + 1))

    def flows(self, v: np.ndarray) -> FlowState:
        return accumulate_history(self.flow0, v + self.lift.u_b, self.time_grid.dt, self.grid)


def apply_S(w: Trajectory, ctx: Context) -> Trajectory:
    """One application of the solution operator to the iterate ``w = (eta, v)``."""
    flows = ctx.flows(w.u)
    rhs = rhs_local(w.rho, w.u, ctx.grid, flows, ctx.mat, ctx.lift, ctx.rho_lin, ctx.time_grid.dt)
    prob = LinearProblem(
        ctx.grid, ctx.time_grid, ctx.rho_lin, ctx.mat.pressure_law.dpi(ctx.rho_lin), ctx.mat,
        rhs=rhs, u_init=ctx.v_init, eta_init=ctx.eta_init, bdata=None, scheme=ctx.scheme, solver=ctx.solver,
        tol=ctx.tol, rho_floor=ctx.rho_floor,
    )
    return solve_linear(prob)


def y_norm(w: Trajectory, spec: NormSpec) -> float:
    return composite_norm(w, spec).value


def y_distance(a: Trajectory, b: Trajectory, spec: NormSpec) -> float:
    return y_norm(Trajectory(a.grid, a.time_grid, a.rho - b.rho, a.u - b.u), spec)


@dataclass
class PicardResult:
    w: Trajectory
    distances: list
    ratios: list
    iterations: int
    converged: bool


def picard(ctx: Context, tol: float = 1e-8, max_iters: int = 50, stall: int = 3) -> PicardResult:
    """Iterate ``apply_S`` from zero until the relative Y-change drops below ``tol``.

    Raises :class:`NonContractionError` when the distance ratio stays >= 1
    for ``stall`` consecutive iterations.
    """
    w = Trajectory.zeros(ctx.grid, ctx.time_grid)
    distances, ratios = [], []
    bad = 0
    for it in range(1, max_iters + 1):
        w_new = apply_S(w, ctx)
        dist = y_distance(w_new, w, ctx.spec)
        size = y_norm(w_new, ctx.spec)
        distances.append(dist)
        if len(distances) > 1 and distances[-2] > 0:
            ratios.append(dist / distances[-2])
            bad = bad + 1 if ratios[-1] >= 1.0 else 0
            if bad >= stall:
                raise NonContractionError(
                    f"window too long, halve T: distance ratio >= 1 for {stall} iterations", distances
                )
        w = w_new
        if dist == 0.0 or dist <= tol * size:
            return PicardResult(w, distances, ratios, it, True)
    return PicardResult(w, distances, ratios, max_iters, False)


# ------------------------------------------------------------ diagnostics

def mass_history(rho: np.ndarray, flows: FlowState, grid: Grid) -> np.ndarray:
    """``int rho~ det(I + k) dy`` per time level."""
    return integrate(rho * flows.det_jac, grid)


def norm_equivalence(f: np.ndarray, flows: FlowState, grid: Grid, q: float, rank: int = 1) -> dict:
    """Eulerian over Lagrangian L_q ratios of a time series against the bound
    ``[(1 - 2 delta)^{d/q}, (1 + 2 delta)^{d/q}]``."""
    delta = float(np.max(flows.delta_accum))
    lag = lq_norm(f, grid, q, rank)
    eul = lq_norm(f, grid, q, rank, density=flows.det_jac)
    mask = lag > 0
    ratios = eul[mask] / lag[mask] if np.any(mask) else np.ones(1)
    d = grid.dim
    lo = (1 - 2 * delta) ** (d / q) if delta < 0.5 else 0.0
    hi = (1 + 2 * delta) ** (d / q)
    return {
        "delta": delta,
        "applicable": delta < 0.1,
        "lower": lo,
        "upper": hi,
        "min_ratio": float(ratios.min()),
        "max_ratio": float(ratios.max()),
        "ok": bool(ratios.min() >= lo and ratios.max() <= hi),
    }


def data_size(data: InitialData, grid: Grid, p: float, q: float, rho_ref=None) -> dict:
    """Sizes of the initial data: ``rho0`` (or ``rho0 - rho_ref``) in W^1_q,
    the trace surrogate of ``u0 - V(0)``, and the motion envelope."""
    rho = data.rho0 if rho_ref is None else data.rho0 - rho_ref
    u_rel = data.u0 - data.motion.velocity(0.0, grid.coords())
    out = {
        "rho_W1q": float(wkq_norm(rho, grid, q, 1, 0)),
        "u0_trace": float(besov_trace_surrogate(u_rel, grid, p, q)),
        "motion": float(abs(data.motion.amplitude) * (1.0 + data.motion.envelope_constant(tracking_box(data.motion, grid)))),
    }
    out["total"] = out["rho_W1q"] + out["u0_trace"] + out["motion"]
    return out


# ------------------------------------------------------------ local solve

@dataclass
class LocalResult:
    trajectory: Trajectory
    perturbation: Trajectory
    flows: FlowState
    lift: LiftData
    distances: list
    ratios: list
    iterations: int
    converged: bool
    T: float
    bisections: int
    reports: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)


def tracking_box(motion: BoundaryMotion, grid: Grid, pad: float = 1.0):
    """Configured bounding box of the motion, or the grid box padded by ``pad``."""
    if motion.box is not None:
        return motion.box
    return (tuple(a - pad for a in grid.low), tuple(b + pad for b in grid.high))


def build_lift(data: InitialData, grid: Grid, tg: TimeGrid, mat: MaterialParams, rho_ref, start=None,
               scheme="be", solver="auto"):
    """Track boundary labels with ``V`` and lift the resulting boundary values."""
    pos = motion_positions(data.motion, grid, tg, start=start, box=tracking_box(data.motion, grid))
    vt = boundary_extension(data.motion, grid, tg, pos)
    return lift_boundary(vt, rho_ref, grid, tg, mat, scheme, solver), pos


def _finish(ctx: Context, pic: PicardResult, rho_base, bisections: int, cfg_spec: NormSpec) -> LocalResult:
    w = pic.w
    flows = ctx.flows(w.u)
    rho = w.rho + rho_base
    u = w.u + ctx.lift.u_b
    traj = Trajectory(ctx.grid, ctx.time_grid, rho, u)
    x_spec = NormSpec(cfg_spec.p, cfg_spec.q, 0.0, "X_norm")
    pert = Trajectory(ctx.grid, ctx.time_grid, w.rho, w.u)
    reports = {
        "Y_perturbation": composite_norm(pert, cfg_spec),
        "X_lagrangian": composite_norm(traj, x_spec),
        "X_eulerian": composite_norm(traj, x_spec, flows=flows, transport=u),
    }
    mass = mass_history(rho, flows, ctx.grid)
    diags = {
        "mass": mass,
        "mass_drift": float(np.max(np.abs(mass - mass[0])) / abs(mass[0])) if mass[0] != 0 else 0.0,
        "norm_equivalence": norm_equivalence(u, flows, ctx.grid, cfg_spec.q),
        "delta": float(flows.delta_accum[-1]),
        "steps": pic.w.diagnostics,
    }
    return LocalResult(traj, pert, flows, ctx.lift, pic.distances, pic.ratios, pic.iterations, pic.converged,
                       ctx.time_grid.T - ctx.time_grid.t0, bisections, reports, diags)


def solve_local(cfg: LocalSolveConfig, data: InitialData, grid: Grid, mat: MaterialParams,
                check_data: bool = True) -> LocalResult:
    """Local-in-time solve: lift, then Picard-iterate; halve the window on
    non-contraction down to ``cfg.min_fraction * T``."""
    tg = TimeGrid(0.0, cfg.T, cfg.nsteps)
    if check_data:
        size = data_size(data, grid, cfg.p, cfg.q)
        if size["total"] > cfg.L:
            raise ConfigError(f"data bound violated: data size {size['total']:.4g} > L = {cfg.L}")
    rho0 = np.broadcast_to(np.asarray(data.rho0, dtype=float), grid.extents)
    lift, _ = build_lift(data, grid, tg, mat, rho0, scheme=cfg.scheme, solver=cfg.solver)
    ctx = Context.make(cfg, grid, tg, mat, rho0, lift, np.zeros(grid.extents), data.u0 - lift.u_b[0],
                       FlowState.identity(grid, cfg.det_floor))
    nsteps, bisections = cfg.nsteps, 0
    min_T = cfg.T * cfg.min_fraction
    while True:
        try:
            pic = picard(ctx, cfg.picard_tol, cfg.max_iters)
            break
        except NonContractionError as exc:
            nsteps //= 2
            if nsteps < 1 or nsteps * tg.dt < min_T - 1e-14:
                raise NonContractionError(f"non-contraction persists down to T = {min_T:.4g}", exc.distances) from exc
            bisections += 1
            ctx = ctx.truncated(nsteps)
    return _finish(ctx, pic, rho0, bisections, cfg.y_spec)


# ------------------------------------------------------------ global solve

@dataclass
class DecayReport:
    quantity: str
    gamma_fit: float | None
    residual: float | None
    times: np.ndarray
    values: np.ndarray
    message: str = ""
    weighted: dict = field(default_factory=dict)


def fit_decay(times, values, quantity: str = "grad_u_Lq") -> DecayReport:
    """Least-squares slope of ``log(values)`` over the second half of the time range.

    ``residual`` is the RMS deviation of the log-linear fit.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(times) < 10:
        raise ValueError("decay fit needs at least 10 time levels")
    if not np.any(values):
        return DecayReport(quantity, None, None, times, values, "exact equilibrium, rate undefined")
    sel = (times >= times[0] + 0.5 * (times[-1] - times[0])) & (values > 0)
    if sel.sum() < 2:
        return DecayReport(quantity, None, None, times, values, "exact equilibrium, rate undefined")
    coef = np.polyfit(times[sel], np.log(values[sel]), 1)
    resid = np.log(values[sel]) - np.polyval(coef, times[sel])
    return DecayReport(quantity, float(-coef[0]), float(np.sqrt(np.mean(resid**2))), times, values)


def decay_quantity(traj: Trajectory, quantity: str, q: float, rho_star: float = 0.0) -> np.ndarray:
    grid = traj.grid
    if quantity == "grad_u_Lq":
        return lq_norm(jac(traj.u, grid), grid, q, 2)
    if quantity == "eta_W1q":
        return wkq_norm(traj.rho - rho_star, grid, q, 1, 0)
    if quantity == "dt_u_Lq":
        return lq_norm(time_derivative(traj.u, traj.time_grid.dt), grid, q, 1)
    raise ValueError(f"unknown decay quantity {quantity!r}")


@dataclass
class GlobalResult:
    trajectory: Trajectory
    flows: FlowState
    windows: list
    trace: list
    decay: DecayReport
    diagnostics: dict = field(default_factory=dict)


def _window_weighted(pert: Trajectory, spec: NormSpec) -> float:
    """e^{gamma t}-weighted seminorm of the iterate ``(sigma, v)`` on one window;
    the lifted boundary velocity is not part of it."""
    return composite_norm(pert, NormSpec(spec.p, spec.q, spec.gamma, "dotY_seminorm")).value


def solve_global(lcfg: LocalSolveConfig, gcfg: GlobalSolveConfig, data: InitialData, grid: Grid,
                 mat: MaterialParams, quantity: str = "grad_u_Lq") -> GlobalResult:
    """Chain local solves on windows of length ``gcfg.window``, each linearized
    about ``rho_star`` and re-lifted from the window's start."""
    rho_star = mat.rho_star
    size = data_size(data, grid, lcfg.p, lcfg.q, rho_ref=rho_star)
    trace = [{"window": -1, "data_size": size["total"]}]
    if size["total"] > gcfg.epsilon:
        raise SmallnessExitError(
            f"smallness regime exited: data size {size['total']:.4g} > epsilon = {gcfg.epsilon}", trace
        )
    spec_w = NormSpec(lcfg.p, lcfg.q, gcfg.gamma, "dotY_seminorm")
    nsteps = max(1, int(round(lcfg.nsteps * gcfg.window / lcfg.T)))
    flow = FlowState.identity(grid, lcfg.det_floor)
    rho_now = np.broadcast_to(np.asarray(data.rho0, dtype=float), grid.extents).copy()
    u_now = np.asarray(data.u0, dtype=float).copy()
    start = None
    pieces, flow_pieces, windows = [], [], []
    x_acc, growth = 0.0, 0
    for k in range(gcfg.max_windows):
        tg = TimeGrid(k * gcfg.window, (k + 1) * gcfg.window, nsteps)
        try:
            lift, pos = build_lift(data, grid, tg, mat, rho_star, start=start, scheme=lcfg.scheme, solver=lcfg.solver)
            ctx = Context.make(lcfg, grid, tg, mat, np.full(grid.extents, rho_star), lift, rho_now - rho_star,
                               u_now - lift.u_b[0], flow)
            pic = picard(ctx, lcfg.picard_tol, lcfg.max_iters)
            flows = ctx.flows(pic.w.u)
        except (NonContractionError, FlowDegenerateError, DensityOutOfRangeError) as exc:
            trace.append({"window": k, "error": str(exc)})
            raise SmallnessExitError(f"smallness regime exited in window {k}: {exc}", trace) from exc
        traj = Trajectory(grid, tg, pic.w.rho + rho_star, pic.w.u + lift.u_b)
        inc = _window_weighted(pic.w, spec_w)
        x_acc = (x_acc**lcfg.p + inc**lcfg.p) ** (1.0 / lcfg.p)
        entry = {
            "window": k,
            "t0": tg.t0,
            "increment": inc,
            "x": x_acc,
            "iterations": pic.iterations,
            "bootstrap_C": x_acc / (gcfg.epsilon + x_acc**2),
            "small_root": bool(x_acc**2 <= gcfg.epsilon),
        }
        trace.append(entry)
        windows.append(entry)
        if len(windows) > 1 and inc > windows[-2]["increment"] * (1 + 1e-9) and inc > 1e-12:
            growth += 1
        else:
            growth = 0
        if gcfg.track_bootstrap and growth >= gcfg.growth_windows:
            raise SmallnessExitError(
                f"smallness regime exited: weighted increments grew over {growth} consecutive windows", trace
            )
        pieces.append(traj)
        flow_pieces.append(flows)
        flow = flows.last()
        rho_now, u_now = traj.rho[-1], traj.u[-1]
        start = pos[-1]
        if inc < 1e-12:
            break
    full = _concat(pieces)
    allflows = flow_pieces[0]
    for f in flow_pieces[1:]:
        allflows = concat_flows(allflows, f)
    decay = fit_decay(full.time_grid.times, decay_quantity(full, quantity, lcfg.q, rho_star), quantity)
    decay.weighted = {"increments": [w["increment"] for w in windows], "x": x_acc}
    mass = mass_history(full.rho, allflows, grid)
    diags = {
        "mass": mass,
        "norm_equivalence": norm_equivalence(full.u, allflows, grid, lcfg.q),
        "delta": float(allflows.delta_accum[-1]),
    }
    return GlobalResult(full, allflows, windows, trace, decay, diags)


def _concat(pieces: list[Trajectory]) -> Trajectory:
    first, last = pieces[0].time_grid, pieces[-1].time_grid
    n = sum(p.time_grid.nsteps for p in pieces)
    tg = TimeGrid(first.t0, last.T, n)
    rho = np.concatenate([pieces[0].rho] + [p.rho[1:] for p in pieces[1:]])
    u = np.concatenate([pieces[0].u] + [p.u[1:] for p in pieces[1:]])
    return Trajectory(pieces[0].grid, tg, rho, u)


# ------------------------------------------------------------ contraction study

@dataclass
class ContractionReport:
    rows: list  # (T, kappa, pair ratios, perturbation norms)

    def kappas(self) -> dict:
        return {r["T"]: r["kappa"] for r in self.rows}


def random_pair(grid: Grid, tg: TimeGrid, rng: np.random.Generator, modes: int = 3):
    """Smooth perturbation ``(t/T) psi(y)`` whose velocity vanishes on the boundary."""
    c = grid.coords()
    rel = [(c[..., a] - grid.low[a]) / (grid.high[a] - grid.low[a]) for a in range(grid.dim)]
    s = (tg.times - tg.t0) / tg.length
    eta = np.zeros(grid.extents)
    v = np.zeros(grid.extents + (grid.dim,))
    for m in range(1, modes + 1):
        ce = rng.normal()
        eta += ce * np.prod([np.cos(m * np.pi * r) for r in rel], axis=0)
        for i in range(grid.dim):
            v[..., i] += rng.normal() * np.prod([np.sin(m * np.pi * r) for r in rel], axis=0)
    return Trajectory(grid, tg, s[(...,) + (None,) * grid.dim] * eta, s[(...,) + (None,) * (grid.dim + 1)] * v)


def measure_contraction(cfg: LocalSolveConfig, data: InitialData, grid: Grid, mat: MaterialParams,
                        T_list, seed: int = 0, npairs: int = 5, map_fn=map) -> ContractionReport:
    """``kappa(T)`` = max over random pairs in the ball of radius ``M`` of
    ``||S w1 - S w2||_Y / ||w1 - w2||_Y``; the time step is ``cfg.T / cfg.nsteps``.

    Every ``T`` draws its pairs from a generator seeded with ``seed``, so the
    points are independent and ``map_fn`` may evaluate them concurrently.
    """
    dt = cfg.T / cfg.nsteps
    nmax = int(round(max(T_list) / dt))
    tg_max = TimeGrid(0.0, nmax * dt, nmax)
    rho0 = np.broadcast_to(np.asarray(data.rho0, dtype=float), grid.extents)
    lift, _ = build_lift(data, grid, tg_max, mat, rho0, scheme=cfg.scheme, solver=cfg.solver)
    base = Context.make(cfg, grid, tg_max, mat, rho0, lift, np.zeros(grid.extents), data.u0 - lift.u_b[0],
                        FlowState.identity(grid, cfg.det_floor))

    def one(T):
        ctx = base.truncated(int(round(T / dt)))
        rng = np.random.default_rng(seed)
        ratios, norms = [], []
        for _ in range(npairs):
            pair = []
            for _ in range(2):
                w = random_pair(grid, ctx.time_grid, rng)
                scale = cfg.M * rng.uniform(0.2, 1.0) / y_norm(w, cfg.y_spec)
                pair.append(Trajectory(grid, ctx.time_grid, w.rho * scale, w.u * scale))
            ratios.append(pair_ratio(pair[0], pair[1], ctx))
            norms.append([y_norm(w, cfg.y_spec) for w in pair])
        return {"T": float(T), "kappa": float(max(ratios)), "ratios": ratios, "norms": norms}

    return ContractionReport(list(map_fn(one, list(T_list))))


def pair_ratio(w1: Trajectory, w2: Trajectory, ctx: Context) -> float:
    """Contraction ratio of a single pair; identical inputs give 0."""
    d = y_distance(w1, w2, ctx.spec)
    if d == 0:
        return 0.0
    return y_distance(apply_S(w1, ctx), apply_S(w2, ctx), ctx.spec) / d
