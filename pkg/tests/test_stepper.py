import numpy as np
import pytest

from lagcns.errors import BlowUpError
from lagcns.fields import Grid, TimeGrid, integrate
from lagcns.fixpoint import y_norm
from lagcns.norms import NormSpec, besov_trace_surrogate, lp_lq_norm
from lagcns.stepper import (
    LinearProblem,
    lift_boundary,
    operators,
    solve_linear,
    solve_momentum,
    solve_monolithic,
    velocity_matrix,
)
from lagcns.transformed import LinearRHS, MaterialParams, PressureLaw
from lagcns.verification import mms_study

MAT = MaterialParams(1.0, 0.1, PressureLaw("power", 1.0, 1.4), 1.0)


def _bump(grid):
    return np.prod(np.sin(np.pi * grid.coords()), axis=-1)


def _random_problem(grid, tg, rng, with_bdata=False, **kw):
    nl = tg.nsteps + 1
    b = _bump(grid)
    f = rng.normal(size=(nl,) + grid.extents + (grid.dim,))
    g = rng.normal(size=(nl,) + grid.extents)
    u0 = rng.normal(size=grid.extents + (grid.dim,)) * b[..., None]
    eta0 = rng.normal(size=grid.extents)
    bdata = rng.normal(size=(nl,) + grid.extents + (grid.dim,)) if with_bdata else None
    y = grid.coords()
    rho0 = 1.0 + 0.3 * np.cos(y.sum(-1))
    gamma0 = 1.2 + 0.2 * np.sin(y[..., 0])
    return dict(grid=grid, time_grid=tg, rho0=rho0, gamma0=gamma0, mat=MAT, rhs=LinearRHS(f, g),
                u_init=u0, eta_init=eta0, bdata=bdata, **kw)


def test_zero_data_stays_zero(grid2):
    tg = TimeGrid(0.0, 0.2, 5)
    traj = solve_linear(LinearProblem(grid2, tg, 1.0, 1.4, MAT))
    assert np.all(traj.u == 0) and np.all(traj.rho == 0)
    assert y_norm(traj, NormSpec(kind="Y_norm")) == 0.0


def test_constant_density_perturbation_is_steady(grid2):
    tg = TimeGrid(0.0, 0.2, 5)
    traj = solve_linear(LinearProblem(grid2, tg, 1.0, 1.4, MAT, eta_init=np.full(grid2.extents, 0.3)))
    assert np.max(np.abs(traj.u)) < 1e-12
    np.testing.assert_allclose(traj.rho, 0.3, atol=1e-12)


def test_momentum_only_zero_and_diagnostics(grid1):
    tg = TimeGrid(0.0, 0.2, 4)
    traj = solve_momentum(LinearProblem(grid1, tg, 1.0, 1.4, MAT))
    assert np.all(traj.u == 0) and np.all(traj.rho == 0)
    assert [d["step"] for d in traj.diagnostics] == [1, 2, 3, 4]
    assert set(traj.diagnostics[0]) == {"step", "residual", "eta_min", "eta_max", "u_max"}


def test_boundary_rows_are_identity(grid2, rng):
    tg = TimeGrid(0.0, 0.1, 3)
    p = LinearProblem(**_random_problem(grid2, tg, rng, with_bdata=True))
    A = velocity_matrix(p)
    assert A.shape[0] == A.shape[1] == 2 * grid2.n_nodes
    traj = solve_linear(p)
    bm = grid2.boundary_mask
    np.testing.assert_allclose(traj.u[1:][:, bm], p.bdata[1:][:, bm], atol=1e-12)


def test_homogeneous_momentum_dissipates_energy(grid2, rng):
    tg = TimeGrid(0.0, 0.5, 25)
    y = grid2.coords()
    rho0 = 1.0 + 0.5 * y[..., 0]
    u0 = rng.normal(size=grid2.extents + (2,)) * _bump(grid2)[..., None]
    traj = solve_momentum(LinearProblem(grid2, tg, rho0, 0.0, MAT, u_init=u0))
    energy = integrate(rho0 * np.sum(traj.u**2, axis=-1), grid2)
    assert np.all(np.diff(energy) <= 1e-14 * energy[0])
    assert energy[-1] < 0.5 * energy[0]


def test_elimination_matches_block_solve(grid1, rng):
    tg = TimeGrid(0.0, 0.2, 10)
    kw = _random_problem(grid1, tg, rng)
    kw["bdata"] = np.zeros((11, 33, 1))
    a = solve_linear(LinearProblem(**kw))
    b = solve_monolithic(LinearProblem(**kw))
    assert np.max(np.abs(a.u - b.u)) <= 1e-9 * max(1.0, np.max(np.abs(b.u)))
    assert np.max(np.abs(a.rho - b.rho)) <= 1e-9 * max(1.0, np.max(np.abs(b.rho)))


@pytest.mark.parametrize("scheme", ["be", "cn"])
def test_superposition(grid2, rng, scheme):
    tg = TimeGrid(0.0, 0.1, 4)
    p1 = _random_problem(grid2, tg, rng, with_bdata=True, scheme=scheme)
    p2 = _random_problem(grid2, tg, rng, with_bdata=True, scheme=scheme)
    a, b = 0.7, -1.9
    mix = dict(p1)
    mix["rhs"] = LinearRHS(a * p1["rhs"].f + b * p2["rhs"].f, a * p1["rhs"].g + b * p2["rhs"].g)
    for key in ("u_init", "eta_init", "bdata"):
        mix[key] = a * p1[key] + b * p2[key]
    s1, s2, sm = (solve_linear(LinearProblem(**p)) for p in (p1, p2, mix))
    scale = max(np.max(np.abs(sm.u)), np.max(np.abs(sm.rho)), 1.0)
    assert np.max(np.abs(sm.u - (a * s1.u + b * s2.u))) <= 1e-10 * scale
    assert np.max(np.abs(sm.rho - (a * s1.rho + b * s2.rho))) <= 1e-10 * scale


def test_krylov_agrees_with_direct_in_3d(rng):
    g = Grid((7, 7, 7))
    tg = TimeGrid(0.0, 0.05, 2)
    kw = _random_problem(g, tg, rng)
    a = solve_linear(LinearProblem(**kw, solver="krylov"))
    b = solve_linear(LinearProblem(**kw, solver="direct"))
    assert np.max(np.abs(a.u - b.u)) <= 1e-7 * np.max(np.abs(b.u))
    assert max(d["residual"] for d in a.diagnostics) <= 1e-9


def test_nan_source_is_reported_as_blow_up(grid1):
    tg = TimeGrid(0.0, 0.1, 2)
    g = np.zeros((3, 33))
    g[2, 5] = np.nan
    rhs = LinearRHS(np.zeros((3, 33, 1)), g)
    with pytest.raises(BlowUpError, match="blow-up detected"):
        solve_linear(LinearProblem(grid1, tg, 1.0, 0.0, MAT, rhs=rhs))


def test_problem_validates_coefficients(grid1):
    tg = TimeGrid(0.0, 0.1, 2)
    with pytest.raises(ValueError, match="floor"):
        LinearProblem(grid1, tg, 1e-4, 1.0, MAT)
    with pytest.raises(ValueError, match="nonnegative"):
        LinearProblem(grid1, tg, 1.0, -1.0, MAT)


def test_operator_matrices_match_array_calculus(grid2, rng):
    from lagcns.fields import div, grad_div, laplacian

    ops = operators(grid2)
    u = rng.normal(size=grid2.extents + (2,))
    np.testing.assert_allclose((ops.lap @ u.reshape(-1)).reshape(u.shape), laplacian(u, grid2), atol=1e-9)
    np.testing.assert_allclose((ops.graddiv @ u.reshape(-1)).reshape(u.shape), grad_div(u, grid2), atol=1e-9)
    np.testing.assert_allclose((ops.div @ u.reshape(-1)).reshape(grid2.extents), div(u, grid2), atol=1e-10)


def test_mms_orders_1d():
    rep = mms_study(dims=(1,), time_steps=(20, 40, 80), space_sizes=(17, 33, 65))
    assert 0.8 <= rep.orders[("time", 1)] <= 1.2
    assert 1.7 <= rep.orders[("space", 1)] <= 2.3


def test_impulse_response_is_self_convergent(grid1):
    y = grid1.coords()[..., 0]
    spec = NormSpec(4, 8, kind="Y_norm")

    def run(n):
        tg = TimeGrid(0.0, 0.5, n)
        t = tg.times[:, None, None]
        f = (20.0 * np.exp(-((t - 0.05) / 0.03) ** 2) * np.sin(np.pi * y)[None, :, None])
        rhs = LinearRHS(f, np.zeros((n + 1, 33)))
        return y_norm(solve_linear(LinearProblem(grid1, tg, 1.0, 1.4, MAT, rhs=rhs)), spec)

    a, b = run(100), run(200)
    assert np.isfinite(a) and abs(a - b) / b < 0.05


def test_stability_ratio_is_bounded(grid1, rng):
    tg = TimeGrid(0.0, 0.2, 20)
    spec = NormSpec(4, 8)
    ratios = []
    for _ in range(5):
        kw = _random_problem(grid1, tg, rng)
        kw["bdata"] = None
        p = LinearProblem(**kw)
        traj = solve_linear(p)
        data = (besov_trace_surrogate(p.u_init, grid1, 4, 8)
                + lp_lq_norm(p.rhs.f, grid1, tg, spec).value
                + lp_lq_norm(p.rhs.g, grid1, tg, spec.with_kind("Lp_W1q")).value
                + float(np.max(np.abs(p.eta_init))))
        ratios.append(y_norm(traj, spec.with_kind("Y_norm")) / data)
    assert all(np.isfinite(ratios)) and max(ratios) / min(ratios) < 10


def test_lift_examples(grid2):
    tg = TimeGrid(0.0, 0.2, 5)
    zero = np.zeros((6,) + grid2.extents + (2,))
    lift = lift_boundary(zero, 1.0, grid2, tg, MAT)
    assert np.all(lift.u_b == 0)
    c = np.broadcast_to(np.array([0.3, -0.1]), zero.shape).copy()
    lift = lift_boundary(c, 1.0, grid2, tg, MAT)
    np.testing.assert_allclose(lift.u_b, c, atol=1e-13)
    assert np.max(np.abs(lift.dt_u_b)) < 1e-11


def test_lift_of_decaying_data_is_self_convergent(grid1):
    def run(n):
        tg = TimeGrid(0.0, 1.0, n)
        vt = np.broadcast_to(0.5 * np.exp(-tg.times)[:, None, None], (n + 1, 33, 1)).copy()
        return lift_boundary(vt, 1.0, grid1, tg, MAT).u_b[-1]

    a, b = run(50), run(100)
    assert np.max(np.abs(a - b)) / np.max(np.abs(b)) < 0.05
    np.testing.assert_allclose(b[[0, -1], 0], 0.5 * np.exp(-1.0), rtol=1e-12)
