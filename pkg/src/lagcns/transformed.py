"""Right-hand sides of the momentum/continuity system on the fixed domain.

Conventions follow :mod:`lagcns.fields`: ``J = jac(u)`` has ``J[..., m, a] =
d_m u_a`` and ``H = hess(u)`` has ``H[..., l, m, a] = d_l d_m u_a``.  With
``E = flow.e0`` and ``B = I + E`` the Eulerian derivative is
``d/dx_i = B_ij d/dy_j``, and ``d_l E = -B (d_l k) B``.

All functions accept an optional leading time axis, as long as the flow
carries the same one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DensityOutOfRangeError
from .fields import Grid, div, grad, hess, jac, laplacian, grad_div, time_derivative


@dataclass(frozen=True)
class PressureLaw:
    """``pi(rho) = a * rho**gamma_ad`` (``kind="linear"`` forces ``gamma_ad = 1``)."""

    kind: str = "power"
    a: float = 1.0
    gamma_ad: float = 1.4
    rho_min: float = 1e-3
    rho_max: float = 1e6

    def __post_init__(self):
        errs = []
        if self.kind not in ("linear", "power"):
            errs.append(f"pressure.kind must be linear or power, got {self.kind!r}")
        if self.kind == "linear":
            object.__setattr__(self, "gamma_ad", 1.0)
        if not self.a >= 0:
            errs.append("pressure.a must be >= 0 (nondecreasing law)")
        if not self.gamma_ad >= 1:
            errs.append("pressure.gamma_ad must be >= 1")
        if not 0 < self.rho_min < self.rho_max:
            errs.append("pressure density range must satisfy 0 < rho_min < rho_max")
        if errs:
            raise ConfigError(errs)

    def _check(self, rho):
        rho = np.asarray(rho, dtype=float)
        if np.any(rho < self.rho_min) or np.any(rho > self.rho_max) or not np.all(np.isfinite(rho)):
            raise DensityOutOfRangeError(
                f"density out of range [{self.rho_min}, {self.rho_max}]: got [{np.nanmin(rho):.4g}, {np.nanmax(rho):.4g}]"
            )
        return rho

    def pi(self, rho):
        return self.a * self._check(rho) ** self.gamma_ad

    def dpi(self, rho):
        return self.a * self.gamma_ad * self._check(rho) ** (self.gamma_ad - 1.0)


@dataclass(frozen=True)
class MaterialParams:
    mu: float = 1.0
    zeta: float = 0.0
    pressure_law: PressureLaw = field(default_factory=PressureLaw)
    rho_star: float = 1.0

    def __post_init__(self):
        errs = []
        if not self.mu > 0:
            errs.append("mu must be > 0")
        if not self.zeta >= 0:
            errs.append("zeta must be >= 0")
        if not self.rho_star > 0:
            errs.append("rho_star must be > 0")
        if errs:
            raise ConfigError(errs)

    @property
    def lam_combo(self) -> float:
        return self.mu / 3.0 + self.zeta

    @property
    def gamma_star(self) -> float:
        return float(self.pressure_law.dpi(self.rho_star))


@dataclass
class LinearRHS:
    """Force density ``f`` and mass source ``g`` on a time grid; ``terms``
    keeps the named pieces they were summed from."""

    f: np.ndarray
    g: np.ndarray
    terms: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, grid: Grid, nlevels: int) -> LinearRHS:
        return cls(np.zeros((nlevels,) + grid.extents + (grid.dim,)), np.zeros((nlevels,) + grid.extents))


@dataclass
class LiftData:
    """Lifted boundary velocity ``u_b``, its time derivative and the boundary
    extension ``v_tilde`` it was built from (all with a leading time axis)."""

    u_b: np.ndarray
    dt_u_b: np.ndarray
    v_tilde: np.ndarray

    def truncated(self, nlevels: int) -> LiftData:
        return LiftData(self.u_b[:nlevels], self.dt_u_b[:nlevels], self.v_tilde[:nlevels])


# ------------------------------------------------------------ building blocks

def _B(flow):
    return np.eye(flow.e0.shape[-1]) + flow.e0


def _dE(flow):
    """``dE[..., l, i, j] = d_l E_ij``."""
    B = _B(flow)
    return -np.einsum("...ij,...ljk,...km->...lim", B, flow.grad_k, B)


def transform_div(u: np.ndarray, grid: Grid, flow) -> np.ndarray:
    """Eulerian divergence in Lagrangian variables: ``div_y u + E_ij d_j u_i``."""
    J = jac(u, grid)
    return div(u, grid) + np.einsum("...ij,...ji->...", flow.e0, J)


def pressure_gradient(rho: np.ndarray, grid: Grid, mat: MaterialParams) -> np.ndarray:
    """``grad_y pi(rho)`` by the chain rule, ``pi'(rho) grad_y rho``."""
    return mat.pressure_law.dpi(rho)[..., None] * grad(rho, grid)


def transform_pressure_grad(rho: np.ndarray, grid: Grid, flow, mat: MaterialParams) -> np.ndarray:
    """``(I + E) grad_y pi(rho)``."""
    return np.einsum("...ij,...j->...i", _B(flow), pressure_gradient(rho, grid, mat))


def a2_laplacian(H, flow):
    E = flow.e0
    C = E + np.swapaxes(E, -1, -2) + np.einsum("...ki,...kj->...ij", E, E)
    return np.einsum("...lm,...lma->...a", C, H)


def a1_laplacian(J, flow):
    return np.einsum("...kl,...lkm,...ma->...a", _B(flow), _dE(flow), J)


def a2_grad_div(H, flow):
    E = flow.e0
    ddiv = np.einsum("...kjj->...k", H)
    return (
        np.einsum("...lm,...iml->...i", E, H)
        + np.einsum("...ik,...k->...i", E, ddiv)
        + np.einsum("...ik,...lm,...kml->...i", E, E, H)
    )


def a1_grad_div(J, flow):
    E, dE = flow.e0, _dE(flow)
    return np.einsum("...ilm,...ml->...i", dE, J) + np.einsum("...ik,...klm,...ml->...i", E, dE, J)


def transform_laplacian(u: np.ndarray, grid: Grid, flow) -> np.ndarray:
    """Eulerian vector Laplacian of ``u`` written on the reference grid."""
    H, J = hess(u, grid, 1), jac(u, grid)
    return laplacian(u, grid) + a2_laplacian(H, flow) + a1_laplacian(J, flow)


def transform_grad_div(u: np.ndarray, grid: Grid, flow) -> np.ndarray:
    """Eulerian ``grad div u`` written on the reference grid."""
    H, J = hess(u, grid, 1), jac(u, grid)
    return grad_div(u, grid) + a2_grad_div(H, flow) + a1_grad_div(J, flow)


def remainder_R(u: np.ndarray, grid: Grid, flow, mat: MaterialParams) -> np.ndarray:
    """Difference between the Eulerian and Lagrangian viscous terms."""
    H, J = hess(u, grid, 1), jac(u, grid)
    return mat.mu * (a2_laplacian(H, flow) + a1_laplacian(J, flow)) + mat.lam_combo * (
        a2_grad_div(H, flow) + a1_grad_div(J, flow)
    )


def rhs_full(rho: np.ndarray, u: np.ndarray, grid: Grid, flow, mat: MaterialParams):
    """Nonlinear remainders ``(F, G)``: everything the frame change adds to the
    fixed-domain momentum and continuity equations."""
    gp = pressure_gradient(rho, grid, mat)
    F = -np.einsum("...ij,...j->...i", flow.e0, gp) + remainder_R(u, grid, flow, mat)
    G = -rho * np.einsum("...ij,...ji->...", flow.e0, jac(u, grid))
    return F, G


def rhs_local(eta, v, grid: Grid, flow, mat: MaterialParams, lift: LiftData, rho0, dt: float) -> LinearRHS:
    """Right-hand side of the system linearized about the initial density.

    Inputs carry a leading time axis; ``flow`` must be accumulated from
    ``v + lift.u_b``.  Time derivatives are backward differences.

    The ``grad rho0`` term is weighted by ``pi'(eta + rho0)``, not
    ``pi'(rho0)``: with the latter, substituting ``eta = rho - rho0`` leaves
    ``(pi'(rho) - pi'(rho0)) grad rho0`` unaccounted for whenever ``rho0``
    varies in space, and the linearized system no longer reproduces the
    full one.
    """
    eta = np.asarray(eta, dtype=float)
    rho0 = np.broadcast_to(np.asarray(rho0, dtype=float), grid.extents)
    rho = eta + rho0
    u = v + lift.u_b
    law = mat.pressure_law
    F, G = rhs_full(rho, u, grid, flow, mat)
    dpi_rho, dpi_0 = law.dpi(rho), law.dpi(rho0)
    terms = {
        "F": F,
        "eta_dt_u": -eta[..., None] * time_derivative(u, dt),
        "grad_rho0": -dpi_rho[..., None] * grad(rho0, grid),
        "dpi_grad_eta": -(dpi_rho - dpi_0)[..., None] * grad(eta, grid),
        "G": G,
        "rho_div_ub": -rho * div(lift.u_b, grid),
        "eta_div_v": -eta * div(v, grid),
    }
    f = terms["F"] + terms["eta_dt_u"] + terms["grad_rho0"] + terms["dpi_grad_eta"]
    g = terms["G"] + terms["rho_div_ub"] + terms["eta_div_v"]
    return LinearRHS(f, g, terms)


def rhs_global(sigma, v, grid: Grid, flow, mat: MaterialParams, lift: LiftData, dt: float) -> LinearRHS:
    """Right-hand side of the system linearized about the constant ``rho_star``."""
    return rhs_local(sigma, v, grid, flow, mat, lift, np.full(grid.extents, mat.rho_star), dt)


def lagrangian_residual(rho, u, grid: Grid, flow, mat: MaterialParams, dt: float):
    """Backward-Euler residuals of the full fixed-domain system at levels 1..n
    (momentum, continuity); boundary nodes excluded by the caller."""
    F, G = rhs_full(rho, u, grid, flow, mat)
    mom = (
        rho[..., None] * time_derivative(u, dt)
        - mat.mu * laplacian(u, grid)
        - mat.lam_combo * grad_div(u, grid)
        + pressure_gradient(rho, grid, mat)
        - F
    )
    cont = time_derivative(rho, dt) + rho * div(u, grid) - G
    return mom[1:], cont[1:]
