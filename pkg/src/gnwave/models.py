"""Right-hand sides of the four model variants and the u ↔ v variable maps.

Velocity variables: the classical form evolves (ζ, u)::

    ∂t ζ + ∇·(h u) = 0
    (Id + μT[h, βb]) ∂t u + ∇ζ + ε(u·∇)u + με(Q[h,u] + Q_b[h,βb,u]) = 0

and the conjugate form evolves (ζ, v) with v = (Id + μT)u::

    ∂t ζ + ∇·(h u) = 0,      u = 𝔗[h, βb]⁻¹(h v)
    ∂t v + ε u^⊥ curl v + ∇ζ + (ε/2)∇|u|² = με ∇(R[h,u] + R_b[h,βb,u])

The weakly nonlinear variant freezes the dispersive operator at the rest
depth 1 − βb, and the hydrostatic variant is the μ = 0 limit. Every
evaluation performs exactly one elliptic solve and dealiases intermediate
products.
"""
from __future__ import annotations

import dataclasses
import enum
from typing import NamedTuple

import numpy as np

from .errors import GridMismatchError, ValidationError
from .grid import PeriodicGrid, ScalarField, VectorField
from .operators import (
    BathymetryState,
    DepthState,
    EllipticSolveConfig,
    SolverSession,
    apply_Q,
    apply_Qb,
    apply_R,
    apply_Rb,
    apply_T,
    good_unknown_w,
    invert_frakT,
    _dealias,
    _masked_div,
)

__all__ = [
    "Formulation",
    "VariableKind",
    "ModelParams",
    "FluidState",
    "SolveStats",
    "make_depth",
    "rest_depth",
    "rhs_gn_u",
    "rhs_gn_v",
    "rhs_gn_v_compact",
    "rhs_bp",
    "rhs_sv",
    "v_from_u",
    "u_from_v",
]


class Formulation(enum.Enum):
    GN_U = "gn_u"
    GN_V = "gn_v"
    BP = "bp"
    SV = "sv"


class VariableKind(enum.Enum):
    U_VARIABLE = "u"
    V_VARIABLE = "v"


def _kind_for(formulation: Formulation) -> VariableKind:
    return (
        VariableKind.V_VARIABLE
        if formulation is Formulation.GN_V
        else VariableKind.U_VARIABLE
    )


@dataclasses.dataclass(frozen=True)
class ModelParams:
    """Scaling parameters and formulation selector.

    ``h_star``/``h_star_upper`` declare the depth corridor the run promises;
    zero/inf mean "take them from the initial state".
    """

    epsilon: float = 1.0
    beta: float = 0.0
    mu: float = 1.0
    formulation: Formulation = Formulation.GN_V
    h_star: float = 0.0
    h_star_upper: float = float("inf")

    def __post_init__(self) -> None:
        for name in ("epsilon", "beta", "mu"):
            val = float(getattr(self, name))
            if not np.isfinite(val) or val < 0.0:
                raise ValidationError(f"{name} must be a finite real >= 0, got {val}")
            object.__setattr__(self, name, val)
        if not isinstance(self.formulation, Formulation):
            object.__setattr__(self, "formulation", Formulation(self.formulation))
        if self.formulation is Formulation.SV and self.mu != 0.0:
            raise ValidationError("the hydrostatic variant requires mu = 0")
        if self.h_star < 0.0:
            raise ValidationError("h_star must be >= 0")

    @property
    def expected_kind(self) -> VariableKind:
        return _kind_for(self.formulation)


@dataclasses.dataclass(frozen=True, eq=False)
class FluidState:
    """Surface elevation plus velocity-type variable at one instant."""

    zeta: ScalarField
    vel: VectorField
    kind: VariableKind
    time: float = 0.0

    def __post_init__(self) -> None:
        if not self.zeta.grid.compatible(self.vel.grid):
            raise GridMismatchError("zeta and velocity must live on one grid")
        if not isinstance(self.kind, VariableKind):
            object.__setattr__(self, "kind", VariableKind(self.kind))
        time = float(self.time)
        if not np.isfinite(time):
            raise ValidationError(f"time must be finite, got {time}")
        object.__setattr__(self, "time", time)

    @classmethod
    def rest(cls, grid: PeriodicGrid, kind: VariableKind = VariableKind.V_VARIABLE) -> "FluidState":
        return cls(ScalarField.zeros(grid), VectorField.zeros(grid), kind, 0.0)

    @property
    def grid(self) -> PeriodicGrid:
        return self.zeta.grid

    def max_abs(self) -> float:
        return max(
            float(np.max(np.abs(self.zeta.data))), float(np.max(np.abs(self.vel.data)))
        )


class SolveStats(NamedTuple):
    iterations: int
    residual: float


_NO_SOLVE = SolveStats(0, 0.0)


def _check_bath(params: ModelParams, bath: BathymetryState) -> None:
    if bath.beta != params.beta:
        raise ValidationError(
            f"bathymetry amplitude beta={bath.beta} disagrees with params.beta={params.beta}"
        )


def make_depth(params: ModelParams, zeta: ScalarField, bath: BathymetryState) -> DepthState:
    """DepthState for h = 1 + εζ − βb (bounds taken from the current field)."""
    _check_bath(params, bath)
    h = 1.0 + params.epsilon * zeta.data - params.beta * bath.b.data
    return DepthState.from_depth(zeta.grid, h)


def rest_depth(params: ModelParams, bath: BathymetryState) -> DepthState:
    """DepthState of the still water column 1 − βb (the frozen operator depth)."""
    _check_bath(params, bath)
    grid = bath.grid
    h = 1.0 - params.beta * bath.b.data
    return DepthState.from_depth(grid, np.broadcast_to(h, grid.shape).copy())


def _require_kind(state: FluidState, kind: VariableKind, what: str) -> None:
    if state.kind is not kind:
        raise ValidationError(f"{what} expects the {kind.value}-variable state, got {state.kind.value}")


def _advection(grid: PeriodicGrid, u: np.ndarray) -> np.ndarray:
    """(u·∇)u, dealiased componentwise."""
    out = np.empty_like(u)
    for i in range(grid.dim):
        gi = grid.gradient(u[i])
        out[i] = np.einsum("j...,j...->...", u, gi)
    return _dealias(grid, out)


def _mass_flux_divergence(grid: PeriodicGrid, h: np.ndarray, u: np.ndarray) -> np.ndarray:
    """∇·(hu) with the product dealiased; integrates to zero exactly."""
    return _masked_div(grid, h * u)


def _sv_velocity_tendency(
    grid: PeriodicGrid, params: ModelParams, zeta: ScalarField, u: np.ndarray
) -> np.ndarray:
    return -(grid.gradient(zeta.data) + params.epsilon * _advection(grid, u))


def rhs_sv(
    state: FluidState, params: ModelParams, bath: BathymetryState
) -> tuple[ScalarField, VectorField]:
    """Hydrostatic (μ = 0) right-hand side: dζ = −∇·(hu), du = −∇ζ − ε(u·∇)u."""
    _require_kind(state, VariableKind.U_VARIABLE, "rhs_sv")
    grid = state.grid
    depth = make_depth(params, state.zeta, bath)
    dzeta = -_mass_flux_divergence(grid, depth.h.data, state.vel.data)
    du = _sv_velocity_tendency(grid, params, state.zeta, state.vel.data)
    return ScalarField(grid, dzeta), VectorField(grid, du)


def rhs_gn_u(
    state: FluidState,
    params: ModelParams,
    bath: BathymetryState,
    cfg: EllipticSolveConfig | None = None,
    session: SolverSession | None = None,
) -> tuple[ScalarField, VectorField, SolveStats]:
    """Classical-variable tendency; one elliptic solve for the velocity part.

    (Id + μT) du = −(∇ζ + ε(u·∇)u + με(Q + Q_b)) is realized through the
    composed operator: 𝔗 du = h · rhs.
    """
    _require_kind(state, VariableKind.U_VARIABLE, "rhs_gn_u")
    grid = state.grid
    depth = make_depth(params, state.zeta, bath)
    u = state.vel.data
    dzeta = -_mass_flux_divergence(grid, depth.h.data, u)

    forcing = -_sv_velocity_tendency(grid, params, state.zeta, u)
    mu_eps = params.mu * params.epsilon
    if mu_eps > 0.0:
        forcing = forcing + mu_eps * (
            apply_Q(depth, state.vel, mu_eps).data
            + apply_Qb(depth, bath, state.vel, mu_eps).data
        )
    if params.mu == 0.0:
        return ScalarField(grid, dzeta), VectorField(grid, -forcing), _NO_SOLVE

    v_rhs = VectorField(grid, -_dealias(grid, depth.h.data * forcing))
    du, iterations, residual = invert_frakT(depth, bath, v_rhs, params.mu, cfg, session)
    return ScalarField(grid, dzeta), du, SolveStats(iterations, residual)


def _solve_velocity(
    depth: DepthState,
    bath: BathymetryState,
    v: np.ndarray,
    mu: float,
    cfg: EllipticSolveConfig | None,
    session: SolverSession | None,
) -> tuple[VectorField, SolveStats]:
    grid = depth.grid
    hv = VectorField(grid, _dealias(grid, depth.h.data * v))
    u, iterations, residual = invert_frakT(depth, bath, hv, mu, cfg, session)
    return u, SolveStats(iterations, residual)


def rhs_gn_v(
    state: FluidState,
    params: ModelParams,
    bath: BathymetryState,
    cfg: EllipticSolveConfig | None = None,
    session: SolverSession | None = None,
) -> tuple[ScalarField, VectorField, SolveStats]:
    """Conjugate-variable tendency. u = 𝔗⁻¹(hv) is solved once, then

    dv = −∇ζ − ε (curl v) u^⊥ − (ε/2)∇|u|² + με ∇(R + R_b).
    """
    _require_kind(state, VariableKind.V_VARIABLE, "rhs_gn_v")
    grid = state.grid
    depth = make_depth(params, state.zeta, bath)
    uf, stats = _solve_velocity(depth, bath, state.vel.data, params.mu, cfg, session)
    u = uf.data

    dzeta = -_mass_flux_divergence(grid, depth.h.data, u)

    dv = -grid.gradient(state.zeta.data)
    eps = params.epsilon
    if eps > 0.0:
        if grid.dim == 2:
            curl_v = grid.curl(state.vel.data)
            if float(np.max(np.abs(curl_v))) > 0.0:
                dv -= eps * _dealias(grid, curl_v * grid.perp(u))
        ke = _dealias(grid, np.einsum("i...,i...->...", u, u))
        dv -= (eps / 2.0) * grid.gradient(ke)
        if params.mu > 0.0:
            pressure = apply_R(depth, uf).data + apply_Rb(depth, bath, uf).data
            dv += params.mu * eps * grid.gradient(pressure)
    return ScalarField(grid, dzeta), VectorField(grid, dv), stats


def rhs_gn_v_compact(
    state: FluidState,
    params: ModelParams,
    bath: BathymetryState,
    cfg: EllipticSolveConfig | None = None,
    session: SolverSession | None = None,
) -> tuple[ScalarField, VectorField, SolveStats]:
    """Equivalent compact form of the conjugate-variable tendency:

    dv = −ε (curl v) u^⊥ − ∇(ζ + ε u·v − (ε/2)|u|² − (εμ/2) w²),

    with w = (β∇b)·u − h∇·u. Used as a cross-check of rhs_gn_v.
    """
    _require_kind(state, VariableKind.V_VARIABLE, "rhs_gn_v_compact")
    grid = state.grid
    depth = make_depth(params, state.zeta, bath)
    uf, stats = _solve_velocity(depth, bath, state.vel.data, params.mu, cfg, session)
    u = uf.data

    dzeta = -_mass_flux_divergence(grid, depth.h.data, u)

    eps, mu = params.epsilon, params.mu
    head = state.zeta.data.copy()
    if eps > 0.0:
        head += eps * _dealias(grid, np.einsum("i...,i...->...", u, state.vel.data))
        head -= (eps / 2.0) * _dealias(grid, np.einsum("i...,i...->...", u, u))
        if mu > 0.0:
            w = good_unknown_w(depth, bath, uf).data
            head -= (eps * mu / 2.0) * _dealias(grid, w * w)
    dv = -grid.gradient(head)
    if eps > 0.0 and grid.dim == 2:
        curl_v = grid.curl(state.vel.data)
        if float(np.max(np.abs(curl_v))) > 0.0:
            dv -= eps * _dealias(grid, curl_v * grid.perp(u))
    return ScalarField(grid, dzeta), VectorField(grid, dv), stats


def rhs_bp(
    state: FluidState,
    params: ModelParams,
    bath: BathymetryState,
    cfg: EllipticSolveConfig | None = None,
    session: SolverSession | None = None,
    frozen_depth: DepthState | None = None,
) -> tuple[ScalarField, VectorField, SolveStats]:
    """Weakly nonlinear tendency with the operator frozen at rest depth:

    dζ = −∇·(hu) (full depth), (Id + μT[1−βb, βb]) du = −(∇ζ + ε(u·∇)u).

    Pass ``frozen_depth`` (from :func:`rest_depth`) to reuse its cached powers
    across calls; the dedicated session then keeps warm starts effective.
    """
    _require_kind(state, VariableKind.U_VARIABLE, "rhs_bp")
    grid = state.grid
    depth = make_depth(params, state.zeta, bath)
    u = state.vel.data
    dzeta = -_mass_flux_divergence(grid, depth.h.data, u)

    forcing = -_sv_velocity_tendency(grid, params, state.zeta, u)
    if params.mu == 0.0:
        return ScalarField(grid, dzeta), VectorField(grid, -forcing), _NO_SOLVE

    rest = frozen_depth if frozen_depth is not None else rest_depth(params, bath)
    v_rhs = VectorField(grid, -_dealias(grid, rest.h.data * forcing))
    du, iterations, residual = invert_frakT(rest, bath, v_rhs, params.mu, cfg, session)
    return ScalarField(grid, dzeta), du, SolveStats(iterations, residual)


def v_from_u(state: FluidState, params: ModelParams, bath: BathymetryState) -> FluidState:
    """Exact map v = (Id + μT[h, βb]) u."""
    _require_kind(state, VariableKind.U_VARIABLE, "v_from_u")
    depth = make_depth(params, state.zeta, bath)
    v = state.vel.data
    if params.mu > 0.0:
        v = v + params.mu * apply_T(depth, bath, state.vel, params.mu).data
    return FluidState(state.zeta, VectorField(state.grid, v), VariableKind.V_VARIABLE, state.time)


def u_from_v(
    state: FluidState,
    params: ModelParams,
    bath: BathymetryState,
    cfg: EllipticSolveConfig | None = None,
    session: SolverSession | None = None,
) -> FluidState:
    """Inverse map u = 𝔗[h, βb]⁻¹(h v) by elliptic solve.

    The product h·v is deliberately not dealiased here so that the round trip
    u → v → u closes to solver tolerance.
    """
    _require_kind(state, VariableKind.V_VARIABLE, "u_from_v")
    depth = make_depth(params, state.zeta, bath)
    hv = VectorField(state.grid, depth.h.data * state.vel.data)
    u, _, _ = invert_frakT(depth, bath, hv, params.mu, cfg, session)
    return FluidState(state.zeta, u, VariableKind.U_VARIABLE, state.time)
