"""Explicit time integration with depth monitoring and diagnostic sampling.

The integrator is classical RK4 (or SSP-RK3) applied to the selected model
tendency, with one elliptic solve per stage.  The dispersive operator has an
order-zero inverse, so explicit stepping is not stiffness-limited; a CFL
advisory based on the gravity-wave speed √(max h) with safety factor 0.5 is
emitted as a warning only.

Every stage state and every step result is projected onto the dealiased
band before use.  Stage depths are monitored: a stage whose minimum depth
falls to half the configured floor aborts the step, and any field magnitude
beyond 1e8 (or a non-finite value) terminates the run as a blow-up.

Determinism: all arithmetic is fixed-order; two runs from identical inputs
produce bit-identical states, records and snapshots.  Wall-clock time in the
report is the only nondeterministic field.
"""
from __future__ import annotations

import dataclasses
import math
import time
import warnings

import numpy as np

from .diagnostics import DEFAULT_ORDER, DiagnosticsRecord, collect_record
from .errors import (
    BlowUpError,
    CoercivityViolationError,
    GnwaveError,
    NonConvergenceError,
    ValidationError,
)
from .grid import ScalarField, VectorField
from .models import (
    FluidState,
    Formulation,
    ModelParams,
    VariableKind,
    rest_depth,
    rhs_bp,
    rhs_gn_u,
    rhs_gn_v,
    rhs_sv,
    v_from_u,
)
from .operators import BathymetryState, EllipticSolveConfig, SolverSession
from .regularization import MollifierSpec, rhs_gn_v_mollified

__all__ = [
    "BLOWUP_LIMIT",
    "CFL_SAFETY",
    "CollectingSinks",
    "IntegrationConfig",
    "RunReport",
    "cfl_time_step",
    "run",
    "step",
]

BLOWUP_LIMIT = 1e8
CFL_SAFETY = 0.5
_SCHEMES = ("rk4", "rk3_ssp")


@dataclasses.dataclass(frozen=True)
class IntegrationConfig:
    """Time-stepping parameters.

    Attributes
    ----------
    dt : float
        Fixed step size, > 0.
    t_end : float
        Absolute target time; integration stops when the state reaches it
        (a shorter final step is taken if needed).
    scheme : str
        ``rk4`` (default) or ``rk3_ssp``.
    mollifier : MollifierSpec
        Spectral smoothing applied inside the tendency; identity by default.
        Smoothing requires the conjugate-variable formulation.
    diag_stride : int
        Emit a diagnostics record every this many steps (≥ 1).
    snapshot_stride : int
        Emit a state snapshot every this many steps; 0 disables snapshots.
    """

    dt: float
    t_end: float
    scheme: str = "rk4"
    mollifier: MollifierSpec = dataclasses.field(default_factory=MollifierSpec)
    diag_stride: int = 1
    snapshot_stride: int = 0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise ValidationError(f"dt must be positive and finite, got {self.dt}")
        if not math.isfinite(self.t_end):
            raise ValidationError(f"t_end must be finite, got {self.t_end}")
        if self.scheme not in _SCHEMES:
            raise ValidationError(f"unknown scheme {self.scheme!r}, expected one of {_SCHEMES}")
        if not isinstance(self.diag_stride, int) or self.diag_stride < 1:
            raise ValidationError(f"diag_stride must be an integer ≥ 1, got {self.diag_stride}")
        if not isinstance(self.snapshot_stride, int) or self.snapshot_stride < 0:
            raise ValidationError(
                f"snapshot_stride must be an integer ≥ 0, got {self.snapshot_stride}"
            )


@dataclasses.dataclass(frozen=True)
class RunReport:
    """Outcome of one integration run."""

    final_state: FluidState
    wall_time: float
    total_elliptic_iterations: int
    termination: str
    steps: int
    failure_time: float | None = None


class CollectingSinks:
    """In-memory sinks: keeps every record and snapshot in lists."""

    def __init__(self) -> None:
        self.records: list[DiagnosticsRecord] = []
        self.snapshots: list[FluidState] = []

    def record(self, rec: DiagnosticsRecord) -> None:
        self.records.append(rec)

    def snapshot(self, state: FluidState) -> None:
        self.snapshots.append(state)


def cfl_time_step(state: FluidState, params: ModelParams, bath: BathymetryState) -> float:
    """Advisory step bound: 0.5·(min spacing)/(√(max h)·(1 + ε·max|vel|))."""
    grid = state.grid
    h = 1.0 + params.epsilon * state.zeta.data - params.beta * bath.b.data
    speed = math.sqrt(float(np.max(h))) * (1.0 + params.epsilon * state.max_abs())
    return CFL_SAFETY * min(grid.spacings) / speed


def _resolve_h_star(state: FluidState, params: ModelParams, bath: BathymetryState) -> float:
    if params.h_star > 0.0:
        return params.h_star
    h = 1.0 + params.epsilon * state.zeta.data - params.beta * bath.b.data
    return float(np.min(h))


class _Stepper:
    """Binds the model tendency, the stage guards and a solver session."""

    def __init__(
        self,
        params: ModelParams,
        bath: BathymetryState,
        icfg: IntegrationConfig,
        cfg: EllipticSolveConfig | None,
        session: SolverSession | None,
        h_star: float,
    ) -> None:
        if icfg.mollifier.iota > 0.0 and params.formulation is not Formulation.GN_V:
            raise ValidationError(
                "spectral smoothing is defined for the conjugate-variable "
                f"formulation only, got {params.formulation.value}"
            )
        self.params = params
        self.bath = bath
        self.grid = bath.grid
        self.cfg = cfg
        self.session = session
        self.h_star = h_star
        self.kind = params.expected_kind
        form = params.formulation
        if form is Formulation.GN_V:
            spec = icfg.mollifier

            def tendency(state: FluidState):
                dz, dv, _ = rhs_gn_v_mollified(state, params, bath, spec, cfg, session)
                return dz, dv

        elif form is Formulation.GN_U:

            def tendency(state: FluidState):
                dz, dv, _ = rhs_gn_u(state, params, bath, cfg, session)
                return dz, dv

        elif form is Formulation.BP:
            frozen = rest_depth(params, bath)

            def tendency(state: FluidState):
                dz, dv, _ = rhs_bp(state, params, bath, cfg, session, frozen_depth=frozen)
                return dz, dv

        else:

            def tendency(state: FluidState):
                return rhs_sv(state, params, bath)

        self._tendency = tendency

    def check_fields(self, zeta: np.ndarray, vel: np.ndarray, t: float) -> None:
        peak = max(float(np.max(np.abs(zeta))), float(np.max(np.abs(vel))))
        if not math.isfinite(peak) or peak > BLOWUP_LIMIT:
            raise BlowUpError(
                f"field magnitude {peak:.3e} at t = {t:.6g} exceeds {BLOWUP_LIMIT:.0e}",
                time=t,
                norm=peak,
            )

    def rhs(self, zeta: np.ndarray, vel: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
        grid = self.grid
        zeta = grid.dealias(zeta)
        vel = grid.dealias(vel)
        self.check_fields(zeta, vel, t)
        h_min = float(
            np.min(1.0 + self.params.epsilon * zeta - self.params.beta * self.bath.b.data)
        )
        if h_min <= 0.5 * self.h_star:
            raise CoercivityViolationError(
                f"stage depth {h_min:.6g} at t = {t:.6g} fell to half the "
                f"floor {self.h_star:.6g}",
                min_depth=h_min,
            )
        state = FluidState(
            ScalarField(grid, zeta), VectorField(grid, vel), self.kind, t
        )
        dz, dv = self._tendency(state)
        return dz.data, dv.data

    def advance(self, state: FluidState, dt: float, t_next: float, scheme: str) -> FluidState:
        grid = self.grid
        z, v, t = state.zeta.data, state.vel.data, state.time
        if scheme == "rk4":
            k1z, k1v = self.rhs(z, v, t)
            k2z, k2v = self.rhs(z + 0.5 * dt * k1z, v + 0.5 * dt * k1v, t + 0.5 * dt)
            k3z, k3v = self.rhs(z + 0.5 * dt * k2z, v + 0.5 * dt * k2v, t + 0.5 * dt)
            k4z, k4v = self.rhs(z + dt * k3z, v + dt * k3v, t + dt)
            nz = z + (dt / 6.0) * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)
            nv = v + (dt / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        else:
            k1z, k1v = self.rhs(z, v, t)
            z1, v1 = z + dt * k1z, v + dt * k1v
            k2z, k2v = self.rhs(z1, v1, t + dt)
            z2 = 0.75 * z + 0.25 * (z1 + dt * k2z)
            v2 = 0.75 * v + 0.25 * (v1 + dt * k2v)
            k3z, k3v = self.rhs(z2, v2, t + 0.5 * dt)
            nz = z / 3.0 + (2.0 / 3.0) * (z2 + dt * k3z)
            nv = v / 3.0 + (2.0 / 3.0) * (v2 + dt * k3v)
        nz = grid.dealias(nz)
        nv = grid.dealias(nv)
        self.check_fields(nz, nv, t_next)
        return FluidState(ScalarField(grid, nz), VectorField(grid, nv), state.kind, t_next)


def step(
    state: FluidState,
    params: ModelParams,
    bath: BathymetryState,
    icfg: IntegrationConfig,
    cfg: EllipticSolveConfig | None = None,
    session: SolverSession | None = None,
) -> FluidState:
    """Advance one full step of size icfg.dt; stages live in the dealiased band."""
    stepper = _Stepper(params, bath, icfg, cfg, session, _resolve_h_star(state, params, bath))
    return stepper.advance(state, icfg.dt, state.time + icfg.dt, icfg.scheme)


def _as_v_state(state: FluidState, params: ModelParams, bath: BathymetryState) -> FluidState:
    if state.kind is VariableKind.V_VARIABLE:
        return state
    return v_from_u(state, params, bath)


def run(
    initial: FluidState,
    params: ModelParams,
    bath: BathymetryState,
    icfg: IntegrationConfig,
    cfg: EllipticSolveConfig | None = None,
    sinks=None,
    diag_order: int = DEFAULT_ORDER,
) -> RunReport:
    """Integrate from the initial state to icfg.t_end.

    Diagnostics records (and snapshots, when enabled) are emitted for the
    initial state, then after every configured stride, then for the final
    state.  Step failures propagate as exceptions carrying a ``report``
    attribute with the last accepted state and the failure time.
    """
    t_start = time.perf_counter()
    cfg = cfg if cfg is not None else EllipticSolveConfig()
    step_session = SolverSession(cfg)
    diag_session = SolverSession(cfg)
    stepper = _Stepper(
        params, bath, icfg, cfg, step_session, _resolve_h_star(initial, params, bath)
    )

    advisory = cfl_time_step(initial, params, bath)
    if icfg.dt > advisory:
        warnings.warn(
            f"dt = {icfg.dt:.4g} exceeds the advisory bound {advisory:.4g} "
            "(0.5·spacing/wave speed); the run continues",
            stacklevel=2,
        )

    emit_record = getattr(sinks, "record", None)
    emit_snapshot = getattr(sinks, "snapshot", None)

    def emit(state: FluidState, want_record: bool, want_snapshot: bool) -> None:
        if want_record and emit_record is not None:
            emit_record(
                collect_record(
                    _as_v_state(state, params, bath), params, bath, diag_order, cfg, diag_session
                )
            )
        if want_snapshot and emit_snapshot is not None:
            emit_snapshot(state)

    t0 = initial.time
    span = icfg.t_end - t0
    n_full = 0
    remainder = 0.0
    if span > 0.0:
        n_full = int(math.floor(span / icfg.dt * (1.0 + 1e-12)))
        remainder = span - n_full * icfg.dt
        if remainder <= 1e-9 * icfg.dt:
            remainder = 0.0

    state = initial
    steps_total = n_full + (1 if remainder else 0)
    steps_done = 0
    termination = "completed"
    failure_time: float | None = None
    emit(state, True, icfg.snapshot_stride > 0)
    try:
        for k in range(1, n_full + 1):
            state = stepper.advance(state, icfg.dt, t0 + k * icfg.dt, icfg.scheme)
            steps_done = k
            last = k == steps_total
            emit(
                state,
                k % icfg.diag_stride == 0 or last,
                icfg.snapshot_stride > 0 and (k % icfg.snapshot_stride == 0 or last),
            )
        if remainder:
            state = stepper.advance(state, remainder, icfg.t_end, icfg.scheme)
            steps_done = steps_total
            emit(state, True, icfg.snapshot_stride > 0)
    except (CoercivityViolationError, NonConvergenceError, BlowUpError) as exc:
        termination = {
            CoercivityViolationError: "coercivity_violation",
            NonConvergenceError: "non_convergence",
            BlowUpError: "blow_up",
        }[type(exc)]
        failure_time = getattr(exc, "time", None)
        if failure_time is None:
            failure_time = state.time
        exc.report = RunReport(
            final_state=state,
            wall_time=time.perf_counter() - t_start,
            total_elliptic_iterations=step_session.total_iterations
            + diag_session.total_iterations,
            termination=termination,
            steps=steps_done,
            failure_time=failure_time,
        )
        raise

    return RunReport(
        final_state=state,
        wall_time=time.perf_counter() - t_start,
        total_elliptic_iterations=step_session.total_iterations + diag_session.total_iterations,
        termination=termination,
        steps=steps_done,
        failure_time=None,
    )
