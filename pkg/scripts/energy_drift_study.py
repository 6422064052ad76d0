#!/usr/bin/env python3
"""Energy-drift scaling study for the fixed-step integrators.

Runs the same smooth-pulse initial state across a ladder of time steps and
tabulates the relative mass drift and the Hamiltonian drift per run, plus the
drift ratio between consecutive ladder rungs. For classical RK4 the measured
ratio per halving sits near 32, not 16: the leading O(dt⁴) energy error of the
scheme is phase-like and averages out, so the secular drift is carried by the
dissipative O(dt⁵) term. The state itself still converges at fourth order.

Usage:
    python3 scripts/energy_drift_study.py [--dt 0.2 0.1 0.05] [--scheme rk4]
"""
from __future__ import annotations

import argparse
import math
import warnings

import numpy as np

from gnwave.grid import PeriodicGrid, ScalarField, VectorField
from gnwave.models import FluidState, Formulation, ModelParams, VariableKind
from gnwave.operators import BathymetryState, EllipticSolveConfig
from gnwave.timeloop import CollectingSinks, IntegrationConfig, run


def pulse_state(grid: PeriodicGrid, amplitude: float) -> FluidState:
    centered = sum((c - np.pi) ** 2 for c in grid.coords)
    zeta = amplitude * np.exp(-2.0 * centered)
    return FluidState(
        ScalarField(grid, zeta), VectorField.zeros(grid), VariableKind.V_VARIABLE
    )


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dt", type=float, nargs="+", default=[0.2, 0.1, 0.05, 0.025])
    ap.add_argument("--scheme", choices=("rk4", "rk3_ssp"), default="rk4")
    ap.add_argument("--resolution", type=int, default=64)
    ap.add_argument("--t-end", type=float, default=5.0)
    ap.add_argument("--amplitude", type=float, default=0.1)
    ap.add_argument("--epsilon", type=float, default=0.1)
    ap.add_argument("--mu", type=float, default=0.5)
    args = ap.parse_args()

    grid = PeriodicGrid((args.resolution,) * 2, (2.0 * np.pi,) * 2)
    params = ModelParams(
        epsilon=args.epsilon, mu=args.mu, formulation=Formulation.GN_V
    )
    bath = BathymetryState(ScalarField(grid, np.zeros(grid.shape)), 0.0)
    cfg = EllipticSolveConfig(rel_tolerance=1e-13)

    print(f"scheme = {args.scheme}, N = {args.resolution}², ε = {args.epsilon},"
          f" μ = {args.mu}, t_end = {args.t_end}")
    print(f"{'dt':>10} {'mass drift':>14} {'H drift':>14} {'ratio':>8}")
    previous = None
    for dt in args.dt:
        state = pulse_state(grid, args.amplitude)
        icfg = IntegrationConfig(
            dt=dt, t_end=args.t_end, scheme=args.scheme, diag_stride=1
        )
        sinks = CollectingSinks()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            run(state, params, bath, icfg, cfg, sinks, diag_order=1)
        masses = np.array([r.mass for r in sinks.records])
        hams = np.array([r.hamiltonian for r in sinks.records])
        mass_drift = float(np.max(np.abs(masses - masses[0])) / abs(masses[0]))
        ham_drift = float(np.max(np.abs(hams - hams[0])))
        ratio = "" if previous is None else f"{previous / ham_drift:8.2f}"
        print(f"{dt:>10.4g} {mass_drift:>14.3e} {ham_drift:>14.3e} {ratio:>8}")
        previous = ham_drift
    order = math.log2(args.dt[0] / args.dt[-1])
    print(f"(a drift ratio of 16 per halving would be fourth order;"
          f" ladder spans {order:.1f} halvings)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
