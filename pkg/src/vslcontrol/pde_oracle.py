"""Direct method-of-lines integration of the controlled conservation law.

Cross-checks the semi-analytic simulators by integrating

    rho_t + d/dx [ u(rho) f(rho) ] = 0

with the feedback u recomputed from the current grid state at every stage.
Two schemes: a second-order central flux difference driven by classic RK4
(the default), and first-order upwinding with forward Euler as a blunt
fallback.  The fixed-inlet law holds rho(t, 0) = rho_star, so its inlet
node is frozen; the free-inlet law sets the inlet flow through u itself and
needs no boundary pin.

This module trades accuracy for independence: nothing here reuses the
closed-form structure of the laws beyond the feedback formulas themselves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fixed_inlet, free_inlet
from .errors import DomainError, SolverDivergenceError, StepSizeError
from .profile import Scenario
from .quadrature import cumulative_trapezoid
from .trace import SimulationTrace

SCHEMES = ("central_flux_rk4", "upwind_euler")
ORACLE_U_TOL = 1e-3  # discretization wiggle allowance on u <= 1


@dataclass(frozen=True)
class OracleSettings:
    """Grid resolution, scheme and step-size policy of the oracle.

    dt=None derives the step from cfl_cap * h / max|f'| and shrinks it to
    divide the output interval exactly; an explicit dt must respect the
    same stability cap.  escape_factor bounds how far the sup-norm
    deviation may grow before the run is declared divergent.
    """

    n_cells: int = 400
    scheme: str = "central_flux_rk4"
    cfl_cap: float = 0.4
    dt: float | None = None
    escape_factor: float = 4.0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise DomainError(f"scheme must be one of {SCHEMES}")
        if self.n_cells < 4:
            raise DomainError("need at least 4 cells")
        if not (0.0 < self.cfl_cap <= 1.0):
            raise DomainError("cfl_cap must lie in (0, 1]")
        if self.dt is not None and self.dt <= 0.0:
            raise DomainError("dt must be positive")
        if self.escape_factor <= 1.0:
            raise DomainError("escape_factor must exceed 1")


def integrate(scenario: Scenario, gains, settings: OracleSettings = OracleSettings()
              ) -> SimulationTrace:
    """Integrate the closed loop driven by `gains` over the scenario horizon.

    gains is either a FreeInletGain or a FixedInletGains record; the
    feedback (and inlet handling) dispatches on that type.  The initial
    profile is linearly resampled onto the oracle grid.
    """
    d = scenario.diagram
    n = settings.n_cells
    x = np.linspace(0.0, scenario.length, n + 1)
    h = scenario.length / n
    rho = np.interp(x, scenario.rho0.x, scenario.rho0.values)
    pin_inlet, controller = _dispatch(gains, scenario, x)

    smax = d.max_abs_slope
    cap = settings.cfl_cap * h / smax
    if settings.dt is not None:
        if settings.dt > cap * (1.0 + 1e-9):
            raise StepSizeError(
                f"dt {settings.dt:.3e} exceeds the stability cap {cap:.3e} "
                f"(cfl_cap {settings.cfl_cap} at {n} cells)")
        base = settings.dt
    else:
        base = cap
    interval = float(scenario.output_times[1] - scenario.output_times[0])
    n_steps = max(1, int(np.ceil(interval / base * (1.0 - 1e-12))))
    dt = interval / n_steps

    sup0 = scenario.rho0.sup_deviation()
    escape = settings.escape_factor * max(sup0, 0.05 * d.rho_max)

    def rhs(state: np.ndarray) -> np.ndarray:
        u, _ = controller(state)
        q = u * np.asarray(d.flow(state), dtype=float)
        out = -np.gradient(q, h, edge_order=2)
        if pin_inlet:
            out[0] = 0.0
        return out

    def euler_upwind_step(state: np.ndarray) -> np.ndarray:
        u, _ = controller(state)
        fv = np.asarray(d.flow(state), dtype=float)
        q = u * fv
        speed = u * np.asarray(d.flow_slope(state), dtype=float)
        back = np.empty_like(q)
        back[1:] = np.diff(q) / h
        back[0] = (q[1] - q[0]) / h  # no left neighbour; one-sided closure
        fwd = np.empty_like(q)
        fwd[:-1] = np.diff(q) / h
        fwd[-1] = back[-1]
        dq = np.where(speed >= 0.0, back, fwd)
        if pin_inlet:
            dq[0] = 0.0
        return state - dt * dq

    targets = scenario.output_times
    nt, nx = targets.size, x.size
    rho_out = np.empty((nt, nx))
    u_out = np.empty((nt, nx))
    inlet = np.empty(nt)
    outlet = np.empty(nt)
    sup = np.empty(nt)
    bott = np.full(nt, np.nan)
    track_bottleneck = isinstance(gains, free_inlet.FreeInletGain)

    def record(j: int, state: np.ndarray) -> None:
        u, extra = controller(state)
        fv = np.asarray(d.flow(state), dtype=float)
        rho_out[j] = state
        u_out[j] = u
        inlet[j] = u[0] * fv[0]
        outlet[j] = u[-1] * fv[-1]
        sup[j] = float(np.max(np.abs(state - scenario.rho_star)))
        if track_bottleneck:
            bott[j] = x[extra]

    record(0, rho)
    total_steps = 0
    for j in range(1, nt):
        for _ in range(n_steps):
            if settings.scheme == "central_flux_rk4":
                k1 = rhs(rho)
                k2 = rhs(rho + 0.5 * dt * k1)
                k3 = rhs(rho + 0.5 * dt * k2)
                k4 = rhs(rho + dt * k3)
                rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            else:
                rho = euler_upwind_step(rho)
            total_steps += 1
        if not np.all(np.isfinite(rho)):
            raise SolverDivergenceError(
                f"state became non-finite near t = {targets[j]:.6g}")
        worst = float(np.max(np.abs(rho - scenario.rho_star)))
        if worst > escape or float(np.min(rho)) < -1e-9 * d.rho_max:
            raise SolverDivergenceError(
                f"deviation {worst:.3g} escaped the band {escape:.3g} "
                f"near t = {targets[j]:.6g}")
        record(j, rho)

    return SimulationTrace(
        times=targets, x=x, rho=rho_out, u=u_out, rho_star=scenario.rho_star,
        sup_deviation=sup, inlet_flow=inlet, outlet_flow=outlet,
        bottleneck_x=bott if track_bottleneck else None,
        metadata={
            "law": "free_inlet" if track_bottleneck else "fixed_inlet",
            "oracle": True,
            "rho_star": scenario.rho_star,
            "scheme": settings.scheme,
            "n_cells": n,
            "dt": dt,
            "steps": total_steps,
            "cfl": dt * smax / h,
        })


@dataclass(frozen=True)
class TraceComparison:
    """Per-snapshot sup gaps between two traces, on the first trace's grid."""

    times: np.ndarray
    density_gaps: np.ndarray
    control_gaps: np.ndarray

    @property
    def max_density_gap(self) -> float:
        return float(np.max(self.density_gaps))

    @property
    def max_control_gap(self) -> float:
        return float(np.max(self.control_gaps))


def compare(a: SimulationTrace, b: SimulationTrace) -> TraceComparison:
    """Sup-norm gaps in rho and u at matching output times.

    The second trace is linearly resampled onto the first trace's grid, so
    pass the reference (finer or semi-analytic) trace first when grids
    differ.
    """
    if a.times.size != b.times.size or np.max(np.abs(a.times - b.times)) > 1e-9 * max(
            1.0, float(a.times[-1])):
        raise DomainError("traces were recorded at different output times")
    same_grid = a.x.size == b.x.size and np.array_equal(a.x, b.x)
    dg = np.empty(a.times.size)
    cg = np.empty(a.times.size)
    for j in range(a.times.size):
        if same_grid:
            rb, ub = b.rho[j], b.u[j]
        else:
            rb = np.interp(a.x, b.x, b.rho[j])
            ub = np.interp(a.x, b.x, b.u[j])
        dg[j] = float(np.max(np.abs(a.rho[j] - rb)))
        cg[j] = float(np.max(np.abs(a.u[j] - ub)))
    return TraceComparison(times=a.times.copy(), density_gaps=dg, control_gaps=cg)


def _dispatch(gains, scenario: Scenario, x: np.ndarray):
    """(pin_inlet, controller) for the given gains record.

    controller(state) returns (u at nodes, extra), extra being the
    bottleneck index for the free law and the flow array for the fixed one.
    """
    d = scenario.diagram
    rho_star = scenario.rho_star
    if isinstance(gains, free_inlet.FreeInletGain):
        free_inlet._check_scenario_pairing(gains, scenario)

        def run_free(state: np.ndarray):
            Dn = cumulative_trapezoid(x, state - rho_star)
            u, _, idx = free_inlet._control_values(gains, d, state, Dn)
            return u, idx

        return False, run_free
    if isinstance(gains, fixed_inlet.FixedInletGains):
        fixed_inlet._check_scenario_pairing(gains, scenario)

        def run_fixed(state: np.ndarray):
            Dn = cumulative_trapezoid(x, state - rho_star)
            sup_t = float(np.max(np.abs(state - rho_star)))
            return fixed_inlet._control_values(
                gains, d, x, state, Dn, sup_t, ORACLE_U_TOL)

        return True, run_fixed
    raise DomainError(f"unsupported gains record {type(gains).__name__}")
