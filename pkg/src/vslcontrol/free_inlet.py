"""Speed-limit feedback for a road whose inlet flow the controller shapes.

The law weights the flow at each position by

    M(rho, x) = 1 / (1 + k * D(x)),      D(x) = integral_0^x (rho - rho_star)

and equalizes the weighted flow to its worst (bottleneck) value:

    u(x) = min_z [ f(rho(z)) M(rho, z) ] / ( f(rho(x)) M(rho, x) ).

Under the gain bound 0 < k < 1/(length * rho_star) the closed loop contracts
the deviation exponentially from any initial profile, with rate at least

    c(s) = k * min{ f(r) : min(s, rho_star) <= r <= rho_max }
             / (1 + k * length * (rho_max - rho_star)),

s being the smallest initial density.  The closed-loop solution factorizes as
rho(t, x) = rho_star + (rho0(x) - rho_star) * exp(-k * integral_0^t P(s) ds)
where P(t) is the bottleneck value, so simulation reduces to a scalar
fixed-point problem for P on short time windows (a Picard iteration whose
contraction factor is kept below `safety` by the window length).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DomainError, StateEscapeError
from .fundamental_diagram import FundamentalDiagram
from .profile import DensityProfile, Scenario
from .quadrature import cumulative_trapezoid, integral_to
from .trace import SimulationTrace


@dataclass(frozen=True)
class FreeInletGain:
    """Feedback gain k for a road of the given length and target density."""

    gain: float
    length: float
    rho_star: float

    def __post_init__(self):
        if self.length <= 0.0 or self.rho_star <= 0.0:
            raise DomainError("length and rho_star must be positive")
        if not (0.0 < self.gain < 1.0 / (self.length * self.rho_star)):
            raise DomainError(
                f"gain must lie in (0, {1.0 / (self.length * self.rho_star):.6g}) "
                f"= (0, 1/(length*rho_star))")


@dataclass(frozen=True)
class PicardSettings:
    """Knobs of the fixed-point solvers.

    window:       time-window length for the windowed solver; None sizes it
                  from the contraction bound so the factor equals `safety`.
    time_samples: subintervals of the uniform time grid carrying the
                  fixed-point function (per window for the windowed solver,
                  per unit time for the whole-horizon solver).
    tol:          sup-norm stopping tolerance of the iteration.
    max_iter:     iteration budget before declaring non-convergence.
    safety:       required contraction factor bound, in (0, 1).
    retry_cap:    times a non-converging window may be halved and retried.
    """

    window: float | None = None
    time_samples: int = 64
    tol: float = 1e-10
    max_iter: int = 200
    safety: float = 0.5
    retry_cap: int = 5

    def __post_init__(self):
        if self.window is not None and self.window <= 0.0:
            raise DomainError("window must be positive")
        if self.time_samples < 2:
            raise DomainError("need at least 2 time samples")
        if not (0.0 < self.safety < 1.0):
            raise DomainError("safety must lie in (0, 1)")
        if self.tol <= 0.0 or self.max_iter < 1 or self.retry_cap < 0:
            raise DomainError("tol, max_iter and retry_cap must be positive")


def weight(gain: FreeInletGain, profile: DensityProfile, x: float) -> float:
    """M(rho, x) = 1 / (1 + k D(x)); equals 1 at x = 0 and at equilibrium."""
    _check_pairing(gain, profile)
    den = 1.0 + gain.gain * profile.cumulative_deviation(x)
    if den <= 0.0:
        raise StateEscapeError("weight denominator lost positivity")
    return 1.0 / den


def bottleneck(gain: FreeInletGain, diagram: FundamentalDiagram,
               profile: DensityProfile) -> tuple[float, float]:
    """Minimum of f(rho) M over the grid and its smallest minimizer."""
    _, value, idx = _control_values(gain, diagram, profile.values,
                                    profile.node_deviation_integrals())
    return value, float(profile.x[idx])


def control(gain: FreeInletGain, diagram: FundamentalDiagram,
            profile: DensityProfile, x: float) -> float:
    """u(x) = P / (f(rho(x)) M(rho, x)) for any position on the road.

    Equals 1 exactly at the bottleneck and never exceeds 1.
    """
    _check_pairing(gain, profile)
    value, _ = bottleneck(gain, diagram, profile)
    rho_x = profile.value_at(x)
    den = float(diagram.flow(rho_x)) * weight(gain, profile, x)
    if den <= 0.0:
        raise StateEscapeError("flow vanished; control undefined")
    return min(value / den, 1.0)


def control_profile(gain: FreeInletGain, diagram: FundamentalDiagram,
                    profile: DensityProfile) -> np.ndarray:
    """u at every grid node."""
    _check_pairing(gain, profile)
    u, _, _ = _control_values(gain, diagram, profile.values,
                              profile.node_deviation_integrals())
    return u


def decay_rate_bound(gain: FreeInletGain, diagram: FundamentalDiagram,
                     s: float) -> float:
    """Certified exponential rate c(s) for initial data bounded below by s."""
    if not (0.0 < s <= diagram.rho_max):
        raise DomainError("s must lie in (0, rho_max]")
    lo = min(s, gain.rho_star)
    grid = np.linspace(lo, diagram.rho_max, 2001)
    fmin = float(np.min(diagram.flow(grid)))
    return gain.gain * fmin / (
        1.0 + gain.gain * gain.length * (diagram.rho_max - gain.rho_star))


def contraction_window(gain: FreeInletGain, diagram: FundamentalDiagram,
                       safety: float = 0.5) -> float:
    """Largest window length whose Picard contraction factor is `safety`."""
    coeff = _contraction_coefficient(gain, diagram)
    return safety / coeff


def _contraction_coefficient(gain: FreeInletGain, diagram: FundamentalDiagram) -> float:
    """kappa / T: the contraction factor of a window of length T is coeff * T."""
    k, L = gain.gain, gain.length
    spread = max(gain.rho_star, diagram.rho_max - gain.rho_star)
    lip = (diagram.capacity * k * L + diagram.max_abs_slope) / (1.0 - k * L * gain.rho_star) ** 2
    return lip * k * spread


def simulate(scenario: Scenario, gain: FreeInletGain,
             settings: PicardSettings = PicardSettings()) -> SimulationTrace:
    """Closed-loop run over the scenario horizon.

    Solves the bottleneck fixed point window by window, then evaluates the
    factorized solution at the scenario's output times.  A window that
    fails to converge is halved and retried (up to settings.retry_cap).
    """
    d = scenario.diagram
    _check_scenario_pairing(gain, scenario)
    if not (gain.rho_star < d.delta):
        raise DomainError("rho_star must lie strictly below the diagram's "
                          "limit-reduction threshold")
    if settings.window is not None:
        kappa = _contraction_coefficient(gain, d) * settings.window
        if kappa > settings.safety:
            raise DomainError(
                f"window gives contraction factor {kappa:.3g} > safety {settings.safety}")
        window0 = settings.window
    else:
        window0 = contraction_window(gain, d, settings.safety)

    targets = scenario.output_times
    x = scenario.rho0.x
    dev = scenario.rho0.values - scenario.rho_star
    nt, nx = targets.size, x.size

    rho_out = np.empty((nt, nx))
    u_out = np.empty((nt, nx))
    inlet = np.empty(nt)
    outlet = np.empty(nt)
    sup = np.empty(nt)
    bott = np.empty(nt)

    def record(j: int, vals: np.ndarray) -> None:
        Dn = cumulative_trapezoid(x, vals - scenario.rho_star)
        u, value, idx = _control_values(gain, d, vals, Dn)
        rho_out[j] = vals
        u_out[j] = u
        fv = np.asarray(d.flow(vals), dtype=float)
        inlet[j] = u[0] * fv[0]
        outlet[j] = u[-1] * fv[-1]
        sup[j] = float(np.max(np.abs(vals - scenario.rho_star)))
        bott[j] = x[idx]

    record(0, scenario.rho0.values.copy())
    j = 1
    t0 = 0.0
    window = window0
    n_windows = 0
    max_iters = 0
    max_ratio = 0.0
    eps = 1e-12 * max(1.0, scenario.horizon)
    while t0 < scenario.horizon - eps:
        span = min(window, scenario.horizon - t0)
        for attempt in range(settings.retry_cap + 1):
            try:
                tn, g, cumg, iters, ratio = _solve_window(
                    d, gain, scenario.rho_star, x, dev, span, settings)
                break
            except ConvergenceError:
                if attempt == settings.retry_cap:
                    raise
                span *= 0.5
                window = min(window, span)  # keep the shrunken window from here on
        n_windows += 1
        max_iters = max(max_iters, iters)
        max_ratio = max(max_ratio, ratio)
        while j < nt and targets[j] <= t0 + span + eps:
            s_local = min(targets[j] - t0, span)
            shrink = np.exp(-gain.gain * integral_to(tn, g, cumg, s_local))
            record(j, scenario.rho_star + dev * shrink)
            j += 1
        dev = dev * np.exp(-gain.gain * cumg[-1])
        t0 += span

    if j < nt:
        raise ConvergenceError("window march ended before the last output time")

    lowest = float(np.min(scenario.rho0.values))
    rate = decay_rate_bound(gain, d, lowest)
    floor = rate / gain.gain
    return SimulationTrace(
        times=targets, x=x, rho=rho_out, u=u_out, rho_star=scenario.rho_star,
        sup_deviation=sup, inlet_flow=inlet, outlet_flow=outlet, bottleneck_x=bott,
        metadata={
            "law": "free_inlet",
            "gain": gain.gain,
            "length": gain.length,
            "rho_star": scenario.rho_star,
            "decay_rate_bound": rate,
            "bottleneck_floor": floor,
            "lipschitz_slope": d.max_abs_slope,
            "capacity": d.capacity,
            "critical_density": d.critical_density,
            "window": window0,
            "picard": {
                "windows": n_windows,
                "max_iterations": max_iters,
                "max_contraction_ratio": max_ratio,
                "factor_bound": min(_contraction_coefficient(gain, d) * window0,
                                    settings.safety),
                "tol": settings.tol,
            },
        })


def _control_values(gain: FreeInletGain, diagram: FundamentalDiagram,
                    values: np.ndarray, node_integrals: np.ndarray
                    ) -> tuple[np.ndarray, float, int]:
    """(u at nodes, bottleneck value, index of its smallest position)."""
    weighted = np.asarray(diagram.flow(values), dtype=float) / (
        1.0 + gain.gain * node_integrals)
    idx = int(np.argmin(weighted))
    value = float(weighted[idx])
    if value <= 0.0:
        raise StateEscapeError("weighted flow lost positivity")
    return value / weighted, value, idx


def _solve_window(diagram: FundamentalDiagram, gain: FreeInletGain, rho_star: float,
                  x: np.ndarray, dev: np.ndarray, span: float,
                  settings: PicardSettings):
    """Fixed point of g(t) = P(rho[t]) on one window, by Picard iteration.

    rho[t] = rho_star + dev * exp(-k * integral_0^t g), so every iterate
    only needs the window-start deviation integrals.
    """
    k = gain.gain
    tn = np.linspace(0.0, span, settings.time_samples + 1)
    D0 = cumulative_trapezoid(x, dev)
    start = rho_star + dev
    weighted0 = np.asarray(diagram.flow(start), dtype=float) / (1.0 + k * D0)
    g = np.full(tn.size, float(np.min(weighted0)))
    prev_diff = None
    worst_ratio = 0.0
    ratio_floor = 1e3 * settings.tol
    for it in range(settings.max_iter):
        cumg = cumulative_trapezoid(tn, g)
        shrink = np.exp(-k * cumg)
        vals = rho_star + shrink[:, None] * dev[None, :]
        weighted = np.asarray(diagram.flow(vals), dtype=float) / (
            1.0 + k * shrink[:, None] * D0[None, :])
        g_new = weighted.min(axis=1)
        diff = float(np.max(np.abs(g_new - g)))
        if prev_diff is not None and prev_diff > ratio_floor:
            worst_ratio = max(worst_ratio, diff / prev_diff)
        g = g_new
        if diff <= settings.tol:
            cumg = cumulative_trapezoid(tn, g)
            return tn, g, cumg, it + 1, worst_ratio
        prev_diff = diff
    raise ConvergenceError(
        f"window of length {span:.6g} did not converge in {settings.max_iter} iterations")


def _check_pairing(gain: FreeInletGain, profile: DensityProfile) -> None:
    if profile.rho_star != gain.rho_star or profile.length != gain.length:
        raise DomainError("gain and profile disagree on rho_star or length")


def _check_scenario_pairing(gain: FreeInletGain, scenario: Scenario) -> None:
    if scenario.rho_star != gain.rho_star or scenario.length != gain.length:
        raise DomainError("gain and scenario disagree on rho_star or length")
