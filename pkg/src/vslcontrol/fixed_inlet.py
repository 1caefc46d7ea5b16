"""Speed-limit feedback for a road whose inlet releases the target flow.

The law holds the inlet at the target flow f(rho_star) and relaxes the
interior through

    u(t, x) = [ f(rho_star) + sigma * D(x) - (gamma x^2 / 2) * S(t) ] / f(rho(t, x))

with D(x) the running deviation integral and S(t) the sup-norm deviation.
It applies on the invariant family of admissible profiles: rho(0) = rho_star
and f(rho_star) + sigma D(x) - (gamma x^2 / 2) S <= f(rho(x)) everywhere,
which keeps u in (0, 1] with u(t, 0) = 1.

Calibration checks the sufficient margin conditions

    f(rho_star)  > sigma L (rho_max + rho_star) / 2          (flow margin)
    f'(rho_star) > sigma L                                   (slope margin)
    sigma Q a^2 / (2 (q + sigma L)(rho_max - rho_star)) > gamma L
                                                             (curvature margin)
    sigma > gamma L                                          (rate margin)

where a is the width of the band above rho_star on which f' stays above
sigma L, Q = min(-f'') and q = max(0, max(-f')) past that band.  When they
hold the deviation decays like exp(-(sigma - gamma L) t).  The closed loop
reduces to rho_t = -sigma (rho - rho_star) + gamma x S(t), so simulation is
a single whole-horizon fixed-point problem for S with contraction factor
gamma L / sigma < 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CertificationError, ConvergenceError, DomainError, StateEscapeError
from .fundamental_diagram import FundamentalDiagram, _bisect
from .free_inlet import PicardSettings
from .profile import DensityProfile, Scenario
from .quadrature import cumulative_trapezoid, integral_to
from .trace import SimulationTrace

U_TOL = 1e-9  # tolerance band on u <= 1 for semi-analytic states


@dataclass(frozen=True)
class ConditionResult:
    """One sufficient condition, evaluated: lhs must exceed rhs."""

    name: str
    lhs: float
    rhs: float
    passed: bool
    note: str = ""

    def __str__(self) -> str:
        extra = f" ({self.note})" if self.note else ""
        return f"{self.name}: {self.lhs:.9g} > {self.rhs:.9g}: " \
               f"{'pass' if self.passed else 'FAIL'}{extra}"


@dataclass(frozen=True)
class FixedInletGains:
    """Gains (sigma, gamma) plus the constants derived during calibration.

    decay_rate = sigma - gamma * length; slope_reserve is the band width a
    above; min_concavity and max_back_slope are the Q and q grid estimates.
    certified is True when every sufficient condition passed.
    """

    sigma: float
    gamma: float
    length: float
    rho_star: float
    decay_rate: float
    slope_reserve: float
    min_concavity: float
    max_back_slope: float
    certified: bool
    conditions: tuple[ConditionResult, ...] = field(default=())

    def failed_conditions(self) -> tuple[ConditionResult, ...]:
        return tuple(c for c in self.conditions if not c.passed)


def calibrate(diagram: FundamentalDiagram, rho_star: float, length: float,
              sigma: float, gamma: float, mode: str = "strict") -> FixedInletGains:
    """Evaluate the sufficient conditions and package the gains.

    mode="strict" raises CertificationError naming the first failed
    condition; mode="override" returns the gains with certified=False and
    the full condition list, so a run can proceed at the caller's risk.
    """
    if mode not in ("strict", "override"):
        raise DomainError(f"unknown calibration mode {mode!r}")
    if sigma <= 0.0 or gamma <= 0.0 or length <= 0.0:
        raise DomainError("sigma, gamma and length must be positive")
    ceiling = min(diagram.delta, diagram.critical_density, diagram.rho_max / 2.0)
    if not (0.0 < rho_star < ceiling):
        raise DomainError(
            f"rho_star must lie in (0, {ceiling:.6g}) "
            "= (0, min(delta, critical density, rho_max/2))")

    f_star = float(diagram.flow(rho_star))
    slope_star = float(diagram.flow_slope(rho_star))
    sl = sigma * length
    conditions: list[ConditionResult] = []

    flow_rhs = sl * (diagram.rho_max + rho_star) / 2.0
    conditions.append(ConditionResult(
        "flow_margin", f_star, flow_rhs, f_star > flow_rhs,
        "target flow versus sigma*L*(rho_max+rho_star)/2"))
    conditions.append(ConditionResult(
        "slope_margin", slope_star, sl, slope_star > sl,
        "flow slope at the target versus sigma*L"))

    rho_cr = diagram.critical_density
    if slope_star > sl:
        top = rho_cr - rho_star
        reserve = _bisect(lambda aa: float(diagram.flow_slope(rho_star + aa)) - sl,
                          0.0, top, slope_star - sl)
    else:
        reserve = float("nan")

    grid_all = np.linspace(0.0, diagram.rho_max, 2001)
    min_concavity = float(np.min(-np.asarray(diagram.flow_curvature(grid_all))))
    if np.isfinite(reserve):
        band = np.linspace(rho_star + reserve, diagram.rho_max, 2001)
        back = float(np.max(-np.asarray(diagram.flow_slope(band))))
        max_back_slope = max(0.0, back)
        curve_lhs = sigma * min_concavity * reserve ** 2 / (
            2.0 * (max_back_slope + sl) * (diagram.rho_max - rho_star))
    else:
        max_back_slope = float("nan")
        curve_lhs = float("nan")
    conditions.append(ConditionResult(
        "curvature_margin", curve_lhs, gamma * length,
        bool(np.isfinite(curve_lhs) and curve_lhs > gamma * length),
        "relaxation margin versus gamma*L" if np.isfinite(curve_lhs)
        else "slope margin failed; no reserve band exists"))
    conditions.append(ConditionResult(
        "rate_margin", sigma, gamma * length, sigma > gamma * length,
        "sigma versus gamma*L"))

    certified = all(c.passed for c in conditions)
    if mode == "strict" and not certified:
        first = next(c for c in conditions if not c.passed)
        raise CertificationError(f"sufficient condition failed: {first}")
    return FixedInletGains(
        sigma=sigma, gamma=gamma, length=length, rho_star=rho_star,
        decay_rate=sigma - gamma * length, slope_reserve=reserve,
        min_concavity=min_concavity, max_back_slope=max_back_slope,
        certified=certified, conditions=tuple(conditions))


@dataclass(frozen=True)
class AdmissibilityResult:
    ok: bool
    min_slack: float
    argmin_x: float
    boundary_gap: float

    def __bool__(self) -> bool:
        return self.ok


def admissible(gains: FixedInletGains, diagram: FundamentalDiagram,
               profile: DensityProfile) -> AdmissibilityResult:
    """Whether the profile lies in the invariant family of the law.

    Checks rho(0) = rho_star (within 1e-9 * rho_max) and the flow-slack
    inequality at every grid node; reports the worst slack and where.
    """
    _check_pairing(gains, profile)
    boundary_gap = abs(float(profile.values[0]) - gains.rho_star)
    boundary_ok = boundary_gap <= 1e-9 * diagram.rho_max
    lhs = _flow_budget(gains, diagram, profile.x,
                       profile.node_deviation_integrals(), profile.sup_deviation())
    slack = np.asarray(diagram.flow(profile.values), dtype=float) - lhs
    idx = int(np.argmin(slack))
    min_slack = float(slack[idx])
    return AdmissibilityResult(boundary_ok and min_slack >= 0.0,
                               min_slack, float(profile.x[idx]), boundary_gap)


def control(gains: FixedInletGains, diagram: FundamentalDiagram,
            profile: DensityProfile, x: float, u_tol: float = U_TOL) -> float:
    """u(x) for the current profile; exactly 1 at x = 0."""
    _check_pairing(gains, profile)
    budget = float(diagram.flow(gains.rho_star)) \
        + gains.sigma * profile.cumulative_deviation(x) \
        - 0.5 * gains.gamma * x ** 2 * profile.sup_deviation()
    den = float(diagram.flow(profile.value_at(x)))
    if den <= 0.0:
        raise StateEscapeError("flow vanished; control undefined")
    u = budget / den
    if u <= 0.0 or u > 1.0 + u_tol:
        raise StateEscapeError(
            f"control {u:.6g} left (0, 1] at x = {x:.6g}; profile not admissible")
    return min(u, 1.0)


def control_profile(gains: FixedInletGains, diagram: FundamentalDiagram,
                    profile: DensityProfile, u_tol: float = U_TOL) -> np.ndarray:
    """u at every grid node."""
    _check_pairing(gains, profile)
    u, _ = _control_values(gains, diagram, profile.x, profile.values,
                           profile.node_deviation_integrals(),
                           profile.sup_deviation(), u_tol)
    return u


def simulate(scenario: Scenario, gains: FixedInletGains,
             settings: PicardSettings = PicardSettings()) -> SimulationTrace:
    """Closed-loop run over the scenario horizon.

    Solves the whole-horizon fixed point for the sup-norm deviation path
    (valid because gamma L / sigma < 1 uniformly in the horizon), then
    evaluates the closed-form state at the output times.  The fixed-point
    grid carries settings.time_samples nodes per unit time.
    """
    d = scenario.diagram
    _check_scenario_pairing(gains, scenario)
    adm = admissible(gains, d, scenario.rho0)
    if not adm.ok:
        raise DomainError(
            f"initial profile is not admissible (slack {adm.min_slack:.3e} "
            f"at x = {adm.argmin_x:.6g}, boundary gap {adm.boundary_gap:.3e})")
    factor = gains.gamma * gains.length / gains.sigma
    if factor >= 1.0:
        raise DomainError("sigma must exceed gamma * length for the "
                          "fixed-point iteration to contract")

    x = scenario.rho0.x
    dev0 = scenario.rho0.values - gains.rho_star
    sup0 = scenario.rho0.sup_deviation()
    n_sub = max(settings.time_samples, int(np.ceil(scenario.horizon * settings.time_samples)))
    tn = np.linspace(0.0, scenario.horizon, n_sub + 1)
    grow = np.exp(gains.sigma * tn)
    shrink = np.exp(-gains.sigma * tn)

    g = np.full(tn.size, sup0)
    prev_diff = None
    worst_ratio = 0.0
    ratio_floor = 1e3 * settings.tol
    iters = 0
    for it in range(settings.max_iter):
        J = cumulative_trapezoid(tn, grow * g)
        inner = dev0[None, :] + gains.gamma * J[:, None] * x[None, :]
        g_new = shrink * inner.max(axis=1)
        diff = float(np.max(np.abs(g_new - g)))
        if prev_diff is not None and prev_diff > ratio_floor:
            worst_ratio = max(worst_ratio, diff / prev_diff)
        g = g_new
        iters = it + 1
        if diff <= settings.tol:
            break
        prev_diff = diff
    else:
        raise ConvergenceError(
            f"whole-horizon iteration did not converge in {settings.max_iter} iterations")

    wJ = grow * g
    cumJ = cumulative_trapezoid(tn, wJ)
    targets = scenario.output_times
    nt, nx = targets.size, x.size
    rho_out = np.empty((nt, nx))
    u_out = np.empty((nt, nx))
    inlet = np.empty(nt)
    outlet = np.empty(nt)
    sup = np.empty(nt)
    gap = 0.0
    for j, t in enumerate(targets):
        Jt = integral_to(tn, wJ, cumJ, float(t))
        damp = float(np.exp(-gains.sigma * t))
        vals = gains.rho_star + damp * dev0 + gains.gamma * x * (damp * Jt)
        Dn = cumulative_trapezoid(x, vals - gains.rho_star)
        sup_t = float(np.max(np.abs(vals - gains.rho_star)))
        signed_t = float(np.max(vals - gains.rho_star))
        gap = max(gap, abs(sup_t - signed_t))
        u, fv = _control_values(gains, d, x, vals, Dn, sup_t, U_TOL)
        rho_out[j] = vals
        u_out[j] = u
        inlet[j] = u[0] * fv[0]
        outlet[j] = u[-1] * fv[-1]
        sup[j] = sup_t
    gap_tol = 1e-8 * max(1.0, sup0)
    return SimulationTrace(
        times=targets, x=x, rho=rho_out, u=u_out, rho_star=gains.rho_star,
        sup_deviation=sup, inlet_flow=inlet, outlet_flow=outlet, bottleneck_x=None,
        metadata={
            "law": "fixed_inlet",
            "sigma": gains.sigma,
            "gamma": gains.gamma,
            "length": gains.length,
            "rho_star": gains.rho_star,
            "decay_rate_bound": gains.decay_rate,
            "certified": gains.certified,
            "conditions": [str(c) for c in gains.conditions],
            "slope_reserve": gains.slope_reserve,
            "min_concavity": gains.min_concavity,
            "max_back_slope": gains.max_back_slope,
            "signed_sup_gap": gap,
            "signed_sup_gap_flagged": bool(gap > gap_tol),
            "picard": {
                "windows": 1,
                "max_iterations": iters,
                "max_contraction_ratio": worst_ratio,
                "factor_bound": factor,
                "tol": settings.tol,
            },
        })


def _flow_budget(gains: FixedInletGains, diagram: FundamentalDiagram,
                 x: np.ndarray, node_integrals: np.ndarray, sup: float) -> np.ndarray:
    return float(diagram.flow(gains.rho_star)) + gains.sigma * node_integrals \
        - 0.5 * gains.gamma * x ** 2 * sup


def _control_values(gains: FixedInletGains, diagram: FundamentalDiagram,
                    x: np.ndarray, values: np.ndarray, node_integrals: np.ndarray,
                    sup: float, u_tol: float) -> tuple[np.ndarray, np.ndarray]:
    budget = _flow_budget(gains, diagram, x, node_integrals, sup)
    fv = np.asarray(diagram.flow(values), dtype=float)
    if np.any(fv <= 0.0):
        raise StateEscapeError("flow vanished; control undefined")
    u = budget / fv
    if np.any(u <= 0.0) or np.any(u > 1.0 + u_tol):
        bad = int(np.argmax(np.where((u <= 0.0) | (u > 1.0 + u_tol), np.abs(u - 0.5), -1.0)))
        raise StateEscapeError(
            f"control {u[bad]:.6g} left (0, 1] at x = {x[bad]:.6g}; profile not admissible")
    return np.minimum(u, 1.0), fv


def _check_pairing(gains: FixedInletGains, profile: DensityProfile) -> None:
    if profile.rho_star != gains.rho_star or profile.length != gains.length:
        raise DomainError("gains and profile disagree on rho_star or length")


def _check_scenario_pairing(gains: FixedInletGains, scenario: Scenario) -> None:
    if scenario.rho_star != gains.rho_star or scenario.length != gains.length:
        raise DomainError("gains and scenario disagree on rho_star or length")
