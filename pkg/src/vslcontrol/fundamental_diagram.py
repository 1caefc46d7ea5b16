"""Fundamental diagrams: equilibrium flow as a function of density.

The central object is the family

    F(rho, l) = A * rho * l * exp(-(1/shape) * (b*rho / (1 + a - a*l))**shape)

where l in (0, 1] is the speed-limit ratio (l = 1 means no limit) and
f(rho) := F(rho, 1) is the unlimited flow.  A > 0 scales flow, b > 0 scales
density, shape > 0 controls the exponential roll-off and a >= 0 controls how
strongly a speed limit reduces flow at low density.

Two structural assumptions are used by the controllers built on top:

  * unimodality: f(0) = 0, f > 0 on (0, rho_max], f' > 0 left of a single
    critical density, f'(rho_cr) = 0, and f'' < 0 on [0, rho_max];
  * limit response: F(rho, .) is strictly increasing on (0, l_sat(rho))
    where l_sat(rho) is the smallest limit ratio at which the limited flow
    already equals the unlimited flow (l_sat = 1 up to a threshold density
    delta, below which any speed limit strictly reduces flow).

`validate_assumptions` checks both on a sample grid and reports violations.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import AssumptionError, ConvergenceError, DomainError, UnsupportedDiagramError

TOL_ROOT = 1e-12
MAX_BISECT_ITER = 200
DENSITY_TOL_REL = 1e-9  # slack on rho-domain checks, absorbs solver roundoff


def _bisect(fn: Callable[[float], float], lo: float, hi: float,
            flo: float | None = None) -> float:
    """Root of fn on [lo, hi] by bisection to TOL_ROOT on the abscissa.

    Requires a sign change on the bracket.  Keeps the subinterval whose left
    value shares the sign of fn(lo), so the returned root is the first
    crossing inside the bracket.
    """
    if flo is None:
        flo = fn(lo)
    if flo == 0.0:
        return lo
    if flo * fn(hi) > 0.0:
        raise ConvergenceError(f"no sign change on [{lo}, {hi}]")
    for _ in range(MAX_BISECT_ITER):
        mid = 0.5 * (lo + hi)
        if hi - lo <= TOL_ROOT:
            return mid
        fm = fn(mid)
        if flo * fm <= 0.0:
            hi = mid
        else:
            lo, flo = mid, fm
    return 0.5 * (lo + hi)


class FundamentalDiagram:
    """Interface shared by all diagram kinds.

    Subclasses provide flow, flow_slope, flow_curvature and rho_max.
    Derived quantities (critical density, capacity, the limit-reduction
    threshold) are computed lazily and cached.
    """

    rho_max: float

    def flow(self, rho):
        raise NotImplementedError

    def flow_slope(self, rho):
        raise NotImplementedError

    def flow_curvature(self, rho):
        raise NotImplementedError

    # -- limit-response surface; only diagrams with a VSL model support these

    def vsl_flow(self, rho, limit):
        raise UnsupportedDiagramError("this diagram has no speed-limit response model")

    def saturating_limit(self, rho: float) -> float:
        raise UnsupportedDiagramError("this diagram has no speed-limit response model")

    def invert_vsl(self, rho: float, flow_value: float) -> float:
        raise UnsupportedDiagramError("this diagram has no speed-limit response model")

    # -- derived constants

    @cached_property
    def critical_density(self) -> float:
        """Unique rho_cr with f'(rho_cr) = 0, by bracketed bisection."""
        slope0 = float(self.flow_slope(0.0))
        slope1 = float(self.flow_slope(self.rho_max))
        if slope0 <= 0.0:
            raise AssumptionError("flow slope is not positive at rho = 0")
        if slope1 >= 0.0:
            raise AssumptionError("flow slope does not change sign on [0, rho_max]; "
                                  "no interior critical density")
        return _bisect(lambda r: float(self.flow_slope(r)), 0.0, self.rho_max, slope0)

    @cached_property
    def capacity(self) -> float:
        """Peak flow f(rho_cr)."""
        return float(self.flow(self.critical_density))

    @cached_property
    def delta(self) -> float:
        """Density threshold below which any speed limit strictly reduces flow."""
        return self.rho_max

    @cached_property
    def max_abs_slope(self) -> float:
        """max |f'| over [0, rho_max], estimated on a 2001-point grid.

        Serves as the Lipschitz constant of f and as a safe wave-speed
        bound (the limit ratio never exceeds 1).
        """
        grid = np.linspace(0.0, self.rho_max, 2001)
        return float(np.max(np.abs(self.flow_slope(grid))))

    def _check_density(self, rho) -> np.ndarray:
        r = np.asarray(rho, dtype=float)
        tol = DENSITY_TOL_REL * max(1.0, self.rho_max)
        if np.any(r < -tol) or np.any(r > self.rho_max + tol):
            raise DomainError(f"density outside [0, {self.rho_max}]")
        return r


@dataclass(frozen=True, eq=False)
class ExponentialDiagram(FundamentalDiagram):
    """The exponential family F(rho, l) above.

    flow_scale:      A > 0
    density_scale:   b > 0
    shape:           exponent > 0
    vsl_sensitivity: a >= 0 (a = 0 makes the limited flow exactly l * f(rho))
    rho_max:         jam density > 0
    """

    flow_scale: float = 1.0
    density_scale: float = 1.0
    shape: float = 1.0
    vsl_sensitivity: float = 0.0
    rho_max: float = 1.0

    def __post_init__(self):
        if self.flow_scale <= 0 or self.density_scale <= 0 or self.shape <= 0:
            raise DomainError("flow_scale, density_scale and shape must be positive")
        if self.vsl_sensitivity < 0:
            raise DomainError("vsl_sensitivity must be nonnegative")
        if self.rho_max <= 0:
            raise DomainError("rho_max must be positive")

    # f(rho) = A rho exp(-(b rho)^shape / shape)
    def flow(self, rho):
        r = self._check_density(rho)
        v = (self.density_scale * r) ** self.shape
        out = self.flow_scale * r * np.exp(-v / self.shape)
        return out if out.ndim else float(out)

    # f'(rho) = A exp(-(b rho)^shape / shape) (1 - (b rho)^shape)
    def flow_slope(self, rho):
        r = self._check_density(rho)
        v = (self.density_scale * r) ** self.shape
        out = self.flow_scale * np.exp(-v / self.shape) * (1.0 - v)
        return out if out.ndim else float(out)

    # f''(rho) = -A exp(-(b rho)^shape / shape) (b rho)^shape (1 + shape - (b rho)^shape) / rho
    def flow_curvature(self, rho):
        r = self._check_density(rho)
        v = (self.density_scale * r) ** self.shape
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(r > 0.0, v / np.where(r > 0.0, r, 1.0), 0.0)
        # v / rho -> b at rho = 0 for shape = 1, -> 0 for shape > 1, diverges for shape < 1
        if np.any(r == 0.0):
            if self.shape == 1.0:
                lim = self.density_scale
            elif self.shape > 1.0:
                lim = 0.0
            else:
                lim = np.inf
            ratio = np.where(r == 0.0, lim, ratio)
        out = -self.flow_scale * np.exp(-v / self.shape) * ratio * (1.0 + self.shape - v)
        return out if out.ndim else float(out)

    def vsl_flow(self, rho, limit):
        """Flow under speed-limit ratio `limit`, F(rho, limit)."""
        r = self._check_density(rho)
        l = np.asarray(limit, dtype=float)
        if np.any(l <= 0.0) or np.any(l > 1.0):
            raise DomainError("limit ratio must lie in (0, 1]")
        out = self._vsl_flow_raw(r, l)
        return out if out.ndim else float(out)

    def _vsl_flow_raw(self, r, l):
        s = 1.0 + self.vsl_sensitivity * (1.0 - l)
        v = (self.density_scale * r / s) ** self.shape
        return self.flow_scale * r * l * np.exp(-v / self.shape)

    def _limit_slope(self, rho, limit):
        """dF/dl, used by the assumption checks."""
        r = np.asarray(rho, dtype=float)
        l = np.asarray(limit, dtype=float)
        a = self.vsl_sensitivity
        s = 1.0 + a * (1.0 - l)
        v = (self.density_scale * r / s) ** self.shape
        core = (self.density_scale * r) ** self.shape
        return self.flow_scale * r * np.exp(-v / self.shape) * (1.0 - a * l * core / s ** (1.0 + self.shape))

    @cached_property
    def delta(self) -> float:
        """rho_max when a (b rho_max)^shape <= 1, else 1 / (b a^(1/shape)).

        Below delta every limit ratio l < 1 strictly reduces flow, so the
        saturating limit is 1 there.
        """
        a = self.vsl_sensitivity
        if a * (self.density_scale * self.rho_max) ** self.shape <= 1.0:
            return self.rho_max
        return 1.0 / (self.density_scale * a ** (1.0 / self.shape))

    def _saturation_residual(self, rho: float, l) -> np.ndarray:
        a = self.vsl_sensitivity
        core = (self.density_scale * rho) ** self.shape
        l = np.asarray(l, dtype=float)
        return (1.0 + a * (1.0 - l)) ** self.shape * (1.0 + self.shape / core * np.log(l)) - 1.0

    def saturating_limit(self, rho: float) -> float:
        """Smallest limit ratio whose limited flow equals the unlimited flow.

        Equals 1 for rho <= delta.  Above delta it is the smallest l solving
        (1 + a(1-l))^shape (1 + shape (b rho)^-shape ln l) = 1, located by a
        geometric scan on (1e-9, 1] followed by bisection.
        """
        r = float(self._check_density(rho))
        if r <= 0.0:
            raise DomainError("saturating limit needs rho > 0")
        if r <= self.delta:
            return 1.0
        grid = np.geomspace(1e-9, 1.0, 600)
        vals = self._saturation_residual(r, grid)
        idx = np.nonzero(vals >= 0.0)[0]
        if idx.size == 0:
            raise ConvergenceError("saturating-limit equation has no crossing on the scan grid")
        i = int(idx[0])
        if i == 0:
            return float(grid[0])
        return _bisect(lambda l: float(self._saturation_residual(r, l)),
                       float(grid[i - 1]), float(grid[i]), float(vals[i - 1]))

    def invert_vsl(self, rho: float, flow_value: float) -> float:
        """Limit ratio l in (0, l_sat(rho)] with F(rho, l) = flow_value.

        F(rho, .) is strictly increasing on that interval, so plain
        bisection applies.  flow_value must lie in (0, f(rho)].
        """
        r = float(self._check_density(rho))
        if r <= 0.0:
            raise DomainError("inversion needs rho > 0")
        y = float(flow_value)
        fr = float(self.flow(r))
        if y <= 0.0 or y > fr * (1.0 + 1e-12):
            raise DomainError(f"target flow {y} outside (0, f(rho) = {fr}]")
        hi = self.saturating_limit(r)
        lo, fhi = 0.0, float(self.vsl_flow(r, hi)) - y
        if fhi <= 0.0:
            return hi
        flo = -y
        for _ in range(MAX_BISECT_ITER):
            mid = 0.5 * (lo + hi)
            if hi - lo <= TOL_ROOT:
                break
            fm = (float(self.vsl_flow(r, mid)) - y) if mid > 0.0 else -y
            if flo * fm <= 0.0:
                hi = mid
            else:
                lo, flo = mid, fm
        l = 0.5 * (lo + hi)
        if abs(float(self.vsl_flow(r, max(l, 1e-300))) - y) > 1e-9 * max(1.0, fr):
            raise ConvergenceError("speed-limit inversion did not reach the target flow")
        return l


@dataclass(frozen=True, eq=False)
class TabulatedDiagram(FundamentalDiagram):
    """Diagram given by samples of f, f' and f'' on a uniform density grid.

    Each array is interpolated with a monotone cubic (PCHIP), which
    preserves the sign structure of the data between nodes, so the
    assumption checks stay meaningful.  No speed-limit response model is
    attached; the limit-specific operations raise UnsupportedDiagramError
    and delta defaults to rho_max.
    """

    rho_grid: np.ndarray
    flow_values: np.ndarray
    slope_values: np.ndarray
    curvature_values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.rho_grid, dtype=float)
        if grid.ndim != 1 or grid.size < 4:
            raise DomainError("rho_grid must be a 1-d array with at least 4 nodes")
        if grid[0] != 0.0 or np.any(np.diff(grid) <= 0.0):
            raise DomainError("rho_grid must start at 0 and increase strictly")
        for name in ("flow_values", "slope_values", "curvature_values"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != grid.shape:
                raise DomainError(f"{name} must match rho_grid in shape")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "rho_grid", grid)

    @property
    def rho_max(self) -> float:  # type: ignore[override]
        return float(self.rho_grid[-1])

    @cached_property
    def _interpolants(self):
        from scipy.interpolate import PchipInterpolator
        return tuple(PchipInterpolator(self.rho_grid, v, extrapolate=False)
                     for v in (self.flow_values, self.slope_values, self.curvature_values))

    def _eval(self, which: int, rho):
        r = self._check_density(rho)
        r = np.clip(r, 0.0, self.rho_max)
        out = self._interpolants[which](r)
        return out if np.asarray(out).ndim else float(out)

    def flow(self, rho):
        return self._eval(0, rho)

    def flow_slope(self, rho):
        return self._eval(1, rho)

    def flow_curvature(self, rho):
        return self._eval(2, rho)

    @classmethod
    def sample(cls, flow: Callable, slope: Callable, curvature: Callable,
               rho_max: float, n: int = 1001) -> "TabulatedDiagram":
        """Build a table by sampling three callables on a uniform grid."""
        grid = np.linspace(0.0, rho_max, n)
        return cls(grid, np.asarray(flow(grid), dtype=float),
                   np.asarray(slope(grid), dtype=float),
                   np.asarray(curvature(grid), dtype=float))


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    where: tuple | None = None
    skipped: bool = False

    def __str__(self) -> str:
        status = "skip" if self.skipped else ("pass" if self.passed else "FAIL")
        loc = "" if self.where is None else f" at {self.where}"
        return f"{self.name}: {status} ({self.detail}{loc})"


@dataclass(frozen=True)
class AssumptionReport:
    checks: tuple[CheckResult, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed or c.skipped for c in self.checks)

    def __str__(self) -> str:
        return "\n".join(str(c) for c in self.checks)


def validate_assumptions(diagram: FundamentalDiagram, n_samples: int = 2001) -> AssumptionReport:
    """Check the structural assumptions on a sample grid over [0, rho_max].

    Reported checks:
      flow_vanishes_at_zero        f(0) = 0
      flow_positive_inside         f > 0 on (0, rho_max]
      single_flow_peak             f' changes sign + -> - exactly once
      strict_concavity             f'' < 0 everywhere
      limit_monotone_below_saturation
                                   dF/dl > 0 for l < l_sat(rho) (diagrams
                                   with a limit model; a 41-point density
                                   subgrid and 9 limit fractions)

    Returns a report with one entry per check and the first violating
    sample, if any.  Nothing raises here; callers decide what a failure
    means for them.
    """
    grid = np.linspace(0.0, diagram.rho_max, n_samples)
    fv = np.asarray(diagram.flow(grid), dtype=float)
    sv = np.asarray(diagram.flow_slope(grid), dtype=float)
    cv = np.asarray(diagram.flow_curvature(grid), dtype=float)
    checks: list[CheckResult] = []

    scale = max(1.0, float(np.max(np.abs(fv))))
    ok = abs(fv[0]) <= 1e-12 * scale
    checks.append(CheckResult("flow_vanishes_at_zero", ok, f"f(0) = {fv[0]:.3e}"))

    bad = np.nonzero(fv[1:] <= 0.0)[0]
    if bad.size:
        rho_bad = float(grid[1 + bad[0]])
        checks.append(CheckResult("flow_positive_inside", False,
                                  f"f({rho_bad:.6g}) = {fv[1 + bad[0]]:.3e}", (rho_bad,)))
    else:
        checks.append(CheckResult("flow_positive_inside", True, "f > 0 on (0, rho_max]"))

    checks.append(_sign_pattern_check(grid, sv))

    bad = np.nonzero(cv >= 0.0)[0]
    if bad.size:
        rho_bad = float(grid[bad[0]])
        checks.append(CheckResult("strict_concavity", False,
                                  f"f''({rho_bad:.6g}) = {cv[bad[0]]:.3e}", (rho_bad,)))
    else:
        checks.append(CheckResult("strict_concavity", True, "f'' < 0 on [0, rho_max]"))

    if isinstance(diagram, ExponentialDiagram):
        checks.append(_limit_monotonicity_check(diagram))
    else:
        checks.append(CheckResult("limit_monotone_below_saturation", True,
                                  "not applicable: no speed-limit response model",
                                  skipped=True))
    return AssumptionReport(tuple(checks))


def _sign_pattern_check(grid: np.ndarray, slopes: np.ndarray) -> CheckResult:
    name = "single_flow_peak"
    if slopes[0] <= 0.0:
        return CheckResult(name, False, f"f'(0) = {slopes[0]:.3e} is not positive", (float(grid[0]),))
    neg = np.nonzero(slopes < 0.0)[0]
    if neg.size == 0:
        return CheckResult(name, False, "f' never becomes negative; no interior peak")
    first_neg = int(neg[0])
    # strictly positive before the transition, at most one zero sample at it
    head = slopes[:first_neg]
    zeros = np.nonzero(head == 0.0)[0]
    if zeros.size > 1 or (zeros.size == 1 and zeros[0] != first_neg - 1):
        rho_bad = float(grid[zeros[0]])
        return CheckResult(name, False, "f' vanishes before the peak", (rho_bad,))
    tail = slopes[first_neg:]
    bad = np.nonzero(tail >= 0.0)[0]
    if bad.size:
        rho_bad = float(grid[first_neg + bad[0]])
        return CheckResult(name, False, f"f' returns to {tail[bad[0]]:.3e} past the peak", (rho_bad,))
    lo, hi = float(grid[max(first_neg - 1, 0)]), float(grid[first_neg])
    return CheckResult(name, True, f"single + -> - transition in [{lo:.6g}, {hi:.6g}]")


def _limit_monotonicity_check(diagram: ExponentialDiagram) -> CheckResult:
    name = "limit_monotone_below_saturation"
    rhos = np.linspace(0.0, diagram.rho_max, 41)[1:]
    fractions = np.linspace(0.05, 0.95, 9)
    for rho in rhos:
        lsat = diagram.saturating_limit(float(rho))
        slopes = diagram._limit_slope(float(rho), fractions * lsat)
        bad = np.nonzero(np.asarray(slopes) <= 0.0)[0]
        if bad.size:
            l_bad = float(fractions[bad[0]] * lsat)
            return CheckResult(name, False,
                               f"dF/dl <= 0 below the saturating limit", (float(rho), l_bad))
    return CheckResult(name, True, "dF/dl > 0 for l < l_sat(rho) on the subgrid")


def _saturating_limits_grid(diagram: ExponentialDiagram, r: np.ndarray) -> np.ndarray:
    """Vectorized saturating limits for a flat array of positive densities."""
    out = np.ones_like(r)
    mask = r > diagram.delta
    if not np.any(mask):
        return out
    rm = r[mask]
    grid = np.geomspace(1e-9, 1.0, 600)
    resid = diagram._saturation_residual(rm[:, None], grid[None, :])
    first = np.argmax(resid >= 0.0, axis=1)  # residual is 0 at l = 1, so a hit exists
    lo = np.where(first > 0, grid[np.maximum(first - 1, 0)], grid[0])
    hi = grid[first]
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        up = diagram._saturation_residual(rm, mid) >= 0.0
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
    out[mask] = 0.5 * (lo + hi)
    return out


def speed_limits(diagram: FundamentalDiagram, rho: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Physical limit ratios realizing the control u on a density field.

    Solves F(rho, l) = u * f(rho) elementwise, staying on the monotone
    branch l <= l_sat(rho).  With vsl_sensitivity = 0 this is simply l = u.
    """
    if not isinstance(diagram, ExponentialDiagram):
        raise UnsupportedDiagramError("physical limits need a diagram with a limit model")
    r, uu = np.broadcast_arrays(np.asarray(rho, dtype=float), np.asarray(u, dtype=float))
    if np.any(uu <= 0.0) or np.any(uu > 1.0 + 1e-9):
        raise DomainError("control values must lie in (0, 1]")
    if diagram.vsl_sensitivity == 0.0:
        return np.minimum(uu, 1.0) * np.ones_like(r)
    shape = r.shape
    r1 = r.ravel().copy()
    u1 = np.minimum(uu.ravel(), 1.0)
    out = np.empty_like(r1)
    zero = r1 <= 0.0
    out[zero] = u1[zero]  # zero density carries zero flow; any ratio realizes it
    r1m = r1[~zero]
    y = u1[~zero] * np.asarray(diagram.flow(r1m), dtype=float)
    hi = _saturating_limits_grid(diagram, r1m)
    y = np.minimum(y, diagram._vsl_flow_raw(r1m, hi))
    lo = np.zeros_like(r1m)
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        up = diagram._vsl_flow_raw(r1m, np.maximum(mid, 1e-300)) >= y
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
    out[~zero] = 0.5 * (lo + hi)
    return out.reshape(shape)
