"""Scenario engine: run configured controllers, write traces, check invariants.

Output layout (per run directory):

    config.ini                resolved configuration, re-runnable
    <law>/density.csv         long format: t,x,density
    <law>/control.csv         long format: t,x,u
    <law>/limits.csv          long format: t,x,l (physical speed-limit ratio)
    <law>/norms.csv           t,sup_deviation,bound
    <law>/flows.csv           t,inlet,outlet
    <law>/bottleneck.csv      t,x_star               (free-inlet law only)
    <law>/metadata.json       trace metadata + invariant outcomes
    <law>/report.txt          certification, constants, invariant summary
    <law>/oracle/…            oracle trace + gaps.csv  (when enabled)

All floats are printed with 17 significant digits, which round-trips
float64 exactly; identical configs therefore produce bit-identical files.
The run exits nonzero if any runtime invariant check fails.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import fixed_inlet, free_inlet, pde_oracle
from .config import (RunConfig, build_diagram, build_free_gain,
                     build_oracle_settings, build_picard, build_scenario,
                     save_config)
from .errors import VslControlError
from .fundamental_diagram import CheckResult, FundamentalDiagram, speed_limits
from .profile import DensityProfile, Scenario
from .quadrature import cumulative_trapezoid
from .trace import SimulationTrace

FMT = "%.17g"


def _fmt(v: float) -> str:
    return FMT % v


@dataclass(frozen=True)
class LawResult:
    law: str
    trace: SimulationTrace
    checks: tuple[CheckResult, ...]
    directory: str
    oracle_gap: float | None = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


@dataclass(frozen=True)
class RunResult:
    directory: str
    laws: tuple[LawResult, ...]

    @property
    def exit_code(self) -> int:
        return 0 if all(lr.passed for lr in self.laws) else 1

    def law(self, name: str) -> LawResult:
        for lr in self.laws:
            if lr.law == name:
                return lr
        raise KeyError(name)


def run(cfg: RunConfig, out_dir: str | None = None) -> RunResult:
    """Execute the configured law(s), write all artifacts, check invariants."""
    base = out_dir if out_dir is not None else cfg.output_dir
    os.makedirs(base, exist_ok=True)
    scenario = build_scenario(cfg)
    save_config(cfg, os.path.join(base, "config.ini"))
    laws = ("free_inlet", "fixed_inlet") if cfg.law == "both" else (cfg.law,)
    results = []
    for law in laws:
        results.append(_run_law(cfg, scenario, law, os.path.join(base, law)))
    return RunResult(directory=base, laws=tuple(results))


def _run_law(cfg: RunConfig, scenario: Scenario, law: str, law_dir: str) -> LawResult:
    os.makedirs(law_dir, exist_ok=True)
    d = scenario.diagram
    picard = build_picard(cfg)
    if law == "free_inlet":
        gain = build_free_gain(cfg)
        trace = free_inlet.simulate(scenario, gain, picard)
        checks = _free_checks(cfg, scenario, gain, trace)
        gains_record = gain
    else:
        gains = fixed_inlet.calibrate(d, cfg.rho_star, cfg.length,
                                      cfg.sigma, cfg.gamma, cfg.mode)
        trace = fixed_inlet.simulate(scenario, gains, picard)
        checks = _fixed_checks(cfg, scenario, gains, trace)
        gains_record = gains

    _write_trace(law_dir, d, trace)
    oracle_gap = None
    if cfg.oracle_enabled:
        otrace = pde_oracle.integrate(scenario, gains_record, build_oracle_settings(cfg))
        odir = os.path.join(law_dir, "oracle")
        os.makedirs(odir, exist_ok=True)
        _write_trace(odir, d, otrace)
        _write_metadata(odir, otrace, ())
        comp = pde_oracle.compare(trace, otrace)
        with open(os.path.join(odir, "gaps.csv"), "w", encoding="utf-8",
                  newline="\n") as fh:
            fh.write("t,density_gap,control_gap\n")
            for j in range(comp.times.size):
                fh.write(f"{_fmt(comp.times[j])},{_fmt(comp.density_gaps[j])},"
                         f"{_fmt(comp.control_gaps[j])}\n")
        oracle_gap = comp.max_density_gap

    _write_metadata(law_dir, trace, checks)
    _write_report(law_dir, cfg, law, trace, checks, oracle_gap)
    return LawResult(law=law, trace=trace, checks=checks,
                     directory=law_dir, oracle_gap=oracle_gap)


# ---------------------------------------------------------------------------
# invariant checks

def _free_checks(cfg: RunConfig, scenario: Scenario, gain: free_inlet.FreeInletGain,
                 trace: SimulationTrace) -> tuple[CheckResult, ...]:
    d = scenario.diagram
    checks = [_unit_interval_check(trace)]

    worst = 0.0
    where = None
    for j in range(trace.times.size):
        Dn = cumulative_trapezoid(trace.x, trace.rho[j] - trace.rho_star)
        fv = np.asarray(d.flow(trace.rho[j]), dtype=float)
        weighted = fv * trace.u[j] / (1.0 + gain.gain * Dn)
        value = float(np.min(fv / (1.0 + gain.gain * Dn)))
        gap = float(np.max(np.abs(weighted - value)))
        if gap > worst:
            worst, where = gap, f"t = {trace.times[j]:.6g}"
    tol = 1e-6 * d.capacity
    checks.append(CheckResult(
        "flux_identity", worst <= tol,
        f"max |f(rho) u M - P| = {worst:.3e} (allowed {tol:.3e})", where))

    checks.append(_decay_check(trace, float(trace.metadata["decay_rate_bound"])))

    dev0 = trace.rho[0] - trace.rho_star
    dev = trace.rho - trace.rho_star
    flips = np.any(dev * dev0[None, :] < 0.0)
    checks.append(CheckResult(
        "deviation_sign_fixed", not bool(flips),
        "sign of rho - rho_star never flips at any node"))

    floor = min(float(np.min(trace.rho[0])), trace.rho_star)
    lo = float(np.min(trace.rho))
    hi = float(np.max(trace.rho))
    band_ok = lo >= floor - 1e-12 and hi <= d.rho_max + 1e-12
    checks.append(CheckResult(
        "density_band", band_ok,
        f"rho stays in [{floor:.6g}, rho_max]; saw [{lo:.6g}, {hi:.6g}]"))

    if abs(dev0[0]) == 0.0:
        pin = float(np.max(np.abs(trace.rho[:, 0] - trace.rho_star)))
        checks.append(CheckResult(
            "inlet_density_pinned", pin <= 1e-12,
            f"rho(t,0) stays at rho_star (max gap {pin:.3e})"))

    checks.append(_u_gap_check(trace, cfg.free_u_gap_tol))
    return tuple(checks)


def _fixed_checks(cfg: RunConfig, scenario: Scenario, gains: fixed_inlet.FixedInletGains,
                  trace: SimulationTrace) -> tuple[CheckResult, ...]:
    d = scenario.diagram
    checks = [_unit_interval_check(trace)]

    exact = bool(np.all(trace.u[:, 0] == 1.0))
    checks.append(CheckResult(
        "inlet_control_exact", exact, "u(t,0) equals 1 exactly at every snapshot"))

    pin = float(np.max(np.abs(trace.rho[:, 0] - trace.rho_star)))
    checks.append(CheckResult(
        "inlet_density_pinned", pin <= 1e-12,
        f"rho(t,0) stays at rho_star (max gap {pin:.3e})"))

    checks.append(_decay_check(trace, gains.decay_rate))

    worst = np.inf
    where = None
    ok = True
    for j in range(trace.times.size):
        prof = DensityProfile(gains.length, trace.rho[j], gains.rho_star)
        adm = fixed_inlet.admissible(gains, d, prof)
        if adm.min_slack < worst:
            worst, where = adm.min_slack, f"t = {trace.times[j]:.6g}, x = {adm.argmin_x:.6g}"
        ok = ok and adm.ok
    checks.append(CheckResult(
        "forward_invariance", ok,
        f"profiles stay admissible; worst slack {worst:.3e}", where))

    checks.append(_u_gap_check(trace, cfg.fixed_u_gap_tol))
    return tuple(checks)


def _unit_interval_check(trace: SimulationTrace) -> CheckResult:
    lo = float(np.min(trace.u))
    hi = float(np.max(trace.u))
    return CheckResult("control_in_unit_interval", lo > 0.0 and hi <= 1.0,
                       f"u in ({lo:.6g}, {hi:.6g}]")


def _decay_check(trace: SimulationTrace, rate: float) -> CheckResult:
    bound = np.exp(-rate * trace.times) * trace.sup_deviation[0]
    bad = trace.sup_deviation > bound
    if np.any(bad):
        j = int(np.argmax(bad))
        return CheckResult(
            "decay_bound", False,
            f"sup deviation {trace.sup_deviation[j]:.9g} exceeds bound {bound[j]:.9g}",
            f"t = {trace.times[j]:.6g}")
    margin = float(np.min(bound - trace.sup_deviation))
    return CheckResult("decay_bound", True,
                       f"exp(-{rate:.6g} t) bound holds (min margin {margin:.3e})")


def _u_gap_check(trace: SimulationTrace, tol: float) -> CheckResult:
    gap = float(np.max(np.abs(1.0 - trace.u[-1])))
    return CheckResult("control_gap_at_horizon", gap <= tol,
                       f"max |1 - u| = {gap:.6g} at t = {trace.times[-1]:.6g} "
                       f"(allowed {tol:.6g})")


# ---------------------------------------------------------------------------
# artifact writers

def _write_long(path: str, header: str, times: np.ndarray, x: np.ndarray,
                grid: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for j in range(times.size):
            t = _fmt(times[j])
            row = grid[j]
            for i in range(x.size):
                fh.write(f"{t},{_fmt(x[i])},{_fmt(row[i])}\n")


def _write_trace(out: str, diagram: FundamentalDiagram, trace: SimulationTrace) -> None:
    _write_long(os.path.join(out, "density.csv"), "t,x,density",
                trace.times, trace.x, trace.rho)
    _write_long(os.path.join(out, "control.csv"), "t,x,u",
                trace.times, trace.x, trace.u)
    limits = np.empty_like(trace.u)
    for j in range(trace.times.size):
        limits[j] = speed_limits(diagram, trace.rho[j], trace.u[j])
    _write_long(os.path.join(out, "limits.csv"), "t,x,l",
                trace.times, trace.x, limits)

    rate = float(trace.metadata.get("decay_rate_bound", 0.0))
    bound = np.exp(-rate * trace.times) * trace.sup_deviation[0]
    with open(os.path.join(out, "norms.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,sup_deviation,bound\n")
        for j in range(trace.times.size):
            fh.write(f"{_fmt(trace.times[j])},{_fmt(trace.sup_deviation[j])},"
                     f"{_fmt(bound[j])}\n")
    with open(os.path.join(out, "flows.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,inlet,outlet\n")
        for j in range(trace.times.size):
            fh.write(f"{_fmt(trace.times[j])},{_fmt(trace.inlet_flow[j])},"
                     f"{_fmt(trace.outlet_flow[j])}\n")
    if trace.bottleneck_x is not None:
        with open(os.path.join(out, "bottleneck.csv"), "w", encoding="utf-8",
                  newline="\n") as fh:
            fh.write("t,x_star\n")
            for j in range(trace.times.size):
                fh.write(f"{_fmt(trace.times[j])},{_fmt(trace.bottleneck_x[j])}\n")


def _json_default(value):
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value)}")


def _write_metadata(out: str, trace: SimulationTrace,
                    checks: tuple[CheckResult, ...]) -> None:
    payload = dict(trace.metadata)
    payload["invariant_checks"] = {c.name: bool(c.passed) for c in checks}
    with open(os.path.join(out, "metadata.json"), "w", encoding="utf-8",
              newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _write_report(out: str, cfg: RunConfig, law: str, trace: SimulationTrace,
                  checks: tuple[CheckResult, ...], oracle_gap: float | None) -> None:
    lines = [f"run report: {law}"]
    if cfg.note:
        lines.append(f"note: {cfg.note}")
    lines.append(
        f"diagram: exponential flow_scale={cfg.flow_scale:g} "
        f"density_scale={cfg.density_scale:g} shape={cfg.shape:g} "
        f"vsl_sensitivity={cfg.vsl_sensitivity:g} rho_max={cfg.rho_max:g}")
    lines.append(
        f"scenario: length={cfg.length:g} rho_star={cfg.rho_star:g} "
        f"n_cells={cfg.n_cells} horizon={cfg.horizon:g} snapshots={cfg.snapshots}")
    lines.append("")
    lines.extend(certification_lines(cfg, law))
    lines.append("")
    lines.append("constants:")
    for key in ("decay_rate_bound", "bottleneck_floor", "lipschitz_slope",
                "capacity", "critical_density", "window", "slope_reserve",
                "min_concavity", "max_back_slope", "signed_sup_gap"):
        if key in trace.metadata:
            lines.append(f"  {key} = {trace.metadata[key]!r}")
    picard = trace.metadata.get("picard", {})
    if picard:
        stats = " ".join(f"{k}={picard[k]!r}" for k in sorted(picard))
        lines.append(f"  picard: {stats}")
    lines.append("")
    lines.append("invariants:")
    for c in checks:
        lines.append(f"  {c}")
    if oracle_gap is not None:
        lines.append("")
        lines.append(f"oracle: max density gap = {oracle_gap!r}")
    lines.append("")
    lines.append("exit: ok" if all(c.passed for c in checks)
                 else "exit: INVARIANT VIOLATION")
    with open(os.path.join(out, "report.txt"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# certification

def certification_lines(cfg: RunConfig, law: str | None = None) -> list[str]:
    """Human-readable evaluation of every gain condition, both sides shown."""
    scenario_laws = ("free_inlet", "fixed_inlet") if cfg.law == "both" else (cfg.law,)
    laws = scenario_laws if law is None else (law,)
    d = build_diagram(cfg)
    lines = ["certification:"]
    for current in laws:
        if current == "free_inlet":
            bound = 1.0 / (cfg.length * cfg.rho_star)
            ok = 0.0 < cfg.free_gain < bound
            lines.append(
                f"  free_inlet gain_bound: 0 < {cfg.free_gain:.9g} < {bound:.9g}"
                f" = 1/(L rho_star): {'pass' if ok else 'FAIL'}")
        else:
            gains = fixed_inlet.calibrate(d, cfg.rho_star, cfg.length,
                                          cfg.sigma, cfg.gamma, mode="override")
            for cond in gains.conditions:
                lines.append(f"  fixed_inlet {cond}")
            lines.append(
                f"  fixed_inlet derived: slope_reserve={gains.slope_reserve!r} "
                f"min_concavity={gains.min_concavity!r} "
                f"max_back_slope={gains.max_back_slope!r} "
                f"decay_rate={gains.decay_rate!r} certified={gains.certified}")
    return lines


def certify(cfg: RunConfig) -> str:
    """Certification-only entry point; never raises on failed conditions."""
    return "\n".join(certification_lines(cfg)) + "\n"


# ---------------------------------------------------------------------------
# trace reload + comparison

def _read_long(path: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    times = np.unique(data[:, 0])
    x = np.unique(data[:, 1])
    grid = data[:, 2].reshape(times.size, x.size)
    # rows are written t-major with x ascending, so the reshape is exact;
    # verify rather than assume.
    if not np.array_equal(data[:, 0].reshape(times.size, x.size)[:, 0], times):
        raise VslControlError(f"unexpected row order in {path}")
    return times, x, grid


def load_trace(directory: str) -> SimulationTrace:
    """Rebuild a SimulationTrace from a run directory's CSV files."""
    times, x, rho = _read_long(os.path.join(directory, "density.csv"))
    _, _, u = _read_long(os.path.join(directory, "control.csv"))
    flows = np.loadtxt(os.path.join(directory, "flows.csv"), delimiter=",", skiprows=1)
    with open(os.path.join(directory, "metadata.json"), "r", encoding="utf-8") as fh:
        metadata = json.load(fh)
    rho_star = float(metadata["rho_star"])
    bpath = os.path.join(directory, "bottleneck.csv")
    bott = None
    if os.path.exists(bpath):
        bott = np.loadtxt(bpath, delimiter=",", skiprows=1)[:, 1]
    return SimulationTrace(
        times=times, x=x, rho=rho, u=u, rho_star=rho_star,
        sup_deviation=np.max(np.abs(rho - rho_star), axis=1),
        inlet_flow=flows[:, 1], outlet_flow=flows[:, 2],
        bottleneck_x=bott, metadata=metadata)


def compare_runs(dir_a: str, dir_b: str) -> pde_oracle.TraceComparison:
    return pde_oracle.compare(load_trace(dir_a), load_trace(dir_b))
