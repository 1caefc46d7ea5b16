"""Independent finite-volume integrator used to cross-check the closed forms.

Proves:
  1.  settings validation (scheme names, cell floor, cfl window, dt sign)
  2.  equilibrium initial data is preserved to machine precision by both
      schemes under both laws
  3.  short-horizon integration tracks the semi-analytic solution on a
      coarse grid under both laws
  4.  an explicit dt above the advective limit raises before stepping
  5.  compare: identical traces give zero gaps, mismatched time grids are
      rejected, different space grids are resampled
  6.  conservation bookkeeping: interior mass change matches boundary
      fluxes to discretization accuracy
  7.  unsupported gains records are rejected
"""

import numpy as np
import pytest

from vslcontrol import (DomainError, FreeInletGain, OracleSettings, Scenario,
                        StepSizeError, bump_profile, fixed_inlet, free_inlet,
                        pde_oracle, uniform_profile)


def short_scenario(diagram, n_cells=80, horizon=2.0):
    p = bump_profile(1.0, n_cells, 0.7)
    return Scenario(diagram=diagram, length=1.0, rho_star=0.7, rho0=p,
                    horizon=horizon, output_interval=0.5)


class TestSettings:
    def test_defaults(self):
        s = OracleSettings()
        assert s.n_cells == 400 and s.scheme == "central_flux_rk4"

    def test_rejections(self):
        with pytest.raises(DomainError):
            OracleSettings(scheme="lax_wendroff")
        with pytest.raises(DomainError):
            OracleSettings(n_cells=3)
        with pytest.raises(DomainError):
            OracleSettings(cfl_cap=0.0)
        with pytest.raises(DomainError):
            OracleSettings(dt=-0.1)


class TestEquilibrium:
    @pytest.mark.parametrize("scheme", pde_oracle.SCHEMES)
    def test_free_law_constant_state(self, diagram, free_gain, scheme):
        p = uniform_profile(1.0, 60, 0.7)
        sc = Scenario(diagram=diagram, length=1.0, rho_star=0.7, rho0=p,
                      horizon=1.0, output_interval=0.25)
        tr = pde_oracle.integrate(sc, free_gain, OracleSettings(n_cells=60, scheme=scheme))
        assert np.max(np.abs(tr.rho - 0.7)) < 1e-13

    @pytest.mark.parametrize("scheme", pde_oracle.SCHEMES)
    def test_fixed_law_constant_state(self, diagram, fixed_gains, scheme):
        p = uniform_profile(1.0, 60, 0.7)
        sc = Scenario(diagram=diagram, length=1.0, rho_star=0.7, rho0=p,
                      horizon=1.0, output_interval=0.25)
        tr = pde_oracle.integrate(sc, fixed_gains, OracleSettings(n_cells=60, scheme=scheme))
        assert np.max(np.abs(tr.rho - 0.7)) < 1e-13


class TestShortRuns:
    def test_free_law_tracks_closed_form(self, diagram, free_gain):
        sc = short_scenario(diagram)
        semi = free_inlet.simulate(sc, free_gain)
        num = pde_oracle.integrate(sc, free_gain, OracleSettings(n_cells=80))
        cmp = pde_oracle.compare(semi, num)
        assert cmp.max_density_gap < 5e-3

    def test_fixed_law_tracks_closed_form(self, diagram, fixed_gains):
        sc = short_scenario(diagram)
        semi = fixed_inlet.simulate(sc, fixed_gains)
        num = pde_oracle.integrate(sc, fixed_gains, OracleSettings(n_cells=80))
        cmp = pde_oracle.compare(semi, num)
        assert cmp.max_density_gap < 5e-3

    def test_upwind_is_coarser_but_stable(self, diagram, free_gain):
        sc = short_scenario(diagram)
        semi = free_inlet.simulate(sc, free_gain)
        num = pde_oracle.integrate(
            sc, free_gain, OracleSettings(n_cells=80, scheme="upwind_euler"))
        cmp = pde_oracle.compare(semi, num)
        assert cmp.max_density_gap < 5e-2

    def test_metadata_labels_the_oracle(self, diagram, free_gain):
        sc = short_scenario(diagram, horizon=0.5)
        tr = pde_oracle.integrate(sc, free_gain, OracleSettings(n_cells=40))
        assert tr.metadata["oracle"] is True
        assert tr.metadata["law"] == "free_inlet"
        assert tr.metadata["n_cells"] == 40
        assert tr.metadata["steps"] >= 1


class TestStepSize:
    def test_oversized_dt_rejected(self, diagram, free_gain):
        sc = short_scenario(diagram, horizon=0.5)
        with pytest.raises(StepSizeError):
            pde_oracle.integrate(sc, free_gain,
                                 OracleSettings(n_cells=200, dt=0.5))

    def test_explicit_dt_matches_auto_when_equal(self, diagram, free_gain):
        sc = short_scenario(diagram, n_cells=40, horizon=0.5)
        auto = pde_oracle.integrate(sc, free_gain, OracleSettings(n_cells=40))
        dt = sc.output_interval / auto.metadata["steps"]
        manual = pde_oracle.integrate(sc, free_gain,
                                      OracleSettings(n_cells=40, dt=dt))
        np.testing.assert_allclose(manual.rho, auto.rho, rtol=0, atol=1e-12)


class TestCompare:
    def test_identity_is_zero(self, diagram, free_gain):
        sc = short_scenario(diagram, horizon=0.5)
        tr = free_inlet.simulate(sc, free_gain)
        cmp = pde_oracle.compare(tr, tr)
        assert cmp.max_density_gap == 0.0
        assert cmp.max_control_gap == 0.0

    def test_mismatched_times_rejected(self, diagram, free_gain):
        a = free_inlet.simulate(short_scenario(diagram, horizon=1.0), free_gain)
        b = free_inlet.simulate(short_scenario(diagram, horizon=2.0), free_gain)
        with pytest.raises(DomainError):
            pde_oracle.compare(a, b)

    def test_space_resampling(self, diagram, free_gain):
        sc_fine = short_scenario(diagram, n_cells=160, horizon=1.0)
        sc_coarse = short_scenario(diagram, n_cells=80, horizon=1.0)
        a = free_inlet.simulate(sc_fine, free_gain)
        b = free_inlet.simulate(sc_coarse, free_gain)
        cmp = pde_oracle.compare(a, b)
        # linear resampling of the coarse trace dominates: O(h^2) ~ 2e-4
        assert cmp.max_density_gap < 5e-4


class TestConservation:
    def test_mass_balance(self, diagram, free_gain):
        sc = short_scenario(diagram, horizon=1.0)
        tr = pde_oracle.integrate(sc, free_gain, OracleSettings(n_cells=80))
        h = tr.x[1] - tr.x[0]
        for j in range(1, tr.times.size):
            dm = np.trapezoid(tr.rho[j] - tr.rho[j - 1], tr.x)
            dt = tr.times[j] - tr.times[j - 1]
            net = np.trapezoid((tr.inlet_flow[j - 1:j + 1] - tr.outlet_flow[j - 1:j + 1]),
                           tr.times[j - 1:j + 1])
            assert dm == pytest.approx(net, abs=5e-3 * dt + 5 * h ** 2)


class TestDispatch:
    def test_unsupported_gains_rejected(self, diagram):
        sc = short_scenario(diagram, horizon=0.5)
        with pytest.raises(DomainError):
            pde_oracle.integrate(sc, object(), OracleSettings(n_cells=40))

    def test_pairing_checked(self, diagram):
        sc = short_scenario(diagram, horizon=0.5)
        wrong = FreeInletGain(0.3, 1.0, 0.9)
        with pytest.raises(DomainError):
            pde_oracle.integrate(sc, wrong, OracleSettings(n_cells=40))
