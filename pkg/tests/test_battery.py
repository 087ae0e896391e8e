"""
Unit tests for battery module.

Author: noomesk
"""

import numpy as np
import pytest

from src import battery
from src.battery import (BatteryCellParams, BatteryModelError, BatteryPackParams, BatteryState, BatterySurrogate,
                         ah_eol, capacity_loss, current_to_power, degradation_cost_step, exact_degradation_cost,
                         fit_battery_surrogate, fit_current_surrogate, fit_eol_surrogate, fit_line, max_charge_power,
                         max_discharge_power, power_to_current_exact, pre_exponential, soc_step,
                         surrogate_check, terminal_voltage, update_health)
from src.fitting import FitError


def flat_cell(ocv: float = 3.3, r0: float = 0.01, **kwargs) -> BatteryCellParams:
    """Cell with constant OCV and resistance over the whole SOC range."""
    return BatteryCellParams(ocv_soc=[0.0, 100.0], ocv_values=[ocv, ocv],
                             r0_soc=[0.0, 100.0], r0_values=[r0, r0], **kwargs)


class TestCellModel:
    """Test cases for the equivalent-circuit cell model."""

    def test_zero_current_keeps_soc(self, cell):
        """Test a rest step leaves SOC unchanged."""
        state = soc_step(BatteryState(soc=50.0), 0.0, 60.0, cell)

        assert state.soc == 50.0
        assert state.ah_throughput == 0.0

    def test_charge_step(self, cell):
        """Test one minute at 3.84 A raises SOC by two points."""
        state = soc_step(BatteryState(soc=50.0), 3.84, 60.0, cell)

        assert state.soc == pytest.approx(52.0, abs=1e-12)
        assert state.ah_throughput == pytest.approx(3.84 / 60.0)

    def test_soc_overflow(self, cell):
        """Test one hour at 1C from half charge overflows."""
        with pytest.raises(BatteryModelError, match="SOC range violation"):
            soc_step(BatteryState(soc=50.0), 3.2, 3600.0, cell)

    def test_terminal_voltage(self):
        """Test the resistive drop follows the current sign."""
        cell = flat_cell()

        assert terminal_voltage(40.0, 0.0, cell) == pytest.approx(3.3)
        assert terminal_voltage(40.0, -3.0, cell) == pytest.approx(3.27)
        assert terminal_voltage(40.0, 3.0, cell) == pytest.approx(3.33)

    def test_exact_current_root(self):
        """Test the discharge root of OCV * r - R0 * r**2 = p."""
        cell = flat_cell()

        assert power_to_current_exact(0.0, 50.0, cell) == 0.0
        current = power_to_current_exact(9.9, 50.0, cell)
        assert current == pytest.approx(-(3.3 - np.sqrt(3.3 ** 2 - 4 * 0.01 * 9.9)) / 0.02, rel=1e-12)
        assert current == pytest.approx(-3.03, abs=5e-3)

    def test_power_beyond_capability(self):
        """Test a negative discriminant is an error."""
        with pytest.raises(BatteryModelError, match="exceeds battery capability"):
            power_to_current_exact(3.3 ** 2 / (4 * 0.01) + 1.0, 50.0, flat_cell())

    def test_power_current_round_trip(self, cell):
        """Test the exact map round-trips through the cell power equation."""
        soc = np.linspace(20.0, 90.0, 15)
        power = np.linspace(-12.0, 12.0, 15)

        current = power_to_current_exact(power, soc, cell)

        np.testing.assert_allclose(current_to_power(current, soc, cell), power, rtol=1e-9, atol=1e-12)
        assert np.all(np.sign(current) == -np.sign(power))

    def test_power_limits(self, cell):
        """Test charge and discharge limits sit at the current limits."""
        assert max_charge_power(50.0, cell) < 0 < max_discharge_power(50.0, cell)
        assert power_to_current_exact(max_discharge_power(50.0, cell), 50.0, cell) == pytest.approx(cell.i_min)

    def test_extrapolation_rejected(self):
        """Test curves are not extrapolated beyond their breakpoints."""
        cell = BatteryCellParams(ocv_soc=[10.0, 90.0], ocv_values=[3.4, 4.0],
                                 r0_soc=[10.0, 90.0], r0_values=[0.04, 0.04])

        with pytest.raises(BatteryModelError, match="extrapolation"):
            cell.ocv(95.0)

    def test_invalid_current_limits(self):
        """Test current limits must straddle zero."""
        with pytest.raises(BatteryModelError, match="i_min < 0 < i_max"):
            BatteryCellParams(i_min=1.0)


class TestAgeing:
    """Test cases for the capacity-fade model."""

    def test_no_throughput_no_loss(self, cell):
        """Test zero throughput gives zero loss."""
        assert capacity_loss(2.0, 298.15, 0.0, cell) == 0.0

    def test_capacity_loss_reference_point(self):
        """Test 1000 Ah at 2C and 298.15 K with a C-rate-raised activation energy."""
        cell = BatteryCellParams(b_c=370.3)
        activation = 31700.0 + 370.3 * 2.0
        expected = 21681.0 * np.exp(-activation / (8.314 * 298.15)) * 1000.0 ** 0.55

        loss = capacity_loss(2.0, 298.15, 1000.0, cell)

        assert loss == pytest.approx(expected, rel=1e-12)
        assert loss == pytest.approx(2.01, abs=0.01)

    def test_capacity_loss_reference_point_default_sign(self, cell):
        """Test the same 1000 Ah at 2C point with the default, C-rate-lowered activation energy."""
        expected = 21681.0 * np.exp(-(31700.0 - 370.3 * 2.0) / (8.314 * 298.15)) * 1000.0 ** 0.55

        loss = capacity_loss(2.0, 298.15, 1000.0, cell)

        assert cell.b_c == -370.3
        assert loss == pytest.approx(expected, rel=1e-12)
        assert loss == pytest.approx(3.64, abs=0.02)

    def test_raised_activation_energy_breaks_eol_fit(self):
        """Test a positive b_c makes life grow with C-rate, so the cost fit is refused."""
        cell = BatteryCellParams(b_c=370.3)
        eol = ah_eol(np.linspace(0.5, 10.0, 200), 298.15, cell)

        assert np.all(np.diff(eol) > 0)
        with pytest.raises(FitError, match="negative"):
            fit_eol_surrogate(cell, (0.5, 10.0))

    def test_pre_exponential_nodes(self, cell):
        """Test table nodes are reproduced and ends are clamped."""
        assert pre_exponential(0.5, cell) == 31630.0
        assert pre_exponential(2.0, cell) == 21681.0
        assert pre_exponential(0.1, cell) == 31630.0
        assert pre_exponential(20.0, cell) == 15512.0
        assert pre_exponential(1.25, cell) == pytest.approx(0.5 * (31630.0 + 21681.0))

    def test_ah_eol_reference_point(self):
        """Test end-of-life throughput at 2C is about 65,000 Ah."""
        cell = BatteryCellParams(b_c=370.3)

        assert ah_eol(2.0, 298.15, cell) == pytest.approx(6.5e4, rel=0.02)

    def test_inverse_identity(self, cell):
        """Test capacity loss at the end-of-life throughput is exactly 20 %."""
        rng = np.random.default_rng(7)
        for c_rate, temperature in zip(rng.uniform(0.1, 12.0, 10), rng.uniform(273.0, 323.0, 10)):
            eol = ah_eol(c_rate, temperature, cell)
            assert capacity_loss(c_rate, temperature, eol, cell) == pytest.approx(20.0, rel=1e-9)

    def test_random_points_match_direct_formula(self, cell):
        """Test capacity loss against a direct evaluation at random points."""
        rng = np.random.default_rng(11)
        c_rate = rng.uniform(0.0, 12.0, 10)
        temperature = rng.uniform(273.0, 323.0, 10)
        ah = rng.uniform(0.0, 5.0e4, 10)
        m = np.interp(c_rate, [0.5, 2.0, 6.0, 10.0], [31630.0, 21681.0, 12934.0, 15512.0])
        expected = m * np.exp(-(31700.0 - 370.3 * c_rate) / (8.314 * temperature)) * ah ** 0.55

        for i in range(10):
            assert capacity_loss(c_rate[i], temperature[i], ah[i], cell) == pytest.approx(expected[i], rel=1e-9)

    def test_loss_increases_with_throughput(self, cell):
        """Test capacity loss grows with throughput on a 1,000-point scan."""
        losses = capacity_loss(2.0, 298.15, np.linspace(1.0, 1.0e5, 1000), cell)

        assert np.all(np.diff(losses) > 0)

    def test_eol_decreases_with_c_rate_at_constant_factor(self):
        """Test a faster C-rate shortens life when the pre-exponential factor is flat."""
        cell = BatteryCellParams(m_table=((1.0, 20000.0),))

        eol = ah_eol(np.linspace(0.0, 10.0, 1000), 298.15, cell)

        assert np.all(np.diff(eol) < 0)

    def test_eol_decreases_above_table_minimum(self, cell):
        """Test the default cell ages faster with C-rate beyond the table minimum."""
        eol = ah_eol(np.linspace(6.0, 10.0, 1000), 298.15, cell)

        assert np.all(np.diff(eol) < 0)

    def test_negative_inputs_rejected(self, cell):
        """Test negative C-rate, throughput or temperature are errors."""
        with pytest.raises(BatteryModelError, match="C-rate"):
            capacity_loss(-1.0, 298.15, 10.0, cell)
        with pytest.raises(BatteryModelError, match="Ah throughput"):
            capacity_loss(1.0, 298.15, -10.0, cell)
        with pytest.raises(BatteryModelError, match="Temperature"):
            ah_eol(1.0, 0.0, cell)

    def test_health_never_improves(self, cell):
        """Test capacity loss is monotone along a mixed current sequence."""
        state = BatteryState(soc=50.0)
        previous = 0.0
        for current in (3.84, -1.0, 0.2, -3.84, 0.0):
            state = update_health(state, current, 60.0, cell)
            assert state.q_loss >= previous
            assert state.soh == pytest.approx(100.0 - state.q_loss)
            previous = state.q_loss


class TestSurrogates:
    """Test cases for the optimizer surrogates."""

    def test_current_fit_exact_for_ideal_cell(self):
        """Test a constant-OCV resistance-free cell gives an exact linear map."""
        fit = fit_current_surrogate(flat_cell(r0=0.0))

        assert fit["a_bat"] == pytest.approx(-1.0 / 3.3, rel=1e-9)
        assert fit["b_bat"] == pytest.approx(0.0, abs=1e-12)
        assert fit["r_squared"] == pytest.approx(1.0, abs=1e-12)

    def test_current_fit_quality(self, cell):
        """Test the default cell fit over 20-90 % SOC reaches R² 0.98."""
        fit = fit_current_surrogate(cell, (20.0, 90.0), (-12.0, 12.0), (20, 20))

        assert fit["r_squared"] >= 0.98
        assert fit["a_bat"] < 0
        assert fit["fit_domain"]["soc_pct"] == (20.0, 90.0)

    def test_current_fit_grid_too_small(self, cell):
        """Test a tiny grid is rejected."""
        with pytest.raises(FitError, match="at least 10x10"):
            fit_current_surrogate(cell, grid_counts=(1, 1))

    def test_eol_fit_two_points_is_exact(self, cell):
        """Test two C-rates give the interpolating line."""
        a_d, b_d, r2 = fit_eol_surrogate(cell, c_rates=[6.0, 10.0])

        for c_rate in (6.0, 10.0):
            assert a_d * c_rate + b_d == pytest.approx(1.0 / ah_eol(c_rate, cell.temperature, cell), rel=1e-9)
        assert r2 == pytest.approx(1.0)

    def test_eol_fit_default_slope_positive(self, cell):
        """Test the default cell over 0.5-10C gives a convex cost."""
        a_d, _, _ = fit_eol_surrogate(cell, (0.5, 10.0))

        assert a_d > 0

    def test_eol_fit_rejects_negative_slope(self, cell):
        """Test a decreasing sample range cannot be used."""
        with pytest.raises(FitError, match="negative"):
            fit_eol_surrogate(cell, c_rates=[1.0, 3.0])

    def test_line_refit_is_idempotent(self):
        """Test refitting samples of a fitted line reproduces it."""
        x = np.linspace(0.5, 10.0, 20)
        slope, intercept, _ = fit_line(x, 1e-5 * x + 2e-6 + 1e-7 * np.sin(x))

        again = fit_line(x, slope * x + intercept)

        assert again[0] == pytest.approx(slope, rel=1e-9)
        assert again[1] == pytest.approx(intercept, rel=1e-9)

    def test_surrogate_r2_check(self, surrogate):
        """Test the fitted surrogate passes the quality gate."""
        assert surrogate_check(surrogate)
        assert surrogate.r_squared_current >= 0.98

    def test_poor_current_fit_flagged(self):
        """Test a current map below the gate fails the check."""
        poor = BatterySurrogate(a_bat=-0.3, b_bat=0.0, a_d=1e-6, b_d=1e-6, r_squared_current=0.9)

        assert not surrogate_check(poor)
        assert surrogate_check(poor, threshold=0.85)

    def test_fit_runs_quality_gate(self, cell, monkeypatch):
        """Test fitting passes the new surrogate through the quality gate."""
        fitted = fit_current_surrogate(cell)
        checked = []
        monkeypatch.setattr(battery, "fit_current_surrogate", lambda *args: dict(fitted, r_squared=0.95))
        monkeypatch.setattr(battery, "surrogate_check", lambda s: checked.append(s.r_squared_current) or False)

        surrogate = fit_battery_surrogate(cell)

        assert checked == [0.95]
        assert surrogate.r_squared_current == 0.95


class TestDegradationCost:
    """Test cases for the battery degradation price."""

    def test_zero_current_is_free(self, cell, surrogate):
        """Test a rest step costs nothing."""
        assert degradation_cost_step(0.0, 10.0, surrogate, cell, BatteryPackParams()) == 0.0

    def test_matches_throughput_form(self, cell, surrogate):
        """Test the quadratic form equals throughput over twice the fitted end-of-life Ah."""
        pack = BatteryPackParams()
        current, dt = 3.2, 3600.0
        inverse_eol = surrogate.a_d * (current / cell.capacity_ah) + surrogate.b_d
        expected = (current * dt / 3600.0) * inverse_eol / 2.0 * pack.replacement_cost

        cost = degradation_cost_step(current, dt, surrogate, cell, pack, per_cell=True)

        assert cost == pytest.approx(expected, rel=1e-12)

    def test_sign_symmetric_and_linear_in_dt(self, cell, surrogate):
        """Test cost depends on |I| and doubles with dt."""
        pack = BatteryPackParams()
        base = degradation_cost_step(2.0, 5.0, surrogate, cell, pack)

        assert degradation_cost_step(-2.0, 5.0, surrogate, cell, pack) == pytest.approx(base)
        assert degradation_cost_step(2.0, 10.0, surrogate, cell, pack) == pytest.approx(2.0 * base)

    def test_pack_scales_cell_cost(self, cell, surrogate):
        """Test the pack cost is the cell cost times the cell count."""
        pack = BatteryPackParams()
        per_cell = exact_degradation_cost(1.5, 10.0, cell, pack, per_cell=True)

        assert exact_degradation_cost(1.5, 10.0, cell, pack) == pytest.approx(per_cell * 7594)
        assert pack.replacement_cost == pytest.approx(90.0 * 178.41)
