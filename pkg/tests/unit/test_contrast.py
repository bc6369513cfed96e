"""Unit tests for difference curves, cubic fits and penetration depth."""

import numpy as np
import pytest
from scipy.constants import c as SPEED_OF_LIGHT

from app.core.errors import ContrastError
from app.services.contrast import (
    CubicFit,
    DifferenceCurve,
    GroupSummary,
    Scenario,
    TumorStage,
    fit_cubic,
    format_value,
    group_mean_difference,
    patient_difference,
    penetration_depth,
    penetration_depth_spectrum,
    spot_values,
)
from app.services.spectra import FrequencyGrid, PermittivitySpectrum


def _constant(grid: FrequencyGrid, dc: float, lf: float) -> PermittivitySpectrum:
    return PermittivitySpectrum(grid, np.full(len(grid), dc), np.full(len(grid), lf))


class TestTumorStage:
    """Tests for stage ordering."""

    def test_ordering(self):
        """Test T3 < T4a < T4b."""
        assert TumorStage.T3 < TumorStage.T4A < TumorStage.T4B
        assert sorted([TumorStage.T4B, TumorStage.T3, TumorStage.T4A]) == [
            TumorStage.T3,
            TumorStage.T4A,
            TumorStage.T4B,
        ]

    def test_scenario_labels(self):
        """Test the printed scenario names."""
        assert Scenario.EX_VIVO.label == "Ex vivo"
        assert Scenario.IN_VIVO.label == "In vivo"


class TestPatientDifference:
    """Tests for patient_difference."""

    def test_identical_tissues(self, tissue_spectrum: PermittivitySpectrum):
        """Test that tumor equal to healthy gives zero."""
        curve = patient_difference([tissue_spectrum], [tissue_spectrum])
        assert np.all(curve.delta_dc == 0)
        assert np.all(curve.delta_lf == 0)

    def test_antisymmetric(self, grid: FrequencyGrid, tissue_spectrum: PermittivitySpectrum):
        """Test that swapping tumor and healthy negates the curve."""
        other = _constant(grid, 30.0, 8.0)
        forward = patient_difference([tissue_spectrum], [other])
        backward = patient_difference([other], [tissue_spectrum])
        assert np.array_equal(forward.delta_dc, -backward.delta_dc)
        assert np.array_equal((-forward).delta_lf, backward.delta_lf)

    def test_points_averaged_first(self, grid: FrequencyGrid):
        """Test that each side is averaged over its points before subtracting."""
        curve = patient_difference(
            [_constant(grid, 40.0, 10.0), _constant(grid, 44.0, 12.0)], [_constant(grid, 30.0, 9.0)]
        )
        assert np.all(curve.delta_dc == 12.0)
        assert np.all(curve.delta_lf == 2.0)

    def test_empty_side(self, tissue_spectrum: PermittivitySpectrum):
        """Test that a missing side is rejected."""
        with pytest.raises(ContrastError) as exc:
            patient_difference([tissue_spectrum], [])
        assert exc.value.code == "contrast.empty_side"


class TestFitCubic:
    """Tests for fit_cubic."""

    def test_exact_for_cubic(self, grid: FrequencyGrid):
        """Test that a cubic curve is fitted exactly."""
        f = grid.ghz
        curve = DifferenceCurve(grid, 1.0 - 0.2 * f + 0.01 * f**2 - 1e-4 * f**3, 0.5 + 0.03 * f)
        cubic = fit_cubic(curve)
        np.testing.assert_allclose(cubic.coeffs_dc, (1.0, -0.2, 0.01, -1e-4), rtol=1e-7, atol=1e-9)
        np.testing.assert_allclose(cubic.coeffs_lf, (0.5, 0.03, 0.0, 0.0), atol=1e-9)

    def test_matches_normal_equations(self, grid: FrequencyGrid):
        """Test coefficients against an independent normal-equations solve."""
        rng = np.random.default_rng(21)
        f = grid.ghz
        dc = 2.0 - 0.1 * f + rng.normal(0, 0.3, f.size)
        lf = -1.0 + 0.05 * f + rng.normal(0, 0.2, f.size)
        cubic = fit_cubic(DifferenceCurve(grid, dc, lf))
        vander = np.vander(f, 4, increasing=True)
        for coeffs, values in ((cubic.coeffs_dc, dc), (cubic.coeffs_lf, lf)):
            expected = np.linalg.solve(vander.T @ vander, vander.T @ values)
            np.testing.assert_allclose(coeffs, expected, rtol=1e-5, atol=1e-7)

    def test_too_few_points(self):
        """Test that three points cannot fix a cubic."""
        grid = FrequencyGrid.linear(1e9, 3e9, 3)
        with pytest.raises(ContrastError):
            fit_cubic(DifferenceCurve(grid, np.zeros(3), np.zeros(3)))


class TestGroupMeanDifference:
    """Tests for group_mean_difference."""

    def test_equal_patient_weights(self, grid: FrequencyGrid):
        """Test that the mean treats each patient curve once."""
        a = DifferenceCurve(grid, np.full(len(grid), 1.0), np.zeros(len(grid)))
        b = DifferenceCurve(grid, np.full(len(grid), 3.0), np.full(len(grid), 2.0))
        mean, cubic = group_mean_difference([a, b])
        assert np.all(mean.delta_dc == 2.0)
        assert float(cubic.evaluate(12.5)[0]) == pytest.approx(2.0, abs=1e-10)

    def test_order_invariant(self, grid: FrequencyGrid):
        """Test that patient order does not change a single bit."""
        rng = np.random.default_rng(4)
        curves = [DifferenceCurve(grid, rng.normal(size=len(grid)), rng.normal(size=len(grid))) for _ in range(5)]
        forward, _ = group_mean_difference(curves)
        backward, _ = group_mean_difference(curves[::-1])
        assert np.array_equal(forward.delta_dc, backward.delta_dc)
        assert np.array_equal(forward.delta_lf, backward.delta_lf)

    def test_empty_group(self):
        """Test that an empty group is rejected."""
        with pytest.raises(ContrastError) as exc:
            group_mean_difference([])
        assert exc.value.code == "contrast.empty_group"

    def test_small_sample_flag(self, grid: FrequencyGrid):
        """Test that single-patient groups are flagged."""
        curve = DifferenceCurve(grid, np.ones(len(grid)), np.ones(len(grid)))
        mean, cubic = group_mean_difference([curve])
        summary = GroupSummary(Scenario.EX_VIVO, TumorStage.T4B, 1, mean, cubic, tuple(spot_values(cubic)))
        assert summary.small_sample
        assert summary.stage_label == "T4b"


class TestSpotValues:
    """Tests for spot_values."""

    def test_constant_fit(self):
        """Test a constant fit at 18 GHz."""
        cubic = CubicFit((7.38, 0, 0, 0), (1.75, 0, 0, 0))
        (row,) = spot_values(cubic, (18.0,))
        assert row.delta_dc == 7.38
        assert format_value(row.delta_dc) == "7.38"

    def test_out_of_band(self):
        """Test that 30 GHz is refused."""
        with pytest.raises(ContrastError) as exc:
            spot_values(CubicFit((0, 0, 0, 0), (0, 0, 0, 0)), (30.0,))
        assert exc.value.code == "contrast.out_of_band"


class TestFormatValue:
    """Tests for format_value."""

    @pytest.mark.parametrize(
        "value, text",
        [
            (-0.97, "-0.97"),
            (6.1, "6.10"),
            (0.0, "0.00"),
            (-0.0, "0.00"),
            (-0.004, "-0.00"),
            (0.005, "0.01"),
            (-0.005, "-0.01"),
            (2.675, "2.68"),
            (np.float64(7.249999), "7.25"),
        ],
    )
    def test_formatting(self, value, text):
        """Test two-decimal rounding, half away from zero."""
        assert format_value(value) == text


class TestPenetrationDepth:
    """Tests for penetration_depth."""

    def test_lossless_is_infinite(self):
        """Test that ε″ = 0 gives an infinite depth."""
        assert penetration_depth(4.0, 0.0, 1e9) == float("inf")

    def test_matches_plane_wave_formula(self):
        """Test against the textbook attenuation constant."""
        dc, lf, f = 50.0, 15.0, 2.45e9
        omega = 2 * np.pi * f
        alpha = omega / SPEED_OF_LIGHT * np.sqrt(dc / 2 * (np.sqrt(1 + (lf / dc) ** 2) - 1))
        assert penetration_depth(dc, lf, f) == pytest.approx(1 / alpha, rel=1e-10)

    def test_small_loss_stable(self):
        """Test the low-loss limit δ ≈ 2c√ε′ / (ωε″)."""
        dc, lf, f = 10.0, 1e-9, 1e9
        expected = 2 * SPEED_OF_LIGHT * np.sqrt(dc) / (2 * np.pi * f * lf)
        assert penetration_depth(dc, lf, f) == pytest.approx(expected, rel=1e-9)

    def test_decreases_with_loss(self):
        """Test that more loss never deepens penetration."""
        depths = penetration_depth(np.full(5, 40.0), np.array([1.0, 5.0, 10.0, 20.0, 40.0]), np.full(5, 5e9))
        assert np.all(np.diff(depths) < 0)

    def test_invalid_medium(self):
        """Test that ε′ < 1 is rejected."""
        with pytest.raises(ContrastError) as exc:
            penetration_depth(0.5, 1.0, 1e9)
        assert exc.value.code == "contrast.invalid_medium"

    def test_spectrum(self, tissue_spectrum: PermittivitySpectrum):
        """Test that depth is computed per frequency and shrinks with frequency for tissue."""
        depth = penetration_depth_spectrum(tissue_spectrum)
        assert depth.shape == (len(tissue_spectrum),)
        assert depth[0] > depth[-1]
