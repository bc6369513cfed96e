"""End-to-end runs from Touchstone files and session documents to reports."""

import logging
from pathlib import Path

import numpy as np
import pytest

from app.cli import run
from app.services.campaign import CampaignService
from app.services.colecole import ColeColeParams, FitConfig, complex_permittivity
from app.services.contrast import Scenario, TissueStatus, TumorStage
from app.services.ingest import export_touchstone, import_csv_spectrum, load_session, save_session
from app.services.probe_cal import StandardKind
from app.services.spectra import FrequencyGrid, ReflectionSweep
from app.services.synth import GroundTruth, apply_drift, forward_reflection, synth_campaign, synth_standards


@pytest.fixture(autouse=True)
def restore_logging():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture
def standard_files(tmp_path: Path, truth: GroundTruth, grid: FrequencyGrid) -> dict[StandardKind, Path]:
    kinds = (StandardKind.AIR, StandardKind.SHORT, StandardKind.WATER, StandardKind.METHANOL, StandardKind.ETHANOL)
    return {
        m.kind: export_touchstone(m.sweep, tmp_path / f"{m.kind.value}.s1p")
        for m in synth_standards(truth, grid, kinds)
    }


def _calibrate(standard_files, tmp_path: Path, *extra: str) -> Path:
    cal = tmp_path / "cal.json"
    args = ["calibrate", "-o", str(cal)]
    for kind in (StandardKind.AIR, StandardKind.SHORT, StandardKind.WATER, StandardKind.METHANOL):
        args += ["--standard", f"{kind.value}={standard_files[kind]}"]
    assert run(args + list(extra)) == 0
    return cal


class TestReflectionPipeline:
    """Standards and tissue sweeps on disk through calibrate and invert."""

    def test_tissue_recovered(
        self, standard_files, tmp_path: Path, truth: GroundTruth, grid: FrequencyGrid, tissue_params: ColeColeParams
    ):
        """Test that three tissue sweeps invert to the model permittivity."""
        cal = _calibrate(standard_files, tmp_path)
        eps = complex_permittivity(tissue_params, grid.points)
        sweep = ReflectionSweep(grid, forward_reflection(truth, eps, grid))
        sweeps = [str(export_touchstone(sweep, tmp_path / f"tissue-{i}.s1p")) for i in range(3)]
        out = tmp_path / "tissue.csv"
        assert run(["invert", *sweeps, "--cal", str(cal), "-o", str(out)]) == 0
        spectrum = import_csv_spectrum(out)
        np.testing.assert_allclose(spectrum.complex_permittivity, eps, rtol=1e-9)

    def test_check_standard(self, standard_files, tmp_path: Path, capsys):
        """Test that an ethanol check reports a negligible residual."""
        _calibrate(standard_files, tmp_path, "--check", f"ethanol={standard_files[StandardKind.ETHANOL]}")
        line = next(line for line in capsys.readouterr().out.splitlines() if line.startswith("check ethanol"))
        max_residual = float(line.split("max |Δε|")[1].split(",")[0])
        assert max_residual < 1e-6

    def test_drift_corrected(
        self, standard_files, tmp_path: Path, truth: GroundTruth, grid: FrequencyGrid, tissue_params: ColeColeParams
    ):
        """Test that a post-session short removes a phase drift from the tissue sweep."""
        cal = _calibrate(standard_files, tmp_path)
        drift = np.exp(-1j * 0.05 * grid.ghz)
        eps = complex_permittivity(tissue_params, grid.points)
        tissue = export_touchstone(
            apply_drift(ReflectionSweep(grid, forward_reflection(truth, eps, grid)), drift), tmp_path / "tissue.s1p"
        )
        short = export_touchstone(
            apply_drift(ReflectionSweep(grid, truth.probe.short_reflection(grid)), drift), tmp_path / "post.s1p"
        )
        out = tmp_path / "tissue.csv"
        assert run(["invert", str(tissue), "--cal", str(cal), "--post-short", str(short), "-o", str(out)]) == 0
        np.testing.assert_allclose(import_csv_spectrum(out).complex_permittivity, eps, rtol=1e-6)


class TestSessionPipeline:
    """Synthetic sessions through the document format and the report."""

    def test_saved_session_reports_identically(self, tmp_path: Path, truth: GroundTruth):
        """Test that a session saved and loaded again gives the same table."""
        session = synth_campaign(truth, grid=FrequencyGrid.linear(0.5e9, 26.5e9, 27))
        service = CampaignService()
        loaded = load_session(save_session(session, tmp_path / "session.json"))
        before = service.generate_report(session, fit_models=False).table.render()
        after = service.generate_report(loaded, fit_models=False).table.render()
        assert after == before

    def test_group_models_follow_truth(self, truth: GroundTruth):
        """Test that the fitted healthy model of a noise-free group tracks the truth tissue."""
        grid = FrequencyGrid.linear(0.5e9, 26.5e9, 27)
        session = synth_campaign(truth, ((Scenario.EX_VIVO, TumorStage.T3, 2),), grid)
        report = CampaignService(FitConfig(n_starts=4)).generate_report(session)
        healthy = next(
            g for g in report.group_spectra if g.stage is None and g.status is TissueStatus.HEALTHY
        )
        expected = complex_permittivity(
            truth.tissue(Scenario.EX_VIVO, TumorStage.T3, TissueStatus.HEALTHY), grid.points
        )
        np.testing.assert_allclose(healthy.mean.complex_permittivity, expected, rtol=1e-8)
        assert healthy.fit.rms_rel_error_dc < 1e-2
        assert healthy.fit.rms_rel_error_lf < 1e-2
