"""Shared pytest fixtures for the dielectric contrast toolkit tests."""

import numpy as np
import pytest
from fastapi.testclient import TestClient

from app.main import app
from app.services.campaign import CampaignService, MeasurementPoint, Provenance, Session
from app.services.colecole import ColeColeParams, FitConfig, Pole, evaluate
from app.services.contrast import Scenario, TissueStatus, TumorStage
from app.services.spectra import FrequencyGrid, PermittivitySpectrum
from app.services.synth import GroundTruth, ProbeTruth, default_ground_truth

SPOT_FREQS_GHZ = (2.45, 12.5, 18.0)

# Spot rows (Δε′, Δε″ at 2.45, 12.5, 18 GHz) replayed by the report fixtures.
EX_VIVO_ALL_ROW = (-0.97, -0.38, -0.23, -0.83, 0.06, -0.86)
IN_VIVO_ALL_ROW = (0.96, 0.27, 0.04, 0.76, -0.26, 0.64)
EX_VIVO_T4B_ROW = (6.10, 0.53, 7.25, 0.82, 7.38, 1.75)

HEALTHY_DC = 40.0
HEALTHY_LF = 12.0


@pytest.fixture
def client() -> TestClient:
    """Fixture for FastAPI TestClient."""
    return TestClient(app)


@pytest.fixture
def grid() -> FrequencyGrid:
    """Coarse 0.5-26.5 GHz grid with 0.5 GHz steps."""
    return FrequencyGrid.linear(0.5e9, 26.5e9, 53)


@pytest.fixture
def tissue_params() -> ColeColeParams:
    """Two well-separated poles, colon-like magnitudes."""
    return ColeColeParams(4.0, (Pole(45.0, 8e-12, 0.1), Pole(10.0, 1e-10, 0.05)), 0.7)


@pytest.fixture
def tissue_spectrum(grid: FrequencyGrid, tissue_params: ColeColeParams) -> PermittivitySpectrum:
    return evaluate(tissue_params, grid)


@pytest.fixture
def truth() -> GroundTruth:
    """Shipped synthetic ground truth (zero noise)."""
    return default_ground_truth()


@pytest.fixture
def constant_truth() -> GroundTruth:
    """Healthy tissue everywhere; T4b tumor sits exactly +5 above it in ε′."""
    healthy = ColeColeParams(4.0, (Pole(50.0, 8e-12, 0.1), Pole(15.0, 1.5e-10, 0.1)), 0.8)
    t4b = ColeColeParams(9.0, healthy.poles, 0.8)
    return GroundTruth(
        ProbeTruth(0.064e-12),
        {
            (None, None, TissueStatus.HEALTHY): healthy,
            (None, None, TissueStatus.TUMOR): healthy,
            (None, TumorStage.T4B, TissueStatus.TUMOR): t4b,
        },
    )


@pytest.fixture
def quick_fit_config() -> FitConfig:
    return FitConfig(n_starts=1, max_iterations=200)


@pytest.fixture
def campaign_service(quick_fit_config: FitConfig) -> CampaignService:
    return CampaignService(fit_config=quick_fit_config)


def quadratic_through(values: tuple[float, float, float], f_ghz: np.ndarray) -> np.ndarray:
    """Quadratic in f (GHz) passing through ``values`` at the spot frequencies."""
    coeffs = np.linalg.solve(np.vander(np.array(SPOT_FREQS_GHZ), 3), np.array(values))
    return np.polyval(coeffs, f_ghz)


def external_point(
    patient_id: str,
    scenario: Scenario,
    stage: TumorStage,
    status: TissueStatus,
    location: str,
    spectrum: PermittivitySpectrum,
) -> MeasurementPoint:
    return MeasurementPoint(
        patient_id=patient_id,
        status=status,
        scenario=scenario,
        stage=stage,
        location_label=location,
        spectra=(spectrum,),
        provenance=Provenance.EXTERNAL_PERMITTIVITY,
    )


def offset_patient(
    patient_id: str, scenario: Scenario, stage: TumorStage, row: tuple[float, ...], grid: FrequencyGrid
) -> list[MeasurementPoint]:
    """Two healthy and two tumor points whose difference passes through ``row`` at the spot frequencies."""
    delta_dc = quadratic_through(row[0::2], grid.ghz)
    delta_lf = quadratic_through(row[1::2], grid.ghz)
    healthy = PermittivitySpectrum(grid, np.full(len(grid), HEALTHY_DC), np.full(len(grid), HEALTHY_LF))
    tumor = PermittivitySpectrum(grid, HEALTHY_DC + delta_dc, HEALTHY_LF + delta_lf)
    points = []
    for location in ("a", "b"):
        points.append(external_point(patient_id, scenario, stage, TissueStatus.HEALTHY, f"h-{location}", healthy))
        points.append(external_point(patient_id, scenario, stage, TissueStatus.TUMOR, f"t-{location}", tumor))
    return points


@pytest.fixture
def table_session() -> Session:
    """Fixture session replaying the published contrast rows.

    Ex vivo: three T3 patients and one T4b patient; the T3 offset is chosen so
    that the four-patient mean reproduces the all-stage row exactly. In vivo:
    two T3 patients carrying the in vivo all-stage row.
    """
    grid = FrequencyGrid.linear(0.5e9, 26.5e9, 27)
    t3_row = tuple((4 * a - b) / 3 for a, b in zip(EX_VIVO_ALL_ROW, EX_VIVO_T4B_ROW))
    points = []
    for i in range(1, 4):
        points += offset_patient(f"EX-{i:02d}", Scenario.EX_VIVO, TumorStage.T3, t3_row, grid)
    points += offset_patient("EX-04", Scenario.EX_VIVO, TumorStage.T4B, EX_VIVO_T4B_ROW, grid)
    for i in range(1, 3):
        points += offset_patient(f"IV-{i:02d}", Scenario.IN_VIVO, TumorStage.T3, IN_VIVO_ALL_ROW, grid)
    return Session(session_id="table-fixture", points=tuple(points))


@pytest.fixture
def table_csv() -> str:
    """Expected CSV rendering of ``table_session``."""
    header = (
        "scenario,stage,d_eps_real@2.45GHz,d_eps_loss@2.45GHz,d_eps_real@12.5GHz,"
        "d_eps_loss@12.5GHz,d_eps_real@18GHz,d_eps_loss@18GHz,n_patients,note"
    )
    return "\n".join(
        [
            header,
            "Ex vivo,All,-0.97,-0.38,-0.23,-0.83,0.06,-0.86,4,",
            "Ex vivo,T3,-3.33,-0.68,-2.72,-1.38,-2.38,-1.73,3,",
            "Ex vivo,T4b,6.10,0.53,7.25,0.82,7.38,1.75,1,single patient",
            "In vivo,All,0.96,0.27,0.04,0.76,-0.26,0.64,2,",
            "In vivo,T3,0.96,0.27,0.04,0.76,-0.26,0.64,2,",
        ]
    ) + "\n"
