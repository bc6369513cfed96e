"""Synthetic campaigns with known answers.

A capacitive aperture model stands in for the probe:

    Γ = e · (1 − kε) / (1 + kε),   k = jωZ0C0,   e = exp(−j2ωL/c)

which inverts to the bilinear form with A = −1/(k·e), B = 1/k, C = 1/e.
Tissues are Cole-Cole models; noise is additive complex Gaussian on Γ with
standard deviation ``noise_sigma_gamma`` on each of the real and imaginary
parts. Every random draw comes from ``rng_seed`` through SeedSequence spawn
keys, so patients can be generated independently and in any order.
"""

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from pydantic import ValidationError
from scipy.constants import c as SPEED_OF_LIGHT

from app.core.config import settings
from app.core.errors import DielectricError, SynthError
from app.schemas.documents import GroundTruthFile
from app.services.campaign import MeasurementPoint, Session
from app.services.colecole import ColeColeParams, complex_permittivity, params_from_document
from app.services.contrast import (
    DEFAULT_SPOT_FREQS_GHZ,
    DifferenceCurve,
    Scenario,
    SpotValue,
    TissueStatus,
    TumorStage,
    group_mean_difference,
    spot_values,
)
from app.services.probe_cal import (
    Standard,
    StandardKind,
    StandardMeasurement,
    bilinear_forward,
    reference_permittivity,
    solve_calibration,
)
from app.services.spectra import AcquisitionConfig, FrequencyGrid, ReflectionSweep

logger = logging.getLogger(__name__)

N_SWEEPS = 3
N_POINTS_PER_TISSUE = 2

# (scenario, stage, number of patients)
DEFAULT_PLAN: tuple[tuple[Scenario, TumorStage, int], ...] = (
    (Scenario.EX_VIVO, TumorStage.T3, 5),
    (Scenario.EX_VIVO, TumorStage.T4A, 2),
    (Scenario.EX_VIVO, TumorStage.T4B, 1),
    (Scenario.IN_VIVO, TumorStage.T3, 4),
    (Scenario.IN_VIVO, TumorStage.T4A, 2),
    (Scenario.IN_VIVO, TumorStage.T4B, 1),
)

CALIBRATION_STANDARDS = (StandardKind.AIR, StandardKind.SHORT, StandardKind.WATER, StandardKind.METHANOL)

# Spawn-key roots
_STANDARDS_KEY = 0
_PATIENT_KEY = 1

TissueKey = tuple[Scenario | None, TumorStage | None, TissueStatus]


@dataclass(frozen=True)
class ProbeTruth:
    aperture_capacitance_f: float
    z0_ohm: float = 50.0
    cable_length_m: float = 0.0

    def __post_init__(self):
        if self.aperture_capacitance_f <= 0 or self.z0_ohm <= 0 or self.cable_length_m < 0:
            raise SynthError("invalid_probe", "probe capacitance and impedance must be > 0, cable length >= 0")

    def coefficients(self, grid: FrequencyGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Bilinear (A, B, C) per frequency."""
        omega = grid.omega
        k = 1j * omega * self.z0_ohm * self.aperture_capacitance_f
        e = np.exp(-2j * omega * self.cable_length_m / SPEED_OF_LIGHT)
        return -1.0 / (k * e), 1.0 / k, 1.0 / e

    def short_reflection(self, grid: FrequencyGrid) -> np.ndarray:
        return -np.exp(-2j * grid.omega * self.cable_length_m / SPEED_OF_LIGHT)


@dataclass(frozen=True)
class GroundTruth:
    probe: ProbeTruth
    tissues: dict[TissueKey, ColeColeParams] = field(default_factory=dict)
    noise_sigma_gamma: float = 0.0
    rng_seed: int = 0
    label: str = ""

    def __post_init__(self):
        if not self.noise_sigma_gamma >= 0:
            raise SynthError("invalid_noise", "noise_sigma_gamma must be >= 0")
        if self.rng_seed < 0:
            raise SynthError("invalid_seed", "rng_seed must be >= 0")

    def tissue(self, scenario: Scenario, stage: TumorStage, status: TissueStatus) -> ColeColeParams:
        """Most specific truth entry for a tissue; scenario and stage fall back to wildcards."""
        for key in ((scenario, stage, status), (scenario, None, status), (None, stage, status), (None, None, status)):
            if key in self.tissues:
                return self.tissues[key]
        raise SynthError("missing_tissue", f"no truth for {scenario.value}/{stage.value}/{status.value}")

    def with_tissue(
        self, params: ColeColeParams, status: TissueStatus, scenario: Scenario | None = None, stage: TumorStage | None = None
    ) -> "GroundTruth":
        return replace(self, tissues={**self.tissues, (scenario, stage, status): params})

    def rng(self, *key: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.rng_seed, spawn_key=key))


def ground_truth_from_document(doc: GroundTruthFile) -> GroundTruth:
    if doc.schema_version != 1:
        raise SynthError("unsupported_version", f"ground truth version {doc.schema_version} is not supported")
    tissues = {}
    for entry in doc.tissues:
        key = (
            Scenario(entry.scenario) if entry.scenario else None,
            TumorStage(entry.stage) if entry.stage else None,
            TissueStatus(entry.status),
        )
        if key in tissues:
            raise SynthError("duplicate_tissue", f"duplicate truth entry {key}")
        tissues[key] = params_from_document(entry.params)
    probe = ProbeTruth(
        doc.probe.aperture_capacitance_pf * 1e-12, doc.probe.z0_ohm, doc.probe.cable_length_mm * 1e-3
    )
    return GroundTruth(probe, tissues, doc.noise_sigma_gamma, doc.rng_seed, doc.label)


def load_ground_truth(path: Path) -> GroundTruth:
    try:
        doc = GroundTruthFile.model_validate_json(Path(path).read_text())
    except OSError as exc:
        raise SynthError("unreadable", f"cannot read {path}: {exc}")
    except (ValidationError, ValueError) as exc:
        raise SynthError("corrupt_document", f"invalid ground truth file {Path(path).name}: {exc}")
    return ground_truth_from_document(doc)


@lru_cache
def default_ground_truth() -> GroundTruth:
    return load_ground_truth(settings.ground_truth_path)


def _noisy(gamma: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma == 0:
        return gamma
    return gamma + rng.normal(0.0, sigma, gamma.shape) + 1j * rng.normal(0.0, sigma, gamma.shape)


def forward_reflection(truth: GroundTruth, eps: np.ndarray, grid: FrequencyGrid) -> np.ndarray:
    a, b, c = truth.probe.coefficients(grid)
    return bilinear_forward(a, b, c, eps)


def synth_standards(
    truth: GroundTruth,
    grid: FrequencyGrid,
    kinds: tuple[StandardKind, ...] = CALIBRATION_STANDARDS,
    temperature_c: float = 25.0,
) -> list[StandardMeasurement]:
    """Reflection of each standard through the probe truth, plus noise."""
    rng = truth.rng(_STANDARDS_KEY)
    measurements = []
    for kind in kinds:
        standard = Standard(kind, temperature_c)
        if kind is StandardKind.SHORT:
            gamma = truth.probe.short_reflection(grid)
        else:
            try:
                gamma = forward_reflection(truth, reference_permittivity(standard, grid.points), grid)
            except DielectricError as exc:
                raise SynthError("degenerate_standard", f"{kind.value}: {exc}")
        gamma = _noisy(gamma, truth.noise_sigma_gamma, rng)
        measurements.append(StandardMeasurement(standard, ReflectionSweep(grid, gamma, (f"synthetic {kind.value}",))))
    return measurements


def synth_patient(
    truth: GroundTruth,
    stage: TumorStage,
    scenario: Scenario,
    n_points_per_tissue: int = N_POINTS_PER_TISSUE,
    grid: FrequencyGrid | None = None,
    patient_id: str = "P01",
    patient_index: int = 0,
    n_sweeps: int = N_SWEEPS,
) -> list[MeasurementPoint]:
    """Raw-reflection points for one patient: healthy and tumor, n locations each."""
    if n_points_per_tissue < 1 or n_sweeps < 1:
        raise SynthError("invalid_plan", "a patient needs at least one point per tissue and one sweep")
    grid = grid or FrequencyGrid.from_acquisition(AcquisitionConfig())
    rng = truth.rng(_PATIENT_KEY, patient_index)
    points = []
    for status in (TissueStatus.HEALTHY, TissueStatus.TUMOR):
        gamma = forward_reflection(truth, complex_permittivity(truth.tissue(scenario, stage, status), grid.points), grid)
        for location in range(1, n_points_per_tissue + 1):
            sweeps = tuple(
                ReflectionSweep(grid, _noisy(gamma, truth.noise_sigma_gamma, rng)) for _ in range(n_sweeps)
            )
            points.append(
                MeasurementPoint(
                    patient_id=patient_id,
                    status=status,
                    scenario=scenario,
                    stage=stage,
                    location_label=f"{status.value}-{location}",
                    sweeps=sweeps,
                )
            )
    return points


def synth_campaign(
    truth: GroundTruth,
    patient_plan: tuple[tuple[Scenario, TumorStage, int], ...] = DEFAULT_PLAN,
    grid: FrequencyGrid | None = None,
    n_points_per_tissue: int = N_POINTS_PER_TISSUE,
    session_id: str = "synthetic",
) -> Session:
    """A complete session: calibration solved from synthetic standards plus every planned patient."""
    plan = [(Scenario(s), TumorStage(t), int(n)) for s, t, n in patient_plan]
    if not plan or sum(n for *_, n in plan) < 1:
        raise SynthError("empty_plan", "patient plan must contain at least one patient")
    if any(n < 0 for *_, n in plan):
        raise SynthError("invalid_plan", "patient counts must be >= 0")
    grid = grid or FrequencyGrid.from_acquisition(AcquisitionConfig())
    calibration = solve_calibration(synth_standards(truth, grid))

    points = []
    counters = {scenario: 0 for scenario in Scenario}
    index = 0
    for scenario, stage, count in plan:
        prefix = "EX" if scenario is Scenario.EX_VIVO else "IV"
        for _ in range(count):
            counters[scenario] += 1
            patient_id = f"{prefix}-{counters[scenario]:02d}"
            points += synth_patient(truth, stage, scenario, n_points_per_tissue, grid, patient_id, index)
            index += 1
    acquisition = AcquisitionConfig(f_start_hz=grid.points[0], f_stop_hz=grid.points[-1], n_points=len(grid))
    logger.info("Synthesised %d patients (%d points) on %d frequencies", index, len(points), len(grid))
    return Session(session_id=session_id, acquisition=acquisition, calibration=calibration, points=tuple(points))


def apply_drift(sweep: ReflectionSweep, drift: np.ndarray) -> ReflectionSweep:
    """Multiply a sweep by a drift ratio d(f), as seen after a pre-set calibration."""
    return ReflectionSweep(sweep.grid, sweep.gamma * drift, sweep.comments, sweep.reference_resistance)


def truth_difference(truth: GroundTruth, scenario: Scenario, stage: TumorStage, grid: FrequencyGrid) -> DifferenceCurve:
    tumor = complex_permittivity(truth.tissue(scenario, stage, TissueStatus.TUMOR), grid.points)
    healthy = complex_permittivity(truth.tissue(scenario, stage, TissueStatus.HEALTHY), grid.points)
    delta = tumor - healthy
    return DifferenceCurve(grid, delta.real, -delta.imag)


def truth_group_differences(
    truth: GroundTruth, session: Session, freqs_ghz=DEFAULT_SPOT_FREQS_GHZ
) -> dict[tuple[Scenario, TumorStage | None], list[SpotValue]]:
    """Spot values the report should produce, computed straight from the truth models."""
    patients: dict[tuple[Scenario, str], tuple[TumorStage, FrequencyGrid]] = {}
    statuses: dict[tuple[Scenario, str], set[TissueStatus]] = {}
    for point in session.points:
        grid = point.sweeps[0].grid if point.sweeps else point.spectra[0].grid
        patients[(point.scenario, point.patient_id)] = (point.stage, grid)
        statuses.setdefault((point.scenario, point.patient_id), set()).add(point.status)

    expected = {}
    for scenario in Scenario:
        members = [
            stage_grid for key, stage_grid in sorted(patients.items(), key=lambda kv: kv[0][1])
            if key[0] is scenario and len(statuses[key]) == 2
        ]
        if not members:
            continue
        groups = [(None, members)] + [
            (stage, [m for m in members if m[0] is stage]) for stage in sorted({m[0] for m in members})
        ]
        for stage, group in groups:
            curves = [truth_difference(truth, scenario, s, g) for s, g in group]
            _, cubic = group_mean_difference(curves)
            expected[(scenario, stage)] = spot_values(cubic, freqs_ghz)
    return expected
