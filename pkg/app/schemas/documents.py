"""Pydantic models for the JSON documents the toolkit reads and writes.

All documents carry ``schema_version``. Complex arrays are stored as
separate ``real``/``imag`` lists so the files stay human-readable.
"""

from pydantic import BaseModel, model_validator

from app.services.spectra import AcquisitionConfig

SCHEMA_VERSION = 1


class ComplexArray(BaseModel):
    real: list[float]
    imag: list[float]

    @model_validator(mode="after")
    def _same_length(self) -> "ComplexArray":
        if len(self.real) != len(self.imag):
            raise ValueError("real and imag must have the same length")
        return self


class PoleDocument(BaseModel):
    delta_eps: float
    tau_s: float
    alpha: float


class ColeColeParamsDocument(BaseModel):
    eps_inf: float
    poles: list[PoleDocument]
    sigma_s: float


class ColeColeParamsFile(BaseModel):
    """Canonical initialisation or fitted-parameter file."""

    schema_version: int = SCHEMA_VERSION
    description: str = ""
    params: ColeColeParamsDocument
    objective: float | None = None
    rms_rel_error_dc: float | None = None
    rms_rel_error_lf: float | None = None
    converged: bool | None = None
    iterations: int | None = None


class CalibrationDocument(BaseModel):
    schema_version: int = SCHEMA_VERSION
    frequencies_hz: list[float]
    coeff_a: ComplexArray
    coeff_b: ComplexArray
    coeff_c: ComplexArray
    short_reference: ComplexArray
    residual: list[float]
    drift: ComplexArray | None = None


class SweepDocument(BaseModel):
    grid: int
    gamma: ComplexArray
    comments: list[str] = []
    reference_resistance: float = 50.0


class SpectrumDocument(BaseModel):
    grid: int
    dielectric_constant: list[float | None]
    loss_factor: list[float | None]
    flags: list[int] | None = None


class MeasurementPointDocument(BaseModel):
    patient_id: str
    status: str
    scenario: str
    stage: str
    location_label: str
    provenance: str
    sweeps: list[SweepDocument] = []
    spectra: list[SpectrumDocument] = []


class SessionDocument(BaseModel):
    schema_version: int = SCHEMA_VERSION
    session_id: str
    acquisition: AcquisitionConfig
    grids: list[list[float]] = []
    calibration: CalibrationDocument | None = None
    points: list[MeasurementPointDocument] = []


class ProbeTruthDocument(BaseModel):
    aperture_capacitance_pf: float
    z0_ohm: float = 50.0
    cable_length_mm: float = 0.0


class TissueTruthDocument(BaseModel):
    scenario: str | None = None
    stage: str | None = None
    status: str
    params: ColeColeParamsDocument


class GroundTruthFile(BaseModel):
    schema_version: int = SCHEMA_VERSION
    label: str = ""
    noise_sigma_gamma: float = 0.0
    rng_seed: int = 0
    probe: ProbeTruthDocument
    tissues: list[TissueTruthDocument]
