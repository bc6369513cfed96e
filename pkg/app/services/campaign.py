"""Campaign data model and the report pipeline.

The pipeline per measurement point is: average sweeps, invert with the
session calibration, then average the points of each tissue. Per patient the
tumor-minus-healthy curve is formed, and groups (scenario x stage) average
those curves with one weight per patient before the cubic fit.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from io import BytesIO
from pathlib import Path

import numpy as np
import pandas as pd

from app.core.errors import CampaignError, DielectricError
from app.services.colecole import FitConfig, FitResult, evaluate, fit
from app.services.contrast import (
    DEFAULT_SPOT_FREQS_GHZ,
    DifferenceCurve,
    GroupSummary,
    Scenario,
    SpotValue,
    TissueStatus,
    TumorStage,
    fit_cubic,
    format_value,
    group_mean_difference,
    patient_difference,
    spot_values,
)
from app.services.probe_cal import CalibrationModel, invert_reflection
from app.services.spectra import (
    FLAG_DEGENERATE,
    AcquisitionConfig,
    PermittivitySpectrum,
    ReflectionSweep,
    average_sweeps,
    mean_spectra,
    resample,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class Provenance(str, Enum):
    RAW_REFLECTION = "raw_reflection"
    EXTERNAL_PERMITTIVITY = "external_permittivity"


@dataclass(frozen=True)
class MeasurementPoint:
    """One probe location on one tissue of one patient."""

    patient_id: str
    status: TissueStatus
    scenario: Scenario
    stage: TumorStage
    location_label: str
    sweeps: tuple[ReflectionSweep, ...] = ()
    spectra: tuple[PermittivitySpectrum, ...] = ()
    provenance: Provenance = Provenance.RAW_REFLECTION

    def __post_init__(self):
        object.__setattr__(self, "status", TissueStatus(self.status))
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        object.__setattr__(self, "stage", TumorStage(self.stage))
        object.__setattr__(self, "provenance", Provenance(self.provenance))
        object.__setattr__(self, "sweeps", tuple(self.sweeps))
        object.__setattr__(self, "spectra", tuple(self.spectra))
        if self.provenance is Provenance.RAW_REFLECTION and not self.sweeps:
            raise CampaignError("empty_point", f"point {self.key} has no sweeps")
        if self.provenance is Provenance.EXTERNAL_PERMITTIVITY and not self.spectra:
            raise CampaignError("empty_point", f"point {self.key} has no spectra")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.patient_id, self.location_label, self.status.value)


@dataclass(frozen=True)
class Session:
    session_id: str
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    calibration: CalibrationModel | None = None
    points: tuple[MeasurementPoint, ...] = ()
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        seen = set()
        for point in self.points:
            if point.key in seen:
                raise CampaignError("duplicate_point", f"duplicate measurement point {point.key}")
            seen.add(point.key)

    def count(self, scenario: Scenario) -> int:
        return sum(1 for p in self.points if p.scenario is scenario)

    def patient_ids(self, scenario: Scenario) -> list[str]:
        return sorted({p.patient_id for p in self.points if p.scenario is scenario})


@dataclass
class PatientTissues:
    scenario: Scenario
    patient_id: str
    stage: TumorStage
    tumor: list[PermittivitySpectrum] = field(default_factory=list)
    healthy: list[PermittivitySpectrum] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return bool(self.tumor) and bool(self.healthy)

    def side(self, status: TissueStatus) -> list[PermittivitySpectrum]:
        return self.tumor if status is TissueStatus.TUMOR else self.healthy


@dataclass(frozen=True)
class ReportRow:
    scenario: Scenario
    stage_label: str
    n_patients: int
    spots: tuple[SpotValue, ...] = ()
    note: str = ""

    def formatted_values(self) -> list[str]:
        values = []
        for spot in self.spots:
            values += [format_value(spot.delta_dc), format_value(spot.delta_lf)]
        return values


@dataclass(frozen=True)
class ReportTable:
    freqs_ghz: tuple[float, ...]
    rows: tuple[ReportRow, ...]

    def to_frame(self) -> pd.DataFrame:
        columns = ["scenario", "stage"]
        for f in self.freqs_ghz:
            columns += [f"d_eps_real@{f:g}GHz", f"d_eps_loss@{f:g}GHz"]
        columns += ["n_patients", "note"]
        records = []
        for row in self.rows:
            values = row.formatted_values() or [""] * (2 * len(self.freqs_ghz))
            records.append([row.scenario.label, row.stage_label, *values, row.n_patients, row.note])
        return pd.DataFrame(records, columns=columns)

    def render(self, fmt: str = "csv") -> str:
        df = self.to_frame()
        if fmt == "csv":
            return df.to_csv(index=False, lineterminator="\n")
        if fmt == "table":
            return df.to_string(index=False) + "\n"
        raise CampaignError("unknown_format", f"unknown report format '{fmt}'")

    def to_excel(self) -> BytesIO:
        output = BytesIO()
        with pd.ExcelWriter(output, engine="openpyxl") as writer:
            self.to_frame().to_excel(writer, sheet_name="Contrast", index=False)
        output.seek(0)
        return output


@dataclass(frozen=True)
class GroupSpectra:
    """Mean tissue spectrum of one group and status, with its Cole-Cole model."""

    scenario: Scenario
    stage: TumorStage | None
    status: TissueStatus
    n_patients: int
    mean: PermittivitySpectrum
    fit: FitResult | None = None
    model: PermittivitySpectrum | None = None

    @property
    def stage_label(self) -> str:
        return "All" if self.stage is None else self.stage.value


@dataclass(frozen=True)
class CampaignReport:
    table: ReportTable
    groups: tuple[GroupSummary, ...]
    group_spectra: tuple[GroupSpectra, ...]


def _on_common_grid(spectra: list[PermittivitySpectrum]) -> list[PermittivitySpectrum]:
    """Resample onto the coarsest grid when patients were measured on different grids."""
    grid = spectra[0].grid
    if all(s.grid == grid for s in spectra[1:]):
        return spectra
    target = min((s.grid for s in spectra), key=len)
    logger.info("Resampling %d spectra onto a common %d-point grid", len(spectra), len(target))
    return [resample(s, target) for s in spectra]


class CampaignService:
    """Service running the full contrast pipeline over a session."""

    def __init__(
        self,
        fit_config: FitConfig | None = None,
        m_poles: int = 2,
        freqs_ghz: tuple[float, ...] = DEFAULT_SPOT_FREQS_GHZ,
    ):
        self.fit_config = fit_config or FitConfig()
        self.m_poles = m_poles
        self.freqs_ghz = tuple(freqs_ghz)

    def _point_spectrum(self, point: MeasurementPoint, cal: CalibrationModel | None) -> PermittivitySpectrum:
        if point.provenance is Provenance.EXTERNAL_PERMITTIVITY:
            return mean_spectra(list(point.spectra))
        if cal is None:
            raise CampaignError("missing_calibration", f"point {point.key} is raw reflection but no calibration is available")
        return invert_reflection(cal, average_sweeps(list(point.sweeps)))

    def _collect_patients(self, session: Session, cal: CalibrationModel | None) -> list[PatientTissues]:
        cal = cal if cal is not None else session.calibration
        patients: dict[tuple[Scenario, str], PatientTissues] = {}
        for point in sorted(session.points, key=lambda p: (p.scenario.value, p.patient_id, p.status.value, p.location_label)):
            key = (point.scenario, point.patient_id)
            patient = patients.setdefault(key, PatientTissues(point.scenario, point.patient_id, point.stage))
            if patient.stage is not point.stage:
                raise CampaignError(
                    "inconsistent_stage", f"patient {point.patient_id} has points with stages {patient.stage.value} and {point.stage.value}"
                )
            patient.side(point.status).append(self._point_spectrum(point, cal))
        return list(patients.values())

    def _groups(self, patients: list[PatientTissues]):
        """Yield (scenario, stage-or-None, members) in reporting order; ex vivo and in vivo stay apart."""
        for scenario in Scenario:
            members = [p for p in patients if p.scenario is scenario]
            if not members:
                continue
            yield scenario, None, members
            for stage in sorted({p.stage for p in members}):
                yield scenario, stage, [p for p in members if p.stage is stage]

    def _summarize(self, scenario, stage, members: list[PatientTissues]) -> GroupSummary | None:
        complete = [p for p in members if p.complete]
        for p in members:
            if not p.complete:
                logger.warning("Patient %s (%s) lacks tumor or healthy tissue; left out of the difference", p.patient_id, scenario.value)
        if not complete:
            return None
        curves = [patient_difference(p.tumor, p.healthy) for p in complete]
        curves = self._align_curves(curves)
        mean_curve, mean_fit = group_mean_difference(curves)
        summary = GroupSummary(
            scenario=scenario,
            stage=stage,
            n_patients=len(complete),
            mean_curve=mean_curve,
            mean_fit=mean_fit,
            spot_rows=tuple(spot_values(mean_fit, self.freqs_ghz)),
            patient_ids=tuple(p.patient_id for p in complete),
            patient_fits=tuple(fit_cubic(c) for c in curves),
        )
        if summary.small_sample:
            logger.warning("Group %s/%s has a single patient", scenario.value, summary.stage_label)
        return summary

    @staticmethod
    def _align_curves(curves: list[DifferenceCurve]) -> list[DifferenceCurve]:
        grid = curves[0].grid
        if all(c.grid == grid for c in curves[1:]):
            return curves
        # Differences ride through resample as spectra; the nonphysical flag is irrelevant here.
        spectra = _on_common_grid(
            [
                PermittivitySpectrum(
                    c.grid,
                    c.delta_dc,
                    c.delta_lf,
                    np.where(np.isfinite(c.delta_dc) & np.isfinite(c.delta_lf), 0, FLAG_DEGENERATE),
                )
                for c in curves
            ]
        )
        return [DifferenceCurve(s.grid, s.dielectric_constant, s.loss_factor) for s in spectra]

    def _group_spectra(self, scenario, stage, members, fit_models: bool) -> list[GroupSpectra]:
        results = []
        for status in (TissueStatus.HEALTHY, TissueStatus.TUMOR):
            tissue_means = [mean_spectra(p.side(status)) for p in members if p.side(status)]
            if not tissue_means:
                continue
            mean = mean_spectra(_on_common_grid(tissue_means))
            fit_result = model = None
            if fit_models:
                try:
                    fit_result = fit(mean, self.m_poles, self.fit_config)
                    model = evaluate(fit_result.params, mean.grid)
                except DielectricError as exc:
                    logger.warning("Cole-Cole fit skipped for %s/%s/%s: %s", scenario.value, stage, status.value, exc)
            results.append(GroupSpectra(scenario, stage, status, len(tissue_means), mean, fit_result, model))
        return results

    def generate_report(
        self, session: Session, cal: CalibrationModel | None = None, fit_models: bool = True
    ) -> CampaignReport:
        """Run the whole pipeline and build the contrast table and group spectra."""
        return self._build_report(self._collect_patients(session, cal), fit_models)

    def _build_report(self, patients: list[PatientTissues], fit_models: bool) -> CampaignReport:
        rows: list[ReportRow] = []
        summaries: list[GroupSummary] = []
        group_spectra: list[GroupSpectra] = []
        for scenario, stage, members in self._groups(patients):
            label = "All" if stage is None else stage.value
            summary = self._summarize(scenario, stage, members)
            if summary is None:
                logger.warning("Group %s/%s has no patient with both tissues; skipped", scenario.value, label)
                rows.append(ReportRow(scenario, label, 0, note="skipped: no patient with both tumor and healthy tissue"))
            else:
                summaries.append(summary)
                note = "single patient" if summary.small_sample else ""
                rows.append(ReportRow(scenario, label, summary.n_patients, summary.spot_rows, note))
            group_spectra += self._group_spectra(scenario, stage, members, fit_models)
        logger.info("Report built: %d groups from %d patients", len(rows), len(patients))
        return CampaignReport(ReportTable(self.freqs_ghz, tuple(rows)), tuple(summaries), tuple(group_spectra))

    def difference_frame(self, session: Session, cal: CalibrationModel | None = None) -> pd.DataFrame:
        """Per-patient and group-mean difference curves in long form."""
        collected = self._collect_patients(session, cal)
        patients = {(p.scenario, p.patient_id): p for p in collected}
        frames = []
        for summary in self._build_report(collected, fit_models=False).groups:
            for pid, cubic in zip(summary.patient_ids, summary.patient_fits):
                p = patients[(summary.scenario, pid)]
                frames.append(self._curve_frame(summary, pid, patient_difference(p.tumor, p.healthy), cubic))
            frames.append(self._curve_frame(summary, "mean", summary.mean_curve, summary.mean_fit))
        if not frames:
            raise CampaignError("no_groups", "no group has patients with both tumor and healthy tissue")
        return pd.concat(frames, ignore_index=True)

    @staticmethod
    def _curve_frame(summary: GroupSummary, patient_id: str, curve: DifferenceCurve, cubic) -> pd.DataFrame:
        fit_dc, fit_lf = cubic.evaluate(curve.grid.ghz)
        return pd.DataFrame(
            {
                "scenario": summary.scenario.value,
                "stage": summary.stage_label,
                "patient_id": patient_id,
                "f_hz": curve.grid.points,
                "delta_dc": curve.delta_dc,
                "delta_lf": curve.delta_lf,
                "fit_dc": fit_dc,
                "fit_lf": fit_lf,
            }
        )

    def emit_plot_data(self, session: Session, cal: CalibrationModel | None, out_dir: Path) -> list[Path]:
        """Write one five-column CSV per group and tissue status."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report = self.generate_report(session, cal, fit_models=True)
        written = []
        for group in report.group_spectra:
            model = group.model
            model_dc = model.dielectric_constant if model is not None else np.full(len(group.mean), np.nan)
            model_lf = model.loss_factor if model is not None else np.full(len(group.mean), np.nan)
            df = pd.DataFrame(
                {
                    "f_hz": group.mean.grid.points,
                    "mean_dc": group.mean.dielectric_constant,
                    "mean_lf": group.mean.loss_factor,
                    "model_dc": model_dc,
                    "model_lf": model_lf,
                }
            )
            path = out_dir / f"{group.scenario.value}_{group.stage_label}_{group.status.value}.csv"
            df.to_csv(path, index=False, lineterminator="\n")
            written.append(path)
        logger.info("Wrote %d plot-data files to %s", len(written), out_dir)
        return written


def generate_report(
    session: Session,
    cal: CalibrationModel | None = None,
    fit_config: FitConfig | None = None,
    freqs_ghz: tuple[float, ...] = DEFAULT_SPOT_FREQS_GHZ,
    fit_models: bool = True,
) -> CampaignReport:
    return CampaignService(fit_config, freqs_ghz=freqs_ghz).generate_report(session, cal, fit_models)


def emit_plot_data(
    session: Session, cal: CalibrationModel | None, path: Path, fit_config: FitConfig | None = None
) -> list[Path]:
    return CampaignService(fit_config).emit_plot_data(session, cal, path)
