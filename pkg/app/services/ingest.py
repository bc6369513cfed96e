"""Reading and writing measurement files and toolkit documents.

Supported inputs are one-port Touchstone (``.s1p``) sweeps, three-column
permittivity CSV files, and the JSON session/calibration documents.
"""

import json
import logging
from pathlib import Path
from typing import IO

import numpy as np
import pandas as pd
from pydantic import ValidationError

from app.core.errors import CampaignError, DielectricError, IngestError, SessionVersionError
from app.schemas.documents import (
    SCHEMA_VERSION,
    CalibrationDocument,
    ColeColeParamsFile,
    ComplexArray,
    MeasurementPointDocument,
    SessionDocument,
    SpectrumDocument,
    SweepDocument,
)
from app.services.campaign import MeasurementPoint, Session
from app.services.colecole import ColeColeParams, FitResult, params_to_document
from app.services.probe_cal import CalibrationModel
from app.services.spectra import FLAG_DEGENERATE, FrequencyGrid, PermittivitySpectrum, ReflectionSweep

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("f_hz", "eps_real", "eps_imag_lossfactor")

_UNITS = {"HZ": 1.0, "KHZ": 1e3, "MHZ": 1e6, "GHZ": 1e9}
_FORMATS = ("RI", "MA", "DB")
_PARAMETERS = ("S", "Y", "Z", "H", "G")


# Touchstone


def _parse_option_line(tokens: list[str]) -> tuple[float, str, float]:
    unit, fmt, resistance = 1e9, "MA", 50.0
    parameter = "S"
    i = 0
    while i < len(tokens):
        token = tokens[i].upper()
        if token in _UNITS:
            unit = _UNITS[token]
        elif token in _FORMATS:
            fmt = token
        elif token in _PARAMETERS:
            parameter = token
        elif token == "R":
            try:
                resistance = float(tokens[i + 1])
            except (IndexError, ValueError):
                raise IngestError("malformed_header", "option line 'R' must be followed by a number")
            i += 1
        else:
            raise IngestError("malformed_header", f"unknown option token '{tokens[i]}'")
        i += 1
    if parameter != "S":
        raise IngestError("unsupported_parameter", f"only S-parameters are supported, got '{parameter}'")
    return unit, fmt, resistance


def _to_complex(first: np.ndarray, second: np.ndarray, fmt: str) -> np.ndarray:
    if fmt == "RI":
        return first + 1j * second
    magnitude = first if fmt == "MA" else 10 ** (first / 20)
    return magnitude * np.exp(1j * np.deg2rad(second))


def import_touchstone(path: Path) -> ReflectionSweep:
    """Parse a one-port Touchstone file into a sweep; comments are kept as metadata."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix.startswith(".s") and suffix.endswith("p") and suffix not in (".s1p", ".sp"):
        raise IngestError("multi_port", f"{path.name} is not a one-port file")
    try:
        text = path.read_text()
    except OSError as exc:
        raise IngestError("unreadable", f"cannot read {path}: {exc}")

    comments: list[str] = []
    option = None
    rows: list[list[float]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        data, bang, comment = raw.partition("!")
        if bang:
            comments.append(comment.strip())
        data = data.strip()
        if not data:
            continue
        if data.startswith("#"):
            if option is not None:
                raise IngestError("malformed_header", f"second option line at line {lineno}")
            option = _parse_option_line(data[1:].split())
            continue
        if data.startswith("["):
            raise IngestError("malformed_header", f"Touchstone 2 keyword at line {lineno} is not supported")
        tokens = data.split()
        if len(tokens) != 3:
            code = "multi_port" if len(tokens) > 3 else "malformed_row"
            raise IngestError(code, f"line {lineno}: expected 3 columns, found {len(tokens)}")
        try:
            rows.append([float(t) for t in tokens])
        except ValueError:
            raise IngestError("malformed_row", f"line {lineno}: non-numeric value")

    unit, fmt, resistance = option or (1e9, "MA", 50.0)
    if len(rows) < 2:
        raise IngestError("too_few_points", f"{path.name} holds fewer than 2 data rows")
    table = np.array(rows)
    f_hz = table[:, 0] * unit
    if np.any(np.diff(f_hz) <= 0):
        raise IngestError("non_monotone", f"{path.name}: frequencies are not strictly increasing")
    gamma = _to_complex(table[:, 1], table[:, 2], fmt)
    logger.debug("Read %d points from %s (%s)", len(rows), path.name, fmt)
    return ReflectionSweep(FrequencyGrid(f_hz), gamma, tuple(comments), resistance)


def export_touchstone(sweep: ReflectionSweep, path: Path) -> Path:
    """Write a sweep as Hz / RI so that reading it back is lossless."""
    path = Path(path)
    lines = [f"! {c}" if c else "!" for c in sweep.comments]
    lines.append(f"# HZ S RI R {sweep.reference_resistance:g}")
    for f, g in zip(sweep.grid.points, sweep.gamma):
        lines.append(f"{float(f)!r} {float(g.real)!r} {float(g.imag)!r}")
    path.write_text("\n".join(lines) + "\n")
    return path


# Permittivity CSV


def import_csv_spectrum(source: Path | IO) -> PermittivitySpectrum:
    """Read f_hz, eps_real and eps_imag_lossfactor (positive loss) columns from a path or buffer."""
    if isinstance(source, (str, Path)):
        source = Path(source)
        name = source.name
    else:
        name = getattr(source, "name", "upload")
    try:
        df = pd.read_csv(source, float_precision="round_trip")
    except (OSError, UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise IngestError("unreadable", f"cannot parse {name}: {exc}")
    df.columns = [str(c).strip() for c in df.columns]
    missing = [c for c in CSV_COLUMNS if c not in df.columns]
    if missing:
        raise IngestError("missing_columns", f"{name} lacks column(s): {', '.join(missing)}")
    raw = df[list(CSV_COLUMNS)]
    values = raw.apply(pd.to_numeric, errors="coerce")
    # Empty permittivity cells are degenerate points; anything else unparseable is an error.
    invalid = values.isna() & raw.notna()
    invalid["f_hz"] |= values["f_hz"].isna()
    if invalid.any().any():
        bad_row = int(invalid.any(axis=1).to_numpy().argmax())
        raise IngestError("non_numeric", f"{name}: non-numeric value in data row {bad_row + 1}")
    f_hz = values["f_hz"].to_numpy(dtype=float)
    if np.any(np.diff(f_hz) <= 0):
        raise IngestError("non_monotone", f"{name}: frequencies are not strictly increasing")
    degenerate = values[["eps_real", "eps_imag_lossfactor"]].isna().any(axis=1).to_numpy()
    dc = np.array(values["eps_real"], dtype=float)
    lf = np.array(values["eps_imag_lossfactor"], dtype=float)
    dc[degenerate] = np.nan
    lf[degenerate] = np.nan
    return PermittivitySpectrum(
        FrequencyGrid(f_hz), dc, lf, np.where(degenerate, FLAG_DEGENERATE, 0).astype(np.uint8)
    )


def export_csv_spectrum(spectrum: PermittivitySpectrum, target: Path | IO) -> Path | IO:
    if isinstance(target, str):
        target = Path(target)
    pd.DataFrame(
        {
            "f_hz": spectrum.grid.points,
            "eps_real": spectrum.dielectric_constant,
            "eps_imag_lossfactor": spectrum.loss_factor,
        }
    ).to_csv(target, index=False, lineterminator="\n")
    return target


# Document conversions


def _complex_doc(values: np.ndarray) -> ComplexArray:
    return ComplexArray(real=values.real.tolist(), imag=values.imag.tolist())


def _complex_array(doc: ComplexArray) -> np.ndarray:
    return np.array(doc.real, dtype=float) + 1j * np.array(doc.imag, dtype=float)


def _nullable(values: np.ndarray) -> list[float | None]:
    return [None if np.isnan(v) else float(v) for v in values]


def _from_nullable(values: list[float | None]) -> np.ndarray:
    return np.array([np.nan if v is None else v for v in values], dtype=float)


def calibration_to_document(cal: CalibrationModel) -> CalibrationDocument:
    return CalibrationDocument(
        frequencies_hz=cal.grid.points.tolist(),
        coeff_a=_complex_doc(cal.coeff_a),
        coeff_b=_complex_doc(cal.coeff_b),
        coeff_c=_complex_doc(cal.coeff_c),
        short_reference=_complex_doc(cal.short_reference),
        residual=cal.residual.tolist(),
        drift=None if cal.drift is None else _complex_doc(cal.drift),
    )


def calibration_from_document(doc: CalibrationDocument) -> CalibrationModel:
    if doc.schema_version != SCHEMA_VERSION:
        raise IngestError("unsupported_version", f"calibration version {doc.schema_version} is not supported")
    return CalibrationModel(
        grid=FrequencyGrid(doc.frequencies_hz),
        coeff_a=_complex_array(doc.coeff_a),
        coeff_b=_complex_array(doc.coeff_b),
        coeff_c=_complex_array(doc.coeff_c),
        short_reference=_complex_array(doc.short_reference),
        residual=doc.residual,
        drift=None if doc.drift is None else _complex_array(doc.drift),
    )


class _GridTable:
    """Deduplicated grids referenced by index from sweeps and spectra."""

    def __init__(self):
        self.grids: list[FrequencyGrid] = []

    def index(self, grid: FrequencyGrid) -> int:
        for i, known in enumerate(self.grids):
            if known is grid or known == grid:
                return i
        self.grids.append(grid)
        return len(self.grids) - 1


def _point_to_document(point: MeasurementPoint, grids: _GridTable) -> MeasurementPointDocument:
    return MeasurementPointDocument(
        patient_id=point.patient_id,
        status=point.status.value,
        scenario=point.scenario.value,
        stage=point.stage.value,
        location_label=point.location_label,
        provenance=point.provenance.value,
        sweeps=[
            SweepDocument(
                grid=grids.index(s.grid),
                gamma=_complex_doc(s.gamma),
                comments=list(s.comments),
                reference_resistance=s.reference_resistance,
            )
            for s in point.sweeps
        ],
        spectra=[
            SpectrumDocument(
                grid=grids.index(s.grid),
                dielectric_constant=_nullable(s.dielectric_constant),
                loss_factor=_nullable(s.loss_factor),
                flags=s.flags.tolist(),
            )
            for s in point.spectra
        ],
    )


def session_to_document(session: Session) -> SessionDocument:
    grids = _GridTable()
    points = [_point_to_document(p, grids) for p in session.points]
    return SessionDocument(
        schema_version=session.schema_version,
        session_id=session.session_id,
        acquisition=session.acquisition,
        grids=[g.points.tolist() for g in grids.grids],
        calibration=None if session.calibration is None else calibration_to_document(session.calibration),
        points=points,
    )


def _grid_at(grids: list[FrequencyGrid], index: int) -> FrequencyGrid:
    if not 0 <= index < len(grids):
        raise CampaignError("corrupt_document", f"grid index {index} out of range")
    return grids[index]


def session_from_document(doc: SessionDocument) -> Session:
    try:
        return _build_session(doc)
    except CampaignError:
        raise
    except (DielectricError, ValueError) as exc:
        raise CampaignError("corrupt_document", f"invalid session content: {exc}") from exc


def _build_session(doc: SessionDocument) -> Session:
    grids = [FrequencyGrid(points) for points in doc.grids]
    points = []
    for p in doc.points:
        sweeps = [
            ReflectionSweep(_grid_at(grids, s.grid), _complex_array(s.gamma), tuple(s.comments), s.reference_resistance)
            for s in p.sweeps
        ]
        spectra = [
            PermittivitySpectrum(
                _grid_at(grids, s.grid), _from_nullable(s.dielectric_constant), _from_nullable(s.loss_factor), s.flags
            )
            for s in p.spectra
        ]
        points.append(
            MeasurementPoint(
                patient_id=p.patient_id,
                status=p.status,
                scenario=p.scenario,
                stage=p.stage,
                location_label=p.location_label,
                sweeps=tuple(sweeps),
                spectra=tuple(spectra),
                provenance=p.provenance,
            )
        )
    return Session(
        session_id=doc.session_id,
        acquisition=doc.acquisition,
        calibration=None if doc.calibration is None else calibration_from_document(doc.calibration),
        points=tuple(points),
        schema_version=doc.schema_version,
    )


# Files


def _read_text(path: Path, error_cls) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise error_cls("unreadable", f"cannot read {path}: {exc}")


def _parse_json(text: str | bytes, error_cls) -> dict:
    try:
        data = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise error_cls("corrupt_document", f"document is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise error_cls("corrupt_document", "document must hold a JSON object")
    return data


def save_session(session: Session, path: Path) -> Path:
    path = Path(path)
    path.write_text(session_to_document(session).model_dump_json(indent=1))
    logger.info("Saved session %s (%d points) to %s", session.session_id, len(session.points), path)
    return path


def parse_session(text: str | bytes) -> Session:
    """Parse a session document; the version is checked before anything else."""
    data = _parse_json(text, CampaignError)
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SessionVersionError(
            "unsupported_version", f"session schema_version {version!r} is not supported (expected {SCHEMA_VERSION})"
        )
    try:
        doc = SessionDocument.model_validate(data)
    except ValidationError as exc:
        raise CampaignError("corrupt_document", f"invalid session document: {exc.error_count()} error(s)")
    return session_from_document(doc)


def load_session(path: Path) -> Session:
    return parse_session(_read_text(path, CampaignError))


def save_calibration(cal: CalibrationModel, path: Path) -> Path:
    path = Path(path)
    path.write_text(calibration_to_document(cal).model_dump_json(indent=1))
    return path


def parse_calibration(text: str | bytes) -> CalibrationModel:
    data = _parse_json(text, IngestError)
    try:
        doc = CalibrationDocument.model_validate(data)
    except ValidationError as exc:
        raise IngestError("corrupt_document", f"invalid calibration document: {exc.error_count()} error(s)")
    return calibration_from_document(doc)


def load_calibration(path: Path) -> CalibrationModel:
    return parse_calibration(_read_text(path, IngestError))


def save_params(params: ColeColeParams, path: Path, result: FitResult | None = None, description: str = "") -> Path:
    """Write Cole-Cole parameters, plus fit diagnostics when a result is given."""
    doc = ColeColeParamsFile(description=description, params=params_to_document(params))
    if result is not None:
        doc.objective = result.objective
        doc.rms_rel_error_dc = result.rms_rel_error_dc
        doc.rms_rel_error_lf = result.rms_rel_error_lf
        doc.converged = result.converged
        doc.iterations = result.iterations
    path = Path(path)
    path.write_text(doc.model_dump_json(indent=1))
    return path
