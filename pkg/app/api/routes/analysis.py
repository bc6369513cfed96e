"""API routes for campaign reports and spectrum analysis."""

from datetime import datetime
from io import BytesIO, StringIO

import pandas as pd
from fastapi import APIRouter, Depends, File, Query, UploadFile
from fastapi.responses import StreamingResponse

from app.dependencies import get_campaign_service, get_fit_config
from app.schemas.reports import FitResponse
from app.services import ingest
from app.services.campaign import CampaignService
from app.services.colecole import FitConfig, fit, params_to_document
from app.services.contrast import penetration_depth_spectrum

XLSX_MEDIA_TYPE = "application/vnd.openxmlformats-officedocument.spreadsheetml.sheet"


def _generate_filename(session_id: str, extension: str) -> str:
    """Dated filename with a sanitized session id."""
    today = datetime.now().strftime("%Y-%m-%d")
    safe_id = "".join(c if c.isalnum() or c in " _-" else "" for c in session_id).replace(" ", "_")
    return f"contrast_report_{today}_{safe_id}.{extension}"


router = APIRouter(tags=["analysis"])


@router.post("/campaign/report")
async def campaign_report(
    session_file: UploadFile = File(..., description="Session document (JSON)"),
    calibration_file: UploadFile = File(default=None, description="Calibration overriding the session's own"),
    format: str = Query("xlsx", pattern="^(csv|xlsx)$"),
    campaign_service: CampaignService = Depends(get_campaign_service),
) -> StreamingResponse:
    """
    Build the tumor-minus-healthy contrast table of a session.

    Returns the table as an Excel workbook or a CSV file.
    """
    session = ingest.parse_session(await session_file.read())
    cal = ingest.parse_calibration(await calibration_file.read()) if calibration_file else None
    table = campaign_service.generate_report(session, cal, fit_models=False).table

    filename = _generate_filename(session.session_id, format)
    if format == "xlsx":
        content, media_type = table.to_excel(), XLSX_MEDIA_TYPE
    else:
        content, media_type = BytesIO(table.render("csv").encode()), "text/csv"
    return StreamingResponse(
        content,
        media_type=media_type,
        headers={"Content-Disposition": f"attachment; filename={filename}"},
    )


@router.post("/spectra/fit", response_model=FitResponse)
async def fit_spectrum(
    spectrum_file: UploadFile = File(..., description="Permittivity CSV (f_hz, eps_real, eps_imag_lossfactor)"),
    poles: int = Query(2, ge=0, le=4),
    seed: int | None = Query(None, ge=0),
    starts: int | None = Query(None, ge=1, le=32),
    base_config: FitConfig = Depends(get_fit_config),
) -> FitResponse:
    """Fit a Cole-Cole model to an uploaded spectrum."""
    spectrum = ingest.import_csv_spectrum(BytesIO(await spectrum_file.read()))
    overrides = {}
    if seed is not None:
        overrides["rng_seed"] = seed
    if starts is not None:
        overrides["n_starts"] = starts
    result = fit(spectrum, poles, base_config.model_copy(update=overrides))
    return FitResponse(
        m_poles=poles,
        params=params_to_document(result.params),
        objective=result.objective,
        rms_rel_error_dc=result.rms_rel_error_dc,
        rms_rel_error_lf=result.rms_rel_error_lf,
        converged=result.converged,
        iterations=result.iterations,
        n_points=len(spectrum),
    )


@router.post("/spectra/penetration-depth")
async def spectrum_penetration_depth(
    spectrum_file: UploadFile = File(..., description="Permittivity CSV (f_hz, eps_real, eps_imag_lossfactor)"),
) -> StreamingResponse:
    """Plane-wave penetration depth vs frequency as CSV."""
    spectrum = ingest.import_csv_spectrum(BytesIO(await spectrum_file.read()))
    depth = penetration_depth_spectrum(spectrum)
    buffer = StringIO()
    pd.DataFrame({"f_hz": spectrum.grid.points, "depth_m": depth}).to_csv(buffer, index=False, lineterminator="\n")
    return StreamingResponse(
        BytesIO(buffer.getvalue().encode()),
        media_type="text/csv",
        headers={"Content-Disposition": "attachment; filename=penetration_depth.csv"},
    )
