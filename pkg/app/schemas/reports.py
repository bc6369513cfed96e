"""Pydantic models for request/response schemas."""

from pydantic import BaseModel

from app.schemas.documents import ColeColeParamsDocument


class HealthCheck(BaseModel):
    """Health check response model."""

    status: str
    version: str


class ErrorResponse(BaseModel):
    """Body of every 422 raised from a toolkit error."""

    code: str
    detail: str


class FitResponse(BaseModel):
    """Cole-Cole fit of an uploaded spectrum."""

    m_poles: int
    params: ColeColeParamsDocument
    objective: float
    rms_rel_error_dc: float
    rms_rel_error_lf: float
    converged: bool
    iterations: int
    n_points: int
