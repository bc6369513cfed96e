"""Tumor-minus-healthy difference curves, cubic fits, group aggregation and penetration depth."""

import logging
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.constants import c as SPEED_OF_LIGHT

from app.core.errors import ContrastError
from app.services.spectra import FrequencyGrid, PermittivitySpectrum, mean_spectra, ordered_mean

logger = logging.getLogger(__name__)

BAND_GHZ = (0.5, 26.5)
DEFAULT_SPOT_FREQS_GHZ = (2.45, 12.5, 18.0)


class TissueStatus(str, Enum):
    HEALTHY = "healthy"
    TUMOR = "tumor"


class TumorStage(str, Enum):
    """Ordered T3 < T4a < T4b."""

    T3 = "T3"
    T4A = "T4a"
    T4B = "T4b"

    @property
    def rank(self) -> int:
        return list(TumorStage).index(self)

    def __lt__(self, other):
        if not isinstance(other, TumorStage):
            return NotImplemented
        return self.rank < other.rank

    def __le__(self, other):
        if not isinstance(other, TumorStage):
            return NotImplemented
        return self.rank <= other.rank

    def __gt__(self, other):
        if not isinstance(other, TumorStage):
            return NotImplemented
        return self.rank > other.rank

    def __ge__(self, other):
        if not isinstance(other, TumorStage):
            return NotImplemented
        return self.rank >= other.rank


class Scenario(str, Enum):
    EX_VIVO = "ex_vivo"
    IN_VIVO = "in_vivo"

    @property
    def label(self) -> str:
        return "Ex vivo" if self is Scenario.EX_VIVO else "In vivo"


@dataclass(frozen=True, eq=False)
class DifferenceCurve:
    grid: FrequencyGrid
    delta_dc: np.ndarray
    delta_lf: np.ndarray

    def __post_init__(self):
        n = len(self.grid)
        for name in ("delta_dc", "delta_lf"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise ContrastError("length_mismatch", f"{name} must match grid length")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __neg__(self) -> "DifferenceCurve":
        return DifferenceCurve(self.grid, -self.delta_dc, -self.delta_lf)


@dataclass(frozen=True)
class CubicFit:
    """Cubic polynomials in f (GHz), coefficients c0..c3 in ascending order."""

    coeffs_dc: tuple[float, float, float, float]
    coeffs_lf: tuple[float, float, float, float]
    rms_residual_dc: float = 0.0
    rms_residual_lf: float = 0.0

    def __post_init__(self):
        for name in ("coeffs_dc", "coeffs_lf"):
            coeffs = tuple(float(v) for v in getattr(self, name))
            if len(coeffs) != 4 or not all(np.isfinite(coeffs)):
                raise ContrastError("invalid_fit", f"{name} must be 4 finite coefficients")
            object.__setattr__(self, name, coeffs)

    def evaluate(self, f_ghz) -> tuple[np.ndarray, np.ndarray]:
        f = np.asarray(f_ghz, dtype=float)
        return P.polyval(f, self.coeffs_dc), P.polyval(f, self.coeffs_lf)


@dataclass(frozen=True)
class SpotValue:
    f_ghz: float
    delta_dc: float
    delta_lf: float


@dataclass(frozen=True)
class GroupSummary:
    scenario: Scenario
    stage: TumorStage | None  # None = all stages
    n_patients: int
    mean_curve: DifferenceCurve
    mean_fit: CubicFit
    spot_rows: tuple[SpotValue, ...]
    patient_ids: tuple[str, ...] = ()
    patient_fits: tuple[CubicFit, ...] = field(default=())

    def __post_init__(self):
        if self.n_patients < 1:
            raise ContrastError("empty_group", "a group summary needs at least one patient")

    @property
    def stage_label(self) -> str:
        return "All" if self.stage is None else self.stage.value

    @property
    def small_sample(self) -> bool:
        return self.n_patients == 1


def patient_difference(
    tumor_spectra: list[PermittivitySpectrum], healthy_spectra: list[PermittivitySpectrum]
) -> DifferenceCurve:
    """Mean tumor spectrum minus mean healthy spectrum for one patient."""
    if not tumor_spectra or not healthy_spectra:
        raise ContrastError("empty_side", "both tumor and healthy measurements are required")
    tumor = mean_spectra(tumor_spectra)
    healthy = mean_spectra(healthy_spectra)
    if tumor.grid != healthy.grid:
        raise ContrastError("grid_mismatch", "tumor and healthy spectra must share one grid")
    return DifferenceCurve(
        tumor.grid,
        tumor.dielectric_constant - healthy.dielectric_constant,
        tumor.loss_factor - healthy.loss_factor,
    )


def _fit_one(f_ghz: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, float]:
    usable = np.isfinite(values)
    coeffs = P.polyfit(f_ghz[usable], values[usable], 3)
    residual = values[usable] - P.polyval(f_ghz[usable], coeffs)
    return coeffs, float(np.sqrt(np.mean(residual**2)))


def fit_cubic(curve: DifferenceCurve) -> CubicFit:
    """Least-squares cubic in f (GHz) for Δε′ and Δε″ independently."""
    if len(curve.grid) < 4:
        raise ContrastError("too_few_points", "a cubic fit needs at least 4 frequency points")
    f_ghz = curve.grid.ghz
    coeffs_dc, rms_dc = _fit_one(f_ghz, curve.delta_dc)
    coeffs_lf, rms_lf = _fit_one(f_ghz, curve.delta_lf)
    return CubicFit(tuple(coeffs_dc), tuple(coeffs_lf), rms_dc, rms_lf)


def group_mean_difference(per_patient: list[DifferenceCurve]) -> tuple[DifferenceCurve, CubicFit]:
    """Equal-weight mean over patients, then the cubic fit of that mean."""
    if not per_patient:
        raise ContrastError("empty_group", "no patient difference curves to average")
    grid = per_patient[0].grid
    if any(curve.grid != grid for curve in per_patient[1:]):
        raise ContrastError("grid_mismatch", "patient curves must share one grid; resample first")
    if len(per_patient) == 1:
        mean = per_patient[0]
    else:
        mean = DifferenceCurve(
            grid,
            ordered_mean(np.stack([c.delta_dc for c in per_patient])),
            ordered_mean(np.stack([c.delta_lf for c in per_patient])),
        )
    return mean, fit_cubic(mean)


def spot_values(fit: CubicFit, freqs_ghz=DEFAULT_SPOT_FREQS_GHZ) -> list[SpotValue]:
    """Evaluate the fitted difference at reporting frequencies (unrounded)."""
    lo, hi = BAND_GHZ
    rows = []
    for f in freqs_ghz:
        if not lo <= f <= hi:
            raise ContrastError("out_of_band", f"{f} GHz outside the {lo}-{hi} GHz band")
        dc, lf = fit.evaluate(f)
        rows.append(SpotValue(float(f), float(dc), float(lf)))
    return rows


def format_value(value: float) -> str:
    """Two decimals, half away from zero; small negatives keep their sign (-0.00)."""
    value = float(value) + 0.0  # -0.0 -> 0.0
    return str(Decimal(repr(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def penetration_depth(dc, lf, f_hz):
    """Plane-wave 1/e field depth in metres; lossless media give +inf."""
    dc = np.asarray(dc, dtype=float)
    lf = np.asarray(lf, dtype=float)
    f = np.asarray(f_hz, dtype=float)
    if np.any(dc < 1) or np.any(lf < 0) or np.any(f <= 0):
        raise ContrastError("invalid_medium", "penetration depth needs dc >= 1, lf >= 0 and f > 0")
    ratio = lf / dc
    # sqrt(1 + r²) − 1 written without cancellation for small r
    excess = ratio**2 / (np.sqrt(1 + ratio**2) + 1)
    attenuation = (2 * np.pi * f / SPEED_OF_LIGHT) * np.sqrt(0.5 * dc * excess)
    with np.errstate(divide="ignore"):
        depth = np.where(attenuation > 0, 1.0 / attenuation, np.inf)
    return depth if depth.ndim else float(depth)


def penetration_depth_spectrum(spectrum: PermittivitySpectrum) -> np.ndarray:
    return penetration_depth(spectrum.dielectric_constant, spectrum.loss_factor, spectrum.grid.points)
