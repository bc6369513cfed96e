"""Open-ended coaxial probe calibration and reflection-to-permittivity inversion.

The probe is modelled per frequency by the bilinear map

    ε(Γ) = (A·Γ + B) / (1 + C·Γ)

solved from three (or more) standards of known permittivity. The short
circuit is not part of the solve: its reflection is kept as the reference for
the post-calibration drift correction of the in vivo workflow.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache
from pathlib import Path

import numpy as np
from pydantic import BaseModel, model_validator

from app.core.config import settings
from app.core.errors import CalibrationError
from app.services.spectra import (
    FLAG_DEGENERATE,
    FrequencyGrid,
    PermittivitySpectrum,
    ReflectionSweep,
    ordered_mean,
)

logger = logging.getLogger(__name__)

DEGENERACY_TOL = 1e-12
CONDITION_LIMIT = 1e10
VALID_BAND_HZ = (0.1e9, 50e9)
LIQUID_TEMPERATURE_RANGE_C = (10.0, 40.0)


class StandardKind(str, Enum):
    AIR = "air"
    SHORT = "short"
    WATER = "water"
    METHANOL = "methanol"
    ETHANOL = "ethanol"

    @property
    def is_liquid(self) -> bool:
        return self not in (StandardKind.AIR, StandardKind.SHORT)

    @property
    def has_permittivity(self) -> bool:
        return self is not StandardKind.SHORT


_KIND_ORDER = {kind: i for i, kind in enumerate(StandardKind)}

DEFAULT_REQUIRED = frozenset(
    {StandardKind.AIR, StandardKind.SHORT, StandardKind.WATER, StandardKind.METHANOL}
)


@dataclass(frozen=True)
class Standard:
    """A calibration standard; liquids carry their temperature."""

    kind: StandardKind
    temperature_c: float = 25.0

    def __post_init__(self):
        object.__setattr__(self, "kind", StandardKind(self.kind))
        lo, hi = LIQUID_TEMPERATURE_RANGE_C
        if self.kind.is_liquid and not lo <= self.temperature_c <= hi:
            raise CalibrationError(
                "invalid_standard",
                f"{self.kind.value} temperature {self.temperature_c} °C outside [{lo}, {hi}]",
            )


class ReferenceLiquidModel(BaseModel):
    """Single-pole Debye model of a reference liquid."""

    name: str
    eps_static: float
    eps_inf: float
    tau_ps: float
    reference_temperature_c: float = 25.0
    d_eps_static_dt: float = 0.0
    d_eps_inf_dt: float = 0.0
    d_tau_ps_dt: float = 0.0
    source: str = ""

    @model_validator(mode="after")
    def _check(self) -> "ReferenceLiquidModel":
        if not self.eps_static > self.eps_inf >= 1:
            raise ValueError("need eps_static > eps_inf >= 1")
        if self.tau_ps <= 0:
            raise ValueError("tau_ps must be > 0")
        return self

    def at(self, temperature_c: float) -> "ReferenceLiquidModel":
        """Parameters shifted linearly to ``temperature_c``."""
        dt = temperature_c - self.reference_temperature_c
        return ReferenceLiquidModel(
            name=self.name,
            eps_static=self.eps_static + self.d_eps_static_dt * dt,
            eps_inf=self.eps_inf + self.d_eps_inf_dt * dt,
            tau_ps=self.tau_ps + self.d_tau_ps_dt * dt,
            reference_temperature_c=temperature_c,
            d_eps_static_dt=self.d_eps_static_dt,
            d_eps_inf_dt=self.d_eps_inf_dt,
            d_tau_ps_dt=self.d_tau_ps_dt,
            source=self.source,
        )

    def permittivity(self, f_hz) -> np.ndarray:
        omega_tau = 2 * np.pi * np.asarray(f_hz, dtype=float) * self.tau_ps * 1e-12
        return self.eps_inf + (self.eps_static - self.eps_inf) / (1 + 1j * omega_tau)


class ReferenceLiquidLibrary(BaseModel):
    """Versioned reference-liquid coefficient file."""

    schema_version: int
    description: str = ""
    liquids: list[ReferenceLiquidModel]

    def get(self, name: str) -> ReferenceLiquidModel:
        for liquid in self.liquids:
            if liquid.name == name:
                return liquid
        raise CalibrationError("unknown_liquid", f"no reference data for liquid '{name}'")

    @classmethod
    def load(cls, path: Path) -> "ReferenceLiquidLibrary":
        library = cls.model_validate_json(Path(path).read_text())
        if library.schema_version != 1:
            raise CalibrationError(
                "unsupported_version",
                f"reference liquid file version {library.schema_version} is not supported",
            )
        return library


@lru_cache
def default_library() -> ReferenceLiquidLibrary:
    return ReferenceLiquidLibrary.load(settings.reference_liquids_path)


def reference_permittivity(
    standard: Standard, f_hz, library: ReferenceLiquidLibrary | None = None
) -> np.ndarray:
    """Known complex permittivity (ε′ − jε″) of a standard at ``f_hz``."""
    f = np.asarray(f_hz, dtype=float)
    if standard.kind is StandardKind.SHORT:
        raise CalibrationError("no_permittivity", "a short circuit has no finite permittivity")
    lo, hi = VALID_BAND_HZ
    if np.any(f < lo) or np.any(f > hi):
        raise CalibrationError(
            "out_of_range", f"reference data valid only within [{lo / 1e9:g}, {hi / 1e9:g}] GHz"
        )
    if standard.kind is StandardKind.AIR:
        return np.ones_like(f, dtype=complex)
    library = library or default_library()
    return library.get(standard.kind.value).at(standard.temperature_c).permittivity(f)


@dataclass(frozen=True, eq=False)
class StandardMeasurement:
    standard: Standard
    sweep: ReflectionSweep

    @property
    def kind(self) -> StandardKind:
        return self.standard.kind


@dataclass(frozen=True)
class DriftReport:
    grid: FrequencyGrid
    magnitude: np.ndarray
    phase_rad: np.ndarray


@dataclass(frozen=True, eq=False)
class CalibrationModel:
    """Per-frequency bilinear coefficients plus the short reference.

    ``drift`` is the post-calibration ratio d(f); when set, measured Γ is
    divided by it before the bilinear map is applied.
    """

    grid: FrequencyGrid
    coeff_a: np.ndarray
    coeff_b: np.ndarray
    coeff_c: np.ndarray
    short_reference: np.ndarray
    residual: np.ndarray
    drift: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.grid)
        for name in ("coeff_a", "coeff_b", "coeff_c", "short_reference", "drift"):
            value = getattr(self, name)
            if value is None:
                continue
            arr = np.array(value, dtype=complex)
            if arr.shape != (n,):
                raise CalibrationError("length_mismatch", f"{name} must match grid length")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        residual = np.array(self.residual, dtype=float)
        if residual.shape != (n,):
            raise CalibrationError("length_mismatch", "residual must match grid length")
        residual.setflags(write=False)
        object.__setattr__(self, "residual", residual)
        det = np.abs(self.coeff_a - self.coeff_b * self.coeff_c)
        if np.any(det <= DEGENERACY_TOL):
            raise CalibrationError("degenerate_model", "bilinear map is degenerate (|A - B·C| too small)")

    @property
    def drift_report(self) -> DriftReport | None:
        if self.drift is None:
            return None
        return DriftReport(self.grid, np.abs(self.drift), np.angle(self.drift))

    def __eq__(self, other) -> bool:
        if not isinstance(other, CalibrationModel):
            return NotImplemented
        if (self.drift is None) != (other.drift is None):
            return False
        same = self.grid == other.grid and all(
            np.array_equal(getattr(self, name), getattr(other, name))
            for name in ("coeff_a", "coeff_b", "coeff_c", "short_reference", "residual")
        )
        return same and (self.drift is None or bool(np.array_equal(self.drift, other.drift)))

    __hash__ = None


@dataclass(frozen=True)
class CalibrationCheck:
    """Residual of a check standard against its reference permittivity."""

    grid: FrequencyGrid
    residual: np.ndarray
    max_residual: float
    rms_residual: float


def bilinear_inverse(a, b, c, gamma) -> tuple[np.ndarray, np.ndarray]:
    """Γ → ε. Returns the permittivity and a mask of pole (degenerate) points set to NaN."""
    gamma = np.asarray(gamma, dtype=complex)
    denom = 1 + c * gamma
    degenerate = np.abs(denom) < DEGENERACY_TOL
    with np.errstate(divide="ignore", invalid="ignore"):
        eps = (a * gamma + b) / denom
    eps = np.where(degenerate, np.nan + 0j, eps)
    return eps, degenerate


def bilinear_forward(a, b, c, eps) -> np.ndarray:
    """ε → Γ, the inverse of ``bilinear_inverse``."""
    eps = np.asarray(eps, dtype=complex)
    denom = a - c * eps
    if np.any(np.abs(denom) < DEGENERACY_TOL):
        raise CalibrationError("degenerate_forward", "permittivity maps to the pole of the bilinear model")
    return (eps - b) / denom


def _common_grid(measurements: list[StandardMeasurement]) -> FrequencyGrid:
    grid = measurements[0].sweep.grid
    for m in measurements[1:]:
        if m.sweep.grid != grid:
            raise CalibrationError("grid_mismatch", "all standards must share one frequency grid")
    return grid


def _canonical_standards(standards: list[StandardMeasurement]) -> list[StandardMeasurement]:
    """Order standards deterministically and drop exact duplicates."""
    ordered = sorted(
        standards,
        key=lambda m: (_KIND_ORDER[m.kind], m.standard.temperature_c, tuple(m.sweep.gamma.view(float))),
    )
    unique: list[StandardMeasurement] = []
    for m in ordered:
        if unique and unique[-1].standard == m.standard and unique[-1].sweep == m.sweep:
            continue
        unique.append(m)
    return unique


def solve_calibration(
    standards: list[StandardMeasurement],
    required: frozenset[StandardKind] = DEFAULT_REQUIRED,
    library: ReferenceLiquidLibrary | None = None,
) -> CalibrationModel:
    """Solve A, B, C per frequency from the finite-ε standards."""
    if not standards:
        raise CalibrationError("missing_standard", "no standards supplied")
    grid = _common_grid(standards)
    present = {m.kind for m in standards}
    missing = (set(required) | {StandardKind.SHORT}) - present
    if missing:
        names = ", ".join(sorted(k.value for k in missing))
        raise CalibrationError("missing_standard", f"missing calibration standard(s): {names}")

    measurements = _canonical_standards(standards)
    finite = [m for m in measurements if m.kind.has_permittivity]
    if len({(m.kind, m.standard.temperature_c) for m in finite}) < 3:
        raise CalibrationError("missing_standard", "at least three distinct finite-permittivity standards are required")

    f = grid.points
    gammas = np.stack([m.sweep.gamma for m in finite], axis=1)
    eps_ref = np.stack([reference_permittivity(m.standard, f, library) for m in finite], axis=1)

    # Rows: A·Γ_k + B − C·ε_k·Γ_k = ε_k
    system = np.stack([gammas, np.ones_like(gammas), -eps_ref * gammas], axis=2)
    cond = np.linalg.cond(system)
    bad = ~np.isfinite(cond) | (cond > CONDITION_LIMIT)
    if np.any(bad):
        first = f[np.argmax(bad)]
        raise CalibrationError(
            "degenerate_system",
            f"calibration system ill-conditioned at {first / 1e9:.4f} GHz "
            f"(condition {cond[np.argmax(bad)]:.3g}); two standards have near-identical reflection",
        )
    if system.shape[1] == 3:
        coeffs = np.linalg.solve(system, eps_ref[..., None])[..., 0]
    else:
        coeffs = np.stack(
            [np.linalg.lstsq(system[i], eps_ref[i], rcond=None)[0] for i in range(len(f))]
        )
    a, b, c = coeffs[:, 0], coeffs[:, 1], coeffs[:, 2]

    recovered, _ = bilinear_inverse(a[:, None], b[:, None], c[:, None], gammas)
    residual = np.nanmax(np.abs(recovered - eps_ref), axis=1)

    shorts = [m.sweep for m in measurements if m.kind is StandardKind.SHORT]
    short_reference = ordered_mean(np.stack([s.gamma for s in shorts]))

    logger.info(
        "Calibration solved from %d standards on %d points (max residual %.3g)",
        len(finite), len(f), float(residual.max()),
    )
    return CalibrationModel(grid, a, b, c, short_reference, residual)


def invert_reflection(cal: CalibrationModel, sweep: ReflectionSweep) -> PermittivitySpectrum:
    """Measured Γ → complex permittivity through the calibrated bilinear map."""
    if sweep.grid != cal.grid:
        raise CalibrationError("grid_mismatch", "sweep grid differs from calibration grid")
    gamma = sweep.gamma if cal.drift is None else sweep.gamma / cal.drift
    eps, degenerate = bilinear_inverse(cal.coeff_a, cal.coeff_b, cal.coeff_c, gamma)
    if degenerate.any():
        logger.warning("%d point(s) hit the pole of the bilinear map", int(degenerate.sum()))
    flags = np.where(degenerate, FLAG_DEGENERATE, 0).astype(np.uint8)
    spectrum = PermittivitySpectrum.from_complex(cal.grid, eps, flags)
    if spectrum.nonphysical.any():
        logger.debug("%d nonphysical point(s) flagged after inversion", int(spectrum.nonphysical.sum()))
    return spectrum


def drift_correct(cal: CalibrationModel, post_short: StandardMeasurement) -> CalibrationModel:
    """Reconcile a pre-set calibration with a short re-measured after the session."""
    if post_short.kind is not StandardKind.SHORT:
        raise CalibrationError("invalid_standard", "drift correction needs a short-circuit measurement")
    if post_short.sweep.grid != cal.grid:
        raise CalibrationError("grid_mismatch", "post-calibration short grid differs from calibration grid")
    if np.any(np.abs(cal.short_reference) < DEGENERACY_TOL):
        raise CalibrationError("degenerate_short", "stored short reference is zero at some frequency")
    drift = post_short.sweep.gamma / cal.short_reference
    logger.info(
        "Drift correction applied: |d| in [%.4f, %.4f], max |arg d| %.4f rad",
        float(np.abs(drift).min()), float(np.abs(drift).max()), float(np.abs(np.angle(drift)).max()),
    )
    return replace(cal, drift=drift)


def validate_calibration(
    cal: CalibrationModel,
    check: StandardMeasurement,
    library: ReferenceLiquidLibrary | None = None,
) -> CalibrationCheck:
    """Compare the inversion of a check standard with its known permittivity."""
    if not check.kind.has_permittivity:
        raise CalibrationError("no_permittivity", "check standard must have a finite permittivity")
    spectrum = invert_reflection(cal, check.sweep)
    expected = reference_permittivity(check.standard, cal.grid.points, library)
    residual = np.abs(spectrum.complex_permittivity - expected)
    return CalibrationCheck(
        grid=cal.grid,
        residual=residual,
        max_residual=float(np.nanmax(residual)),
        rms_residual=float(np.sqrt(np.nanmean(residual**2))),
    )
