"""Frequency grids, permittivity spectra, reflection sweeps and unit conventions.

Relative permittivity follows ε_r = ε′ − jε″ with the loss factor ε″ stored
as a positive number. The ``−j`` is applied only where complex values are
formed (``PermittivitySpectrum.complex_permittivity``/``from_complex``).
"""

from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, model_validator
from scipy.constants import epsilon_0 as EPSILON_0

from app.core.errors import SpectraError

GAMMA_TOLERANCE = 1.05
NONPHYSICAL_TOL = 1e-9

FLAG_NONPHYSICAL = np.uint8(1)
FLAG_DEGENERATE = np.uint8(2)


def _frozen(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def ordered_mean(stack: np.ndarray) -> np.ndarray:
    """Mean over axis 0 with sorted summation, so input order cannot change the bits."""
    stack = np.asarray(stack)
    if np.iscomplexobj(stack):
        real = np.sort(stack.real, axis=0).sum(axis=0)
        imag = np.sort(stack.imag, axis=0).sum(axis=0)
        return (real + 1j * imag) / stack.shape[0]
    return np.sort(stack, axis=0).sum(axis=0) / stack.shape[0]


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    """Strictly increasing, positive frequency points in Hz."""

    points: np.ndarray

    def __post_init__(self):
        points = _frozen(self.points, float)
        if points.ndim != 1 or points.size < 2:
            raise SpectraError("invalid_grid", "frequency grid needs at least 2 points")
        if not np.all(np.isfinite(points)) or np.any(points <= 0):
            raise SpectraError("invalid_grid", "frequency points must be finite and > 0")
        if np.any(np.diff(points) <= 0):
            raise SpectraError("invalid_grid", "frequency points must be strictly increasing")
        object.__setattr__(self, "points", points)

    @classmethod
    def linear(cls, f_start_hz: float, f_stop_hz: float, n_points: int) -> "FrequencyGrid":
        return cls(np.linspace(f_start_hz, f_stop_hz, n_points))

    @classmethod
    def from_acquisition(cls, config: "AcquisitionConfig") -> "FrequencyGrid":
        return cls.linear(config.f_start_hz, config.f_stop_hz, config.n_points)

    @property
    def ghz(self) -> np.ndarray:
        return self.points / 1e9

    @property
    def omega(self) -> np.ndarray:
        return 2 * np.pi * self.points

    def __len__(self) -> int:
        return self.points.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, FrequencyGrid):
            return NotImplemented
        return self.points.shape == other.points.shape and bool(
            np.array_equal(self.points, other.points)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class PermittivitySpectrum:
    """Complex relative permittivity sampled on a grid.

    ``flags`` holds per-point provenance bits: FLAG_NONPHYSICAL for ε′ < 1 or
    ε″ < 0, FLAG_DEGENERATE for points where the inversion had no value (those
    points carry NaN and are the only non-finite values allowed).
    """

    grid: FrequencyGrid
    dielectric_constant: np.ndarray
    loss_factor: np.ndarray
    flags: np.ndarray | None = None

    def __post_init__(self):
        dc = _frozen(self.dielectric_constant, float)
        lf = _frozen(self.loss_factor, float)
        n = len(self.grid)
        if dc.shape != (n,) or lf.shape != (n,):
            raise SpectraError("length_mismatch", "spectrum arrays must match grid length")
        if self.flags is None:
            flags = np.zeros(n, dtype=np.uint8)
        else:
            flags = np.array(self.flags, dtype=np.uint8)
            if flags.shape != (n,):
                raise SpectraError("length_mismatch", "flag array must match grid length")
        degenerate = (flags & FLAG_DEGENERATE) != 0
        finite = np.isfinite(dc) & np.isfinite(lf)
        if np.any(~finite & ~degenerate):
            raise SpectraError("non_finite", "spectrum values must be finite")
        nonphysical = finite & ((dc < 1 - NONPHYSICAL_TOL) | (lf < -NONPHYSICAL_TOL))
        flags = np.where(nonphysical, flags | FLAG_NONPHYSICAL, flags).astype(np.uint8)
        flags.setflags(write=False)
        object.__setattr__(self, "dielectric_constant", dc)
        object.__setattr__(self, "loss_factor", lf)
        object.__setattr__(self, "flags", flags)

    @classmethod
    def from_complex(cls, grid: FrequencyGrid, eps: np.ndarray, flags=None) -> "PermittivitySpectrum":
        eps = np.asarray(eps, dtype=complex)
        return cls(grid, eps.real, -eps.imag, flags)

    @property
    def complex_permittivity(self) -> np.ndarray:
        return self.dielectric_constant - 1j * self.loss_factor

    @property
    def conductivity(self) -> np.ndarray:
        return loss_factor_to_conductivity(self.loss_factor, self.grid.points)

    @property
    def nonphysical(self) -> np.ndarray:
        return (self.flags & FLAG_NONPHYSICAL) != 0

    @property
    def degenerate(self) -> np.ndarray:
        return (self.flags & FLAG_DEGENERATE) != 0

    def __len__(self) -> int:
        return len(self.grid)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PermittivitySpectrum):
            return NotImplemented
        return (
            self.grid == other.grid
            and np.array_equal(self.dielectric_constant, other.dielectric_constant, equal_nan=True)
            and np.array_equal(self.loss_factor, other.loss_factor, equal_nan=True)
            and np.array_equal(self.flags, other.flags)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ReflectionSweep:
    """Complex reflection coefficient vs frequency from one probe contact."""

    grid: FrequencyGrid
    gamma: np.ndarray
    comments: tuple[str, ...] = field(default=())
    reference_resistance: float = 50.0

    def __post_init__(self):
        gamma = _frozen(self.gamma, complex)
        if gamma.shape != (len(self.grid),):
            raise SpectraError("length_mismatch", "sweep array must match grid length")
        if not np.all(np.isfinite(gamma)):
            raise SpectraError("non_finite", "reflection values must be finite")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "comments", tuple(self.comments))

    @property
    def out_of_range(self) -> np.ndarray:
        """Points whose |Γ| exceeds 1 plus the calibration-plane ripple tolerance."""
        return np.abs(self.gamma) > GAMMA_TOLERANCE

    def __len__(self) -> int:
        return len(self.grid)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ReflectionSweep):
            return NotImplemented
        return self.grid == other.grid and bool(np.array_equal(self.gamma, other.gamma))

    __hash__ = None


class AcquisitionConfig(BaseModel):
    """VNA acquisition settings. Defaults are the ex vivo configuration."""

    f_start_hz: float = 0.5e9
    f_stop_hz: float = 26.5e9
    n_points: int = 1601
    if_bandwidth_hz: float = 3e3
    power_dbm: float = -15.0
    n_sweeps: int = 3

    model_config = {"frozen": True}

    @model_validator(mode="after")
    def _check(self) -> "AcquisitionConfig":
        if self.n_sweeps < 1:
            raise ValueError("n_sweeps must be >= 1")
        if not 0 < self.f_start_hz < self.f_stop_hz:
            raise ValueError("f_start_hz must be positive and below f_stop_hz")
        if self.n_points < 2:
            raise ValueError("n_points must be >= 2")
        return self

    @classmethod
    def ex_vivo(cls) -> "AcquisitionConfig":
        return cls(n_points=1601)

    @classmethod
    def in_vivo(cls) -> "AcquisitionConfig":
        return cls(n_points=401)


def _require_common_grid(items, what: str) -> FrequencyGrid:
    if not items:
        raise SpectraError("empty_input", f"at least one {what} is required")
    grid = items[0].grid
    for item in items[1:]:
        if item.grid != grid:
            raise SpectraError("grid_mismatch", f"all {what}s must share one frequency grid")
    return grid


def average_sweeps(sweeps: list[ReflectionSweep]) -> ReflectionSweep:
    """Complex per-point mean of repeated sweeps on one grid."""
    grid = _require_common_grid(sweeps, "sweep")
    if len(sweeps) == 1:
        return sweeps[0]
    gamma = ordered_mean(np.stack([s.gamma for s in sweeps]))
    return ReflectionSweep(
        grid, gamma, sweeps[0].comments, sweeps[0].reference_resistance
    )


def mean_spectra(spectra: list[PermittivitySpectrum]) -> PermittivitySpectrum:
    """Pointwise mean of ε′ and ε″ over spectra sharing one grid."""
    grid = _require_common_grid(spectra, "spectrum")
    if len(spectra) == 1:
        return spectra[0]
    dc = ordered_mean(np.stack([s.dielectric_constant for s in spectra]))
    lf = ordered_mean(np.stack([s.loss_factor for s in spectra]))
    degenerate = np.bitwise_or.reduce([s.flags & FLAG_DEGENERATE for s in spectra])
    return PermittivitySpectrum(grid, dc, lf, degenerate)


def resample(spectrum: PermittivitySpectrum, target: FrequencyGrid) -> PermittivitySpectrum:
    """Linear interpolation onto ``target``; no extrapolation."""
    src = spectrum.grid.points
    dst = target.points
    if dst[0] < src[0] or dst[-1] > src[-1]:
        raise SpectraError(
            "out_of_range",
            f"target grid [{dst[0]:g}, {dst[-1]:g}] Hz exceeds source range "
            f"[{src[0]:g}, {src[-1]:g}] Hz",
        )
    if target == spectrum.grid:
        return spectrum
    dc = np.interp(dst, src, spectrum.dielectric_constant)
    lf = np.interp(dst, src, spectrum.loss_factor)

    # Coincident points are copied verbatim.
    upper = np.clip(np.searchsorted(src, dst), 0, src.size - 1)
    lower = np.clip(upper - 1, 0, src.size - 1)
    hit = src[upper] == dst
    dc[hit] = spectrum.dielectric_constant[upper[hit]]
    lf[hit] = spectrum.loss_factor[upper[hit]]

    # A target point is degenerate when any source point it draws on is.
    bad = spectrum.degenerate
    degenerate = np.where(hit, bad[upper], bad[lower] | bad[upper])
    dc[degenerate] = np.nan
    lf[degenerate] = np.nan
    flags = np.where(degenerate, FLAG_DEGENERATE, 0).astype(np.uint8)
    return PermittivitySpectrum(target, dc, lf, flags)


def crop(spectrum: PermittivitySpectrum, lo_hz: float, hi_hz: float) -> PermittivitySpectrum:
    """Keep only the points inside [lo_hz, hi_hz]."""
    f = spectrum.grid.points
    keep = (f >= lo_hz) & (f <= hi_hz)
    if keep.sum() < 2:
        raise SpectraError("out_of_range", "band leaves fewer than 2 frequency points")
    if keep.all():
        return spectrum
    return PermittivitySpectrum(
        FrequencyGrid(f[keep]),
        spectrum.dielectric_constant[keep],
        spectrum.loss_factor[keep],
        spectrum.flags[keep] & FLAG_DEGENERATE,
    )


def _check_frequency(f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0):
        raise SpectraError("invalid_frequency", "frequency must be > 0")
    return f


def loss_factor_to_conductivity(loss_factor, f):
    """σ = 2π f ε0 ε″ in S/m."""
    f = _check_frequency(f)
    sigma = 2 * np.pi * f * EPSILON_0 * np.asarray(loss_factor, dtype=float)
    return sigma if sigma.ndim else float(sigma)


def conductivity_to_loss_factor(sigma, f):
    """ε″ = σ / (2π f ε0)."""
    f = _check_frequency(f)
    lf = np.asarray(sigma, dtype=float) / (2 * np.pi * f * EPSILON_0)
    return lf if lf.ndim else float(lf)
