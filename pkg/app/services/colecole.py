"""Multi-pole Cole-Cole dispersion model: evaluation and bounded least-squares fitting.

    ε(f) = ε∞ + Σ_m Δε_m / (1 + (jωτ_m)^(1−α_m)) + σ_s / (jωε0)

The fractional power is taken on the principal branch:
(jωτ)^(1−α) = (ωτ)^(1−α) · exp(jπ(1−α)/2), with ωτ > 0.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, model_validator
from scipy.optimize import least_squares

from app.core.config import Settings, settings
from app.core.errors import FitError
from app.schemas.documents import ColeColeParamsDocument, ColeColeParamsFile, PoleDocument
from app.services.spectra import EPSILON_0, FrequencyGrid, PermittivitySpectrum

logger = logging.getLogger(__name__)

LN10 = np.log(10.0)


@dataclass(frozen=True)
class Pole:
    delta_eps: float
    tau_s: float
    alpha: float

    def __post_init__(self):
        if not self.delta_eps >= 0:
            raise FitError("invalid_params", f"delta_eps must be >= 0, got {self.delta_eps}")
        if not self.tau_s > 0:
            raise FitError("invalid_params", f"tau_s must be > 0, got {self.tau_s}")
        if not 0 <= self.alpha < 1:
            raise FitError("invalid_params", f"alpha must be in [0, 1), got {self.alpha}")


@dataclass(frozen=True)
class ColeColeParams:
    eps_inf: float
    poles: tuple[Pole, ...] = ()
    sigma_s: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "poles", tuple(self.poles))
        if not self.eps_inf >= 1:
            raise FitError("invalid_params", f"eps_inf must be >= 1, got {self.eps_inf}")
        if not self.sigma_s >= 0:
            raise FitError("invalid_params", f"sigma_s must be >= 0, got {self.sigma_s}")

    @property
    def m_poles(self) -> int:
        return len(self.poles)

    def sorted_poles(self) -> "ColeColeParams":
        return ColeColeParams(self.eps_inf, tuple(sorted(self.poles, key=lambda p: p.tau_s)), self.sigma_s)

    def with_extra_pole(self, pole: Pole) -> "ColeColeParams":
        return ColeColeParams(self.eps_inf, self.poles + (pole,), self.sigma_s)


def params_from_document(doc: ColeColeParamsDocument) -> ColeColeParams:
    return ColeColeParams(
        doc.eps_inf,
        tuple(Pole(p.delta_eps, p.tau_s, p.alpha) for p in doc.poles),
        doc.sigma_s,
    )


def params_to_document(params: ColeColeParams) -> ColeColeParamsDocument:
    return ColeColeParamsDocument(
        eps_inf=params.eps_inf,
        poles=[PoleDocument(delta_eps=p.delta_eps, tau_s=p.tau_s, alpha=p.alpha) for p in params.poles],
        sigma_s=params.sigma_s,
    )


def load_params(path: Path) -> ColeColeParams:
    doc = ColeColeParamsFile.model_validate_json(Path(path).read_text())
    if doc.schema_version != 1:
        raise FitError("unsupported_version", f"parameter file version {doc.schema_version} is not supported")
    return params_from_document(doc.params)


@lru_cache
def canonical_params() -> ColeColeParams:
    return load_params(settings.colecole_init_path)


def _pole_factor(omega: np.ndarray, tau: float, alpha: float) -> np.ndarray:
    """(jωτ)^(1−α) on the principal branch."""
    exponent = 1.0 - alpha
    return (omega * tau) ** exponent * np.exp(0.5j * np.pi * exponent)


def complex_permittivity(params: ColeColeParams, f_hz) -> np.ndarray:
    """ε′ − jε″ of the model at ``f_hz``."""
    omega = 2 * np.pi * np.asarray(f_hz, dtype=float)
    eps = np.full(omega.shape, params.eps_inf, dtype=complex)
    for pole in params.poles:
        eps = eps + pole.delta_eps / (1 + _pole_factor(omega, pole.tau_s, pole.alpha))
    if params.sigma_s:
        eps = eps + params.sigma_s / (1j * omega * EPSILON_0)
    return eps


def evaluate(params: ColeColeParams, grid: FrequencyGrid) -> PermittivitySpectrum:
    return PermittivitySpectrum.from_complex(grid, complex_permittivity(params, grid.points))


class FitBounds(BaseModel):
    """Per-parameter [lo, hi]; the same pole bounds apply to every pole."""

    eps_inf: tuple[float, float] = (1.0, 100.0)
    delta_eps: tuple[float, float] = (0.0, 1000.0)
    tau_s: tuple[float, float] = (1e-13, 1e-8)
    alpha: tuple[float, float] = (0.0, 0.3)
    sigma_s: tuple[float, float] = (0.0, 50.0)

    @model_validator(mode="after")
    def _check(self) -> "FitBounds":
        for name in ("eps_inf", "delta_eps", "tau_s", "alpha", "sigma_s"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} bounds must satisfy lo < hi")
        if self.eps_inf[0] < 1 or self.delta_eps[0] < 0 or self.sigma_s[0] < 0:
            raise ValueError("eps_inf >= 1, delta_eps >= 0 and sigma_s >= 0 are required")
        if self.tau_s[0] <= 0:
            raise ValueError("tau_s lower bound must be > 0")
        if self.alpha[0] < 0 or self.alpha[1] >= 1:
            raise ValueError("alpha bounds must lie in [0, 1)")
        return self


class FitConfig(BaseModel):
    max_iterations: int = 1000
    convergence_tol: float = 1e-12
    n_starts: int = 4
    bounds: FitBounds = FitBounds()
    weighting: Literal["absolute", "relative"] = "relative"
    rng_seed: int = 0

    @model_validator(mode="after")
    def _check(self) -> "FitConfig":
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        return self

    @classmethod
    def from_settings(cls, config: Settings = settings, **overrides) -> "FitConfig":
        values = {
            "max_iterations": config.fit_max_iterations,
            "n_starts": config.fit_starts,
            "rng_seed": config.fit_seed,
            "bounds": FitBounds(alpha=(0.0, config.alpha_max)),
        }
        values.update(overrides)
        return cls(**values)


@dataclass(frozen=True)
class FitResult:
    params: ColeColeParams
    objective: float
    rms_rel_error_dc: float
    rms_rel_error_lf: float
    converged: bool
    iterations: int
    residuals: np.ndarray
    history: tuple[float, ...] = field(default=())
    start_index: int = 0


@dataclass(frozen=True)
class PoleCountRow:
    m_poles: int
    objective: float
    rms_rel_error_dc: float
    rms_rel_error_lf: float
    result: FitResult


# Parameter vector layout: [ε∞, (Δε, log10 τ, α) per pole, σ_s]


def _pack(params: ColeColeParams) -> np.ndarray:
    values = [params.eps_inf]
    for pole in params.poles:
        values += [pole.delta_eps, np.log10(pole.tau_s), pole.alpha]
    values.append(params.sigma_s)
    return np.array(values, dtype=float)


def _unpack(x: np.ndarray, m_poles: int) -> ColeColeParams:
    poles = tuple(
        Pole(float(x[1 + 3 * i]), float(10 ** x[2 + 3 * i]), float(x[3 + 3 * i])) for i in range(m_poles)
    )
    return ColeColeParams(float(x[0]), poles, float(x[-1]))


def _bounds_vectors(bounds: FitBounds, m_poles: int) -> tuple[np.ndarray, np.ndarray]:
    lo = [bounds.eps_inf[0]]
    hi = [bounds.eps_inf[1]]
    for _ in range(m_poles):
        lo += [bounds.delta_eps[0], np.log10(bounds.tau_s[0]), bounds.alpha[0]]
        hi += [bounds.delta_eps[1], np.log10(bounds.tau_s[1]), bounds.alpha[1]]
    lo.append(bounds.sigma_s[0])
    hi.append(bounds.sigma_s[1])
    return np.array(lo), np.array(hi)


def _model_and_derivatives(x: np.ndarray, omega: np.ndarray, m_poles: int):
    """Model ε(ω) and ∂ε/∂x as a (n_points, n_params) complex array."""
    n_params = 2 + 3 * m_poles
    deriv = np.empty((omega.size, n_params), dtype=complex)
    eps = np.full(omega.shape, x[0], dtype=complex)
    deriv[:, 0] = 1.0
    for i in range(m_poles):
        delta, log_tau, alpha = x[1 + 3 * i : 4 + 3 * i]
        tau = 10**log_tau
        log_wt = np.log(omega * tau)
        z = _pole_factor(omega, tau, alpha)
        inv = 1.0 / (1.0 + z)
        eps = eps + delta * inv
        deriv[:, 1 + 3 * i] = inv
        deriv[:, 2 + 3 * i] = -delta * (1.0 - alpha) * z * inv**2 * LN10
        deriv[:, 3 + 3 * i] = delta * z * (log_wt + 0.5j * np.pi) * inv**2
    conduction = 1.0 / (1j * omega * EPSILON_0)
    eps = eps + x[-1] * conduction
    deriv[:, -1] = conduction
    return eps, deriv


def _weights(measured: np.ndarray, weighting: str) -> np.ndarray:
    if weighting == "absolute":
        return np.ones(measured.size)
    magnitude = np.abs(measured)
    if np.any(magnitude == 0):
        raise FitError("zero_permittivity", "relative weighting needs non-zero measured permittivity")
    return 1.0 / magnitude


def residual_vector(x, omega, measured, sqrt_w, m_poles) -> np.ndarray:
    eps, _ = _model_and_derivatives(x, omega, m_poles)
    r = sqrt_w * (eps - measured)
    return np.concatenate([r.real, r.imag])


def residual_jacobian(x, omega, measured, sqrt_w, m_poles) -> np.ndarray:
    """Analytic Jacobian of ``residual_vector`` with respect to the packed parameters."""
    _, deriv = _model_and_derivatives(x, omega, m_poles)
    scaled = sqrt_w[:, None] * deriv
    return np.concatenate([scaled.real, scaled.imag])


def _rms_relative(model: np.ndarray, measured: np.ndarray) -> tuple[float, float]:
    # Both parts are taken relative to |ε_meas| so a vanishing ε″ cannot blow up the ratio.
    scale = np.abs(measured)
    dc = (model.real - measured.real) / scale
    lf = (model.imag - measured.imag) / scale
    return float(np.sqrt(np.mean(dc**2))), float(np.sqrt(np.mean(lf**2)))


def _canonical_start(m_poles: int) -> ColeColeParams:
    base = canonical_params()
    poles = list(base.poles[:m_poles])
    extra_taus = np.geomspace(1e-12, 1e-9, max(m_poles - len(poles), 1))
    for tau in extra_taus[: m_poles - len(poles)]:
        poles.append(Pole(5.0, float(tau), 0.05))
    return ColeColeParams(base.eps_inf, tuple(poles), base.sigma_s)


def _random_start(rng: np.random.Generator, m_poles: int, omega: np.ndarray, measured: np.ndarray) -> np.ndarray:
    x = [rng.uniform(1.0, 10.0)]
    for _ in range(m_poles):
        x += [rng.uniform(1.0, 80.0), rng.uniform(-13.0, -8.0), rng.uniform(0.0, 0.3)]
    low = slice(0, min(3, omega.size))
    sigma_guess = float(np.mean(-measured.imag[low] * omega[low] * EPSILON_0))
    x.append(max(sigma_guess, 0.0) * rng.uniform(0.5, 1.5))
    return np.array(x)


def _snap_to_bounds(x, lo, hi, objective) -> tuple[np.ndarray, float]:
    """Move parameters resting next to a bound onto it when that does not cost anything."""
    best = objective(x)
    width = hi - lo
    for i in range(x.size):
        for bound in (lo[i], hi[i]):
            if x[i] != bound and abs(x[i] - bound) < 1e-6 * width[i]:
                trial = x.copy()
                trial[i] = bound
                value = objective(trial)
                if value <= best:
                    x, best = trial, value
    return x, best


def fit(
    spectrum: PermittivitySpectrum,
    m_poles: int,
    config: FitConfig | None = None,
    initial: list[ColeColeParams] | None = None,
) -> FitResult:
    """Fit an M-pole Cole-Cole model to a (mean) permittivity spectrum.

    Starts are tried in order: any ``initial`` guesses, the canonical
    parameter set, then randomised starts drawn from ``config.rng_seed``.
    The lowest objective wins; ties go to the earlier start.
    """
    config = config or FitConfig()
    if m_poles < 0:
        raise FitError("invalid_poles", "m_poles must be >= 0")
    usable = ~spectrum.degenerate
    n_points = int(usable.sum())
    if n_points < 4 + 3 * m_poles:
        raise FitError(
            "too_few_points",
            f"{n_points} usable points cannot constrain a {m_poles}-pole model (need {4 + 3 * m_poles})",
        )

    omega = spectrum.grid.omega[usable]
    measured = spectrum.complex_permittivity[usable]
    sqrt_w = _weights(measured, config.weighting)
    lo, hi = _bounds_vectors(config.bounds, m_poles)
    args = (omega, measured, sqrt_w, m_poles)

    def objective(x):
        r = residual_vector(x, *args)
        return float(r @ r)

    starts = [_pack(p) for p in (initial or [])]
    starts.append(_pack(_canonical_start(m_poles)))
    rng = np.random.default_rng(config.rng_seed)
    while len(starts) < len(initial or []) + config.n_starts:
        starts.append(_random_start(rng, m_poles, omega, measured))

    best: FitResult | None = None
    for index, x0 in enumerate(starts):
        x0 = np.clip(x0, lo, hi)
        history: list[float] = []

        def jac(x, *_):
            history.append(objective(x))
            return residual_jacobian(x, *args)

        try:
            solution = least_squares(
                residual_vector,
                x0,
                jac=jac,
                bounds=(lo, hi),
                method="trf",
                x_scale="jac",
                ftol=config.convergence_tol,
                xtol=config.convergence_tol,
                gtol=config.convergence_tol,
                max_nfev=config.max_iterations,
                args=args,
            )
        except (ValueError, np.linalg.LinAlgError) as exc:
            logger.debug("Start %d failed: %s", index, exc)
            continue

        x, value = _snap_to_bounds(np.clip(solution.x, lo, hi), lo, hi, objective)
        if not history or value < history[-1]:
            history.append(value)
        params = _unpack(x, m_poles).sorted_poles()
        model = complex_permittivity(params, spectrum.grid.points)
        rms_dc, rms_lf = _rms_relative(model[usable], measured)
        result = FitResult(
            params=params,
            objective=value,
            rms_rel_error_dc=rms_dc,
            rms_rel_error_lf=rms_lf,
            converged=bool(solution.status > 0),
            iterations=max(len(history) - 1, 0),
            residuals=model - spectrum.complex_permittivity,
            history=tuple(history),
            start_index=index,
        )
        logger.debug("Start %d: objective %.6g (status %d)", index, value, solution.status)
        if best is None or result.objective < best.objective:
            best = result

    if best is None:
        raise FitError("all_starts_failed", "no start produced a fit")
    if not best.converged:
        logger.warning("Cole-Cole fit (M=%d) did not converge; returning best effort", m_poles)
    logger.info("Cole-Cole fit M=%d: objective %.6g from start %d", m_poles, best.objective, best.start_index)
    return best


def compare_pole_counts(
    spectrum: PermittivitySpectrum, m_max: int, config: FitConfig | None = None
) -> list[PoleCountRow]:
    """Fit M = 1..m_max; each fit is warm-started from the previous one plus a null pole."""
    if m_max < 1:
        raise FitError("invalid_poles", "m_max must be >= 1")
    config = config or FitConfig()
    rows: list[PoleCountRow] = []
    previous: FitResult | None = None
    mid_tau = 1.0 / float(np.sqrt(spectrum.grid.omega[0] * spectrum.grid.omega[-1]))
    tau_lo, tau_hi = config.bounds.tau_s
    null_pole = Pole(config.bounds.delta_eps[0], float(np.clip(mid_tau, tau_lo, tau_hi)), config.bounds.alpha[0])

    for m in range(1, m_max + 1):
        warm = [previous.params.with_extra_pole(null_pole)] if previous else None
        result = fit(spectrum, m, config, initial=warm)
        if previous is not None and result.objective > previous.objective:
            # The nested model reproduces the smaller one exactly.
            nested = previous.params.with_extra_pole(null_pole)
            result = FitResult(
                params=nested.sorted_poles(),
                objective=previous.objective,
                rms_rel_error_dc=previous.rms_rel_error_dc,
                rms_rel_error_lf=previous.rms_rel_error_lf,
                converged=previous.converged,
                iterations=0,
                residuals=previous.residuals,
                history=(previous.objective,),
            )
        rows.append(PoleCountRow(m, result.objective, result.rms_rel_error_dc, result.rms_rel_error_lf, result))
        previous = result
    return rows
