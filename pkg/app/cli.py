"""Command-line entry point: ``dielectric <subcommand> ...``.

Every failure ends in a single stderr line ``error <code>: <message>``.
Toolkit errors exit with status 1; usage errors exit with status 2.
"""

import logging
import sys
from argparse import ArgumentParser, Namespace
from dataclasses import replace
from pathlib import Path

import pandas as pd
from pydantic import BaseModel, model_validator

from app.core.config import settings
from app.core.errors import CommandError, DielectricError
from app.core.logging import configure_logging
from app.services import ingest
from app.services.campaign import CampaignService
from app.services.colecole import FitConfig, compare_pole_counts, evaluate, fit
from app.services.contrast import penetration_depth_spectrum
from app.services.probe_cal import (
    Standard,
    StandardKind,
    StandardMeasurement,
    drift_correct,
    invert_reflection,
    solve_calibration,
    validate_calibration,
)
from app.services.spectra import AcquisitionConfig, FrequencyGrid, PermittivitySpectrum, average_sweeps, crop
from app.services.synth import DEFAULT_PLAN, default_ground_truth, load_ground_truth, synth_campaign

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("calibrate", "invert", "fit", "diff", "report", "plotdata", "synth", "pendepth")


class UsageError(Exception):
    pass


class _Parser(ArgumentParser):
    def error(self, message):
        raise UsageError(message)


class CommandConfig(BaseModel):
    """Validated options of one invocation."""

    subcommand: str
    inputs: list[Path] = []
    output: Path | None = None
    calibration: Path | None = None
    band_ghz: tuple[float, float] | None = None
    m_poles: int = settings.fit_poles
    seed: int = settings.fit_seed
    starts: int = settings.fit_starts
    weighting: str = "relative"
    freqs_ghz: tuple[float, ...] = tuple(settings.report_freqs_ghz)
    fmt: str = "csv"

    @model_validator(mode="after")
    def _check(self) -> "CommandConfig":
        if self.subcommand not in SUBCOMMANDS:
            raise ValueError(f"unknown subcommand '{self.subcommand}'")
        if self.band_ghz is not None and not 0 < self.band_ghz[0] < self.band_ghz[1]:
            raise ValueError("--band needs 0 < LO < HI")
        if self.m_poles < 0 or self.starts < 1 or self.seed < 0:
            raise ValueError("--poles >= 0, --starts >= 1 and --seed >= 0 are required")
        if self.fmt == "xlsx" and self.output is None:
            raise ValueError("--format xlsx needs --output")
        return self

    def check_paths(self) -> None:
        for path in [*self.inputs, self.calibration]:
            if path is not None and not path.is_file():
                raise CommandError("missing_file", f"input file not found: {path}")

    def fit_config(self) -> FitConfig:
        return FitConfig.from_settings(n_starts=self.starts, rng_seed=self.seed, weighting=self.weighting)

    def band(self, spectrum: PermittivitySpectrum) -> PermittivitySpectrum:
        if self.band_ghz is None:
            return spectrum
        return crop(spectrum, self.band_ghz[0] * 1e9, self.band_ghz[1] * 1e9)


def _parse_freqs(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"--freqs must be a comma-separated list of GHz values, got '{text}'")


def _parse_band(text: str) -> tuple[float, float]:
    lo, sep, hi = text.partition(":")
    try:
        if not sep:
            raise ValueError
        return float(lo), float(hi)
    except ValueError:
        raise UsageError(f"--band expects LO_GHZ:HI_GHZ, got '{text}'")


def _parse_standard(text: str) -> tuple[Standard, Path]:
    """KIND=PATH or KIND@TEMP_C=PATH."""
    spec, sep, path = text.partition("=")
    if not sep or not path:
        raise CommandError("invalid_standard", f"--standard expects KIND=PATH, got '{text}'")
    name, _, temperature = spec.partition("@")
    try:
        kind = StandardKind(name.lower())
        temperature_c = float(temperature) if temperature else 25.0
    except ValueError:
        raise CommandError("invalid_standard", f"cannot parse standard '{spec}'")
    return Standard(kind, temperature_c), Path(path)


def build_parser() -> ArgumentParser:
    parser = _Parser(prog="dielectric", description="Colon tissue dielectric contrast toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level.")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    def band(p):
        p.add_argument("--band", type=_parse_band, metavar="LO_GHZ:HI_GHZ", help="Restrict to a sub-band.")

    def fit_options(p):
        p.add_argument("--poles", type=int, default=settings.fit_poles, help="Number of Cole-Cole poles.")
        p.add_argument("--seed", type=int, default=settings.fit_seed, help="Seed for randomised starts.")
        p.add_argument("--starts", type=int, default=settings.fit_starts, help="Number of optimiser starts.")

    p = sub.add_parser("calibrate", help="Solve a probe calibration from standard sweeps.")
    p.add_argument("--standard", action="append", required=True, metavar="KIND[@T]=PATH", help="Standard sweep (.s1p).")
    p.add_argument("--post-short", type=Path, help="Short re-measured after the session, for drift correction.")
    p.add_argument("--check", metavar="KIND[@T]=PATH", help="Check standard to validate the calibration with.")
    p.add_argument("-o", "--output", type=Path, required=True, help="Calibration document to write.")

    p = sub.add_parser("invert", help="Invert averaged sweeps to a permittivity CSV.")
    p.add_argument("sweeps", nargs="+", type=Path, help="Sweep files (.s1p) of one point.")
    p.add_argument("--cal", type=Path, required=True, help="Calibration document.")
    p.add_argument("--post-short", type=Path, help="Apply drift correction from this short sweep first.")
    p.add_argument("-o", "--output", type=Path, help="CSV to write (stdout if omitted).")
    band(p)

    p = sub.add_parser("fit", help="Fit a Cole-Cole model to a permittivity CSV.")
    p.add_argument("spectrum", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True, help="Parameter file to write.")
    p.add_argument("--model-csv", type=Path, help="Also write the model spectrum.")
    p.add_argument("--compare-poles", type=int, metavar="M_MAX", help="Print objectives for M = 1..M_MAX.")
    weighting = p.add_mutually_exclusive_group()
    weighting.add_argument("--relative", dest="weighting", action="store_const", const="relative")
    weighting.add_argument("--absolute", dest="weighting", action="store_const", const="absolute")
    fit_options(p)
    band(p)

    for name, text in (("diff", "Per-patient and group difference curves."), ("report", "Contrast table.")):
        p = sub.add_parser(name, help=text)
        p.add_argument("session", type=Path)
        p.add_argument("--cal", type=Path, help="Calibration overriding the session's own.")
        p.add_argument("-o", "--output", type=Path, help="File to write (stdout if omitted).")
        if name == "report":
            p.add_argument("--freqs", type=_parse_freqs, help="Spot frequencies in GHz, comma separated.")
            p.add_argument("--format", dest="fmt", choices=("csv", "table", "xlsx"), default="csv")

    p = sub.add_parser("plotdata", help="Group mean spectra with their Cole-Cole models.")
    p.add_argument("session", type=Path)
    p.add_argument("--cal", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True, help="Directory for the CSV files.")
    fit_options(p)

    p = sub.add_parser("synth", help="Generate a synthetic session from a ground-truth file.")
    p.add_argument("--truth", type=Path, help="Ground-truth file (shipped default if omitted).")
    p.add_argument("--seed", type=int, help="Override the truth rng_seed.")
    p.add_argument("--noise", type=float, help="Override noise_sigma_gamma.")
    p.add_argument("--points", type=int, default=AcquisitionConfig().n_points, help="Frequency points.")
    p.add_argument("-o", "--output", type=Path, required=True, help="Session document to write.")

    p = sub.add_parser("pendepth", help="Penetration depth vs frequency of a permittivity CSV.")
    p.add_argument("spectrum", type=Path)
    p.add_argument("-o", "--output", type=Path)
    band(p)
    return parser


def _config(args: Namespace) -> CommandConfig:
    inputs = []
    for name in ("sweeps",):
        inputs += getattr(args, name, None) or []
    for name in ("spectrum", "session", "truth", "post_short"):
        value = getattr(args, name, None)
        if value is not None:
            inputs.append(value)
    try:
        return CommandConfig(
            subcommand=args.subcommand,
            inputs=inputs,
            output=getattr(args, "output", None),
            calibration=getattr(args, "cal", None),
            band_ghz=getattr(args, "band", None),
            m_poles=getattr(args, "poles", settings.fit_poles),
            seed=settings.fit_seed if getattr(args, "seed", None) is None else args.seed,
            starts=getattr(args, "starts", settings.fit_starts),
            weighting=getattr(args, "weighting", None) or "relative",
            freqs_ghz=getattr(args, "freqs", None) or tuple(settings.report_freqs_ghz),
            fmt=getattr(args, "fmt", "csv"),
        )
    except ValueError as exc:
        errors = getattr(exc, "errors", None)
        message = errors()[0]["msg"] if callable(errors) else str(exc)
        raise UsageError(message.removeprefix("Value error, "))


def _emit(text: str, output: Path | None) -> None:
    if output is None:
        sys.stdout.write(text)
    else:
        output.write_text(text)


def _frame_text(df: pd.DataFrame) -> str:
    return df.to_csv(index=False, lineterminator="\n")


def _cmd_calibrate(args: Namespace, config: CommandConfig) -> None:
    standards = [_parse_standard(text) for text in args.standard]
    check = _parse_standard(args.check) if args.check else None
    config = config.model_copy(update={"inputs": [path for _, path in standards] + ([check[1]] if check else [])})
    config.check_paths()
    measurements = [StandardMeasurement(s, ingest.import_touchstone(path)) for s, path in standards]
    cal = solve_calibration(measurements)
    if args.post_short is not None:
        cal = drift_correct(cal, StandardMeasurement(Standard(StandardKind.SHORT), ingest.import_touchstone(args.post_short)))
    if check is not None:
        result = validate_calibration(cal, StandardMeasurement(check[0], ingest.import_touchstone(check[1])))
        print(f"check {check[0].kind.value}: max |Δε| {result.max_residual:.6g}, rms {result.rms_residual:.6g}")
    ingest.save_calibration(cal, config.output)


def _cmd_invert(args: Namespace, config: CommandConfig) -> None:
    cal = ingest.load_calibration(config.calibration)
    if args.post_short is not None:
        cal = drift_correct(cal, StandardMeasurement(Standard(StandardKind.SHORT), ingest.import_touchstone(args.post_short)))
    sweep = average_sweeps([ingest.import_touchstone(path) for path in args.sweeps])
    spectrum = config.band(invert_reflection(cal, sweep))
    ingest.export_csv_spectrum(spectrum, config.output or sys.stdout)


def _cmd_fit(args: Namespace, config: CommandConfig) -> None:
    spectrum = config.band(ingest.import_csv_spectrum(args.spectrum))
    fit_config = config.fit_config()
    if args.compare_poles:
        for row in compare_pole_counts(spectrum, args.compare_poles, fit_config):
            print(f"M={row.m_poles} objective={row.objective:.6g} rms_dc={row.rms_rel_error_dc:.4g} rms_lf={row.rms_rel_error_lf:.4g}")
    result = fit(spectrum, config.m_poles, fit_config)
    ingest.save_params(result.params, config.output, result, description=f"{config.m_poles}-pole fit of {args.spectrum.name}")
    if args.model_csv is not None:
        ingest.export_csv_spectrum(evaluate(result.params, spectrum.grid), args.model_csv)


def _load_session(config: CommandConfig, path: Path):
    session = ingest.load_session(path)
    cal = ingest.load_calibration(config.calibration) if config.calibration else None
    return session, cal


def _cmd_diff(args: Namespace, config: CommandConfig) -> None:
    session, cal = _load_session(config, args.session)
    _emit(_frame_text(CampaignService().difference_frame(session, cal)), config.output)


def _cmd_report(args: Namespace, config: CommandConfig) -> None:
    session, cal = _load_session(config, args.session)
    service = CampaignService(config.fit_config(), config.m_poles, config.freqs_ghz)
    table = service.generate_report(session, cal, fit_models=False).table
    if config.fmt == "xlsx":
        config.output.write_bytes(table.to_excel().getvalue())
    else:
        _emit(table.render(config.fmt), config.output)


def _cmd_plotdata(args: Namespace, config: CommandConfig) -> None:
    session, cal = _load_session(config, args.session)
    service = CampaignService(config.fit_config(), config.m_poles)
    for path in service.emit_plot_data(session, cal, config.output):
        print(path)


def _cmd_synth(args: Namespace, config: CommandConfig) -> None:
    truth = load_ground_truth(args.truth) if args.truth else default_ground_truth()
    overrides = {}
    if args.seed is not None:
        overrides["rng_seed"] = args.seed
    if args.noise is not None:
        overrides["noise_sigma_gamma"] = args.noise
    if overrides:
        truth = replace(truth, **overrides)
    grid = FrequencyGrid.linear(settings.band_lo_ghz * 1e9, settings.band_hi_ghz * 1e9, args.points)
    ingest.save_session(synth_campaign(truth, DEFAULT_PLAN, grid), config.output)


def _cmd_pendepth(args: Namespace, config: CommandConfig) -> None:
    spectrum = config.band(ingest.import_csv_spectrum(args.spectrum))
    depth = penetration_depth_spectrum(spectrum)
    frame = pd.DataFrame({"f_hz": spectrum.grid.points, "depth_m": depth})
    _emit(_frame_text(frame), config.output)


COMMANDS = {
    "calibrate": _cmd_calibrate,
    "invert": _cmd_invert,
    "fit": _cmd_fit,
    "diff": _cmd_diff,
    "report": _cmd_report,
    "plotdata": _cmd_plotdata,
    "synth": _cmd_synth,
    "pendepth": _cmd_pendepth,
}


def run(argv: list[str] | None = None) -> int:
    """Execute one command line; returns the process exit status."""
    try:
        args = build_parser().parse_args(argv)
        config = _config(args)
    except UsageError as exc:
        print(f"error cli.usage: {exc}", file=sys.stderr)
        return 2
    configure_logging("DEBUG" if args.verbose else settings.log_level)
    try:
        config.check_paths()
        COMMANDS[config.subcommand](args, config)
    except DielectricError as exc:
        print(f"error {exc.code}: {exc.message}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error cli.io: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
