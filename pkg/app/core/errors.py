"""Exception hierarchy.

Every error raised by the services carries a module-qualified ``code`` such
as ``probe_cal.degenerate_system`` so the CLI and the API can surface it in a
machine-parsable form.
"""


class DielectricError(Exception):
    """Base class for all toolkit errors."""

    module = "app"

    def __init__(self, reason: str, message: str):
        super().__init__(message)
        self.reason = reason
        self.message = message

    @property
    def code(self) -> str:
        return f"{self.module}.{self.reason}"

    def __str__(self) -> str:
        return self.message


class SpectraError(DielectricError, ValueError):
    module = "spectra"


class CalibrationError(DielectricError, ValueError):
    module = "probe_cal"


class FitError(DielectricError, ValueError):
    module = "colecole"


class ContrastError(DielectricError, ValueError):
    module = "contrast"


class CampaignError(DielectricError, ValueError):
    module = "campaign"


class SessionVersionError(CampaignError):
    """Raised when a session document has an unsupported schema version."""


class IngestError(DielectricError, ValueError):
    module = "ingest"


class SynthError(DielectricError, ValueError):
    module = "synth"


class CommandError(DielectricError):
    module = "cli"
