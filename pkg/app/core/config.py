"""Application configuration settings."""

from pathlib import Path

from pydantic_settings import BaseSettings

DATA_DIR = Path(__file__).resolve().parent.parent / "data"


class Settings(BaseSettings):
    """Application settings."""

    app_name: str = "Colon Dielectric Contrast API"
    app_version: str = "1.0.0"
    debug: bool = False
    log_level: str = "INFO"
    cors_origins: str = "http://localhost:3000,http://127.0.0.1:3000"

    data_dir: Path = DATA_DIR
    reference_liquids_file: str = "reference_liquids.json"
    colecole_init_file: str = "colecole_init.json"
    ground_truth_file: str = "ground_truth.json"

    # Reporting band and spot frequencies
    band_lo_ghz: float = 0.5
    band_hi_ghz: float = 26.5
    report_freqs_ghz: list[float] = [2.45, 12.5, 18.0]

    # Cole-Cole fit defaults
    fit_poles: int = 2
    fit_starts: int = 4
    fit_seed: int = 0
    fit_max_iterations: int = 1000
    alpha_max: float = 0.3

    class Config:
        env_file = ".env"
        env_prefix = "DIELECTRIC_"

    @property
    def reference_liquids_path(self) -> Path:
        return self.data_dir / self.reference_liquids_file

    @property
    def colecole_init_path(self) -> Path:
        return self.data_dir / self.colecole_init_file

    @property
    def ground_truth_path(self) -> Path:
        return self.data_dir / self.ground_truth_file


settings = Settings()
