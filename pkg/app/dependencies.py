"""Dependency injection setup."""

from functools import lru_cache

from app.core.config import settings
from app.services.campaign import CampaignService
from app.services.colecole import FitConfig


@lru_cache
def get_fit_config() -> FitConfig:
    """Fit configuration from the application settings."""
    return FitConfig.from_settings(settings)


def get_campaign_service() -> CampaignService:
    """Get campaign service instance."""
    return CampaignService(
        fit_config=get_fit_config(),
        m_poles=settings.fit_poles,
        freqs_ghz=tuple(settings.report_freqs_ghz),
    )
