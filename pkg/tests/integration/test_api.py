"""Integration tests for API endpoints."""

import json
import re
from datetime import datetime
from io import BytesIO, StringIO

import httpx
import numpy as np
import pandas as pd
import pytest
from fastapi.testclient import TestClient

from app.main import app
from app.services.campaign import Session
from app.services.ingest import export_csv_spectrum, session_to_document
from app.services.spectra import FrequencyGrid, PermittivitySpectrum


@pytest.fixture
def session_json(table_session: Session) -> bytes:
    return session_to_document(table_session).model_dump_json().encode()


@pytest.fixture
def flat_csv() -> bytes:
    grid = FrequencyGrid.linear(1e9, 20e9, 20)
    spectrum = PermittivitySpectrum(grid, np.full(20, 12.5), np.zeros(20))
    buffer = StringIO()
    export_csv_spectrum(spectrum, buffer)
    return buffer.getvalue().encode()


class TestHealthEndpoint:
    """Tests for /health endpoint."""

    def test_health_check(self, client: TestClient):
        """Test GET /health returns healthy status."""
        response = client.get("/health")

        assert response.status_code == 200
        data = response.json()
        assert data["status"] == "healthy"
        assert "version" in data


class TestRootEndpoint:
    """Tests for / endpoint."""

    def test_root_endpoint(self, client: TestClient):
        """Test GET / returns app info."""
        response = client.get("/")

        assert response.status_code == 200
        data = response.json()
        assert "app" in data
        assert "version" in data
        assert data["docs"] == "/docs"


class TestCampaignReportEndpoint:
    """Tests for /api/campaign/report endpoint."""

    def test_report_csv(self, client: TestClient, session_json: bytes, table_csv: str):
        """Test POST /api/campaign/report returns the contrast table as CSV."""
        response = client.post(
            "/api/campaign/report",
            params={"format": "csv"},
            files={"session_file": ("session.json", session_json)},
        )

        assert response.status_code == 200
        assert response.headers["content-type"].startswith("text/csv")
        assert response.text == table_csv

    def test_report_xlsx_default(self, client: TestClient, session_json: bytes):
        """Test that the default format is an Excel workbook."""
        response = client.post("/api/campaign/report", files={"session_file": ("session.json", session_json)})

        assert response.status_code == 200
        assert (
            response.headers["content-type"]
            == "application/vnd.openxmlformats-officedocument.spreadsheetml.sheet"
        )
        df = pd.read_excel(BytesIO(response.content), sheet_name="Contrast", dtype=str)
        assert df.iloc[0]["scenario"] == "Ex vivo"
        assert df.iloc[2]["note"] == "single patient"

    def test_report_filename_contains_date_and_session(self, client: TestClient, session_json: bytes):
        """Test Content-Disposition carries the date and the session id."""
        response = client.post(
            "/api/campaign/report",
            params={"format": "csv"},
            files={"session_file": ("session.json", session_json)},
        )

        disposition = response.headers["content-disposition"]
        today = datetime.now().strftime("%Y-%m-%d")
        assert re.search(rf"contrast_report_{today}_table-fixture\.csv", disposition)

    def test_report_no_file(self, client: TestClient):
        """Test POST /api/campaign/report without a file returns a validation error."""
        response = client.post("/api/campaign/report")

        assert response.status_code == 422

    def test_report_bad_format(self, client: TestClient, session_json: bytes):
        """Test that an unknown format is refused by validation."""
        response = client.post(
            "/api/campaign/report",
            params={"format": "pdf"},
            files={"session_file": ("session.json", session_json)},
        )

        assert response.status_code == 422

    def test_report_unsupported_version(self, client: TestClient, session_json: bytes):
        """Test that a toolkit error is returned with its code."""
        document = json.loads(session_json)
        document["schema_version"] = 2
        response = client.post(
            "/api/campaign/report",
            files={"session_file": ("session.json", json.dumps(document).encode())},
        )

        assert response.status_code == 422
        assert response.json()["code"] == "campaign.unsupported_version"

    def test_report_unknown_status_label(self, client: TestClient, session_json: bytes):
        """Test that an unknown tissue status gives a 422 with the corrupt-document code."""
        document = json.loads(session_json)
        document["points"][0]["status"] = "bogus"
        response = client.post(
            "/api/campaign/report",
            files={"session_file": ("session.json", json.dumps(document).encode())},
        )

        assert response.status_code == 422
        assert response.json()["code"] == "campaign.corrupt_document"


class TestFitEndpoint:
    """Tests for /api/spectra/fit endpoint."""

    def test_fit_flat_spectrum(self, client: TestClient, flat_csv: bytes):
        """Test that a flat lossless spectrum fits to ε∞ with no poles."""
        response = client.post(
            "/api/spectra/fit",
            params={"poles": 0, "starts": 1},
            files={"spectrum_file": ("flat.csv", flat_csv)},
        )

        assert response.status_code == 200
        data = response.json()
        assert data["m_poles"] == 0
        assert data["n_points"] == 20
        assert data["params"]["poles"] == []
        assert data["params"]["eps_inf"] == pytest.approx(12.5, rel=1e-9)

    def test_fit_too_many_poles(self, client: TestClient, flat_csv: bytes):
        """Test that more than four poles is refused."""
        response = client.post(
            "/api/spectra/fit",
            params={"poles": 5},
            files={"spectrum_file": ("flat.csv", flat_csv)},
        )

        assert response.status_code == 422

    def test_fit_missing_columns(self, client: TestClient):
        """Test that a CSV without the loss column reports its code."""
        response = client.post(
            "/api/spectra/fit",
            files={"spectrum_file": ("bad.csv", b"f_hz,eps_real\n1e9,10\n2e9,10\n")},
        )

        assert response.status_code == 422
        assert response.json()["code"] == "ingest.missing_columns"


class TestPenetrationDepthEndpoint:
    """Tests for /api/spectra/penetration-depth endpoint."""

    def test_depth_csv(self, client: TestClient, tissue_spectrum: PermittivitySpectrum):
        """Test one depth per frequency, in metres."""
        buffer = StringIO()
        export_csv_spectrum(tissue_spectrum, buffer)
        response = client.post(
            "/api/spectra/penetration-depth",
            files={"spectrum_file": ("tissue.csv", buffer.getvalue().encode())},
        )

        assert response.status_code == 200
        df = pd.read_csv(StringIO(response.text))
        assert list(df.columns) == ["f_hz", "depth_m"]
        assert len(df) == len(tissue_spectrum)
        assert (df["depth_m"] > 0).all()

    async def test_depth_async_client(self, flat_csv: bytes):
        """Test the endpoint through an async client; a lossless medium has infinite depth."""
        transport = httpx.ASGITransport(app=app)
        async with httpx.AsyncClient(transport=transport, base_url="http://test") as client:
            response = await client.post(
                "/api/spectra/penetration-depth",
                files={"spectrum_file": ("flat.csv", flat_csv)},
            )

        assert response.status_code == 200
        df = pd.read_csv(StringIO(response.text))
        assert np.isinf(df["depth_m"]).all()
