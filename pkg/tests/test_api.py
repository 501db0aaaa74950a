"""Tests for the HTTP surface."""
import pytest
from fastapi.testclient import TestClient
from unittest.mock import patch

from tessera.main import app
from tessera.services.experiments import ExperimentResult


@pytest.fixture
def client():
    """Create a test client."""
    return TestClient(app)


class TestHealth:
    def test_root(self, client):
        response = client.get("/")
        assert response.status_code == 200
        assert response.json()["status"] == "online"
        assert response.json()["service"] == "Tessera"

    def test_health(self, client):
        assert client.get("/health").json() == {"status": "healthy"}


class TestExperiments:
    """Test POST /experiments/{command}."""

    def test_cross(self, client):
        response = client.post("/experiments/cross", json={"p": 1.0, "s": 6.0, "trials": 2, "master_seed": 3})
        assert response.status_code == 200
        data = response.json()
        assert data["command"] == "cross"
        assert len(data["rows"]) == 2
        assert all(row["Hb"] for row in data["rows"])
        assert data["summary"]["estimates"]["1.0"]["estimate"] == 1.0
        assert data["check_passed"] is None

    def test_path_overrides_body_command(self, client):
        response = client.post("/experiments/cross", json={"command": "faces", "p": 0.0, "s": 6.0, "trials": 1})
        assert response.json()["command"] == "cross"

    def test_unknown_metric(self, client):
        response = client.post("/experiments/cross", json={"metric": "chebyshev"})
        assert response.status_code == 422

    def test_unknown_command(self, client):
        assert client.post("/experiments/render", json={}).status_code == 422

    def test_domain_error_is_422(self, client):
        # on a torus of side below 1, delta' = s^(-eps') exceeds 1
        response = client.post("/experiments/couple", json={"s": 0.5, "trials": 1})
        assert response.status_code == 422
        assert "delta" in response.json()["detail"]

    def test_failed_check(self, client):
        failed = ExperimentResult("cross", {}, {}, check_passed=False, check_messages=["estimate off"])
        with patch("tessera.routers.experiments.run_experiment", return_value=failed):
            response = client.post("/experiments/cross", json={"check": True})
        assert response.status_code == 422
        assert response.json()["detail"] == "estimate off"


class TestRender:
    def test_svg(self, client):
        response = client.post("/render", json={"s": 6.0, "p": 0.5, "master_seed": 1})
        assert response.status_code == 200
        assert response.headers["content-type"].startswith("image/svg+xml")
        assert "<svg" in response.text and 'id="cells"' in response.text
