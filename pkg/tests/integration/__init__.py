"""Integration tests for Cacau Show API endpoints."""
