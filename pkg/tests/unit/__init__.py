"""Unit tests for Cacau Show API services."""
