"""Test suite for Cacau Show API."""
