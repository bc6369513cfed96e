"""Colon dielectric contrast toolkit."""
