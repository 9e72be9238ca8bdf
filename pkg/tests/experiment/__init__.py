"""Intentionally Empty."""
