"""Typed records, reports and configuration."""
