"""Ingestion, orchestration and the command-line interface."""
