"""Experiment surface: metrics, ingestion, configuration and the CLI."""
