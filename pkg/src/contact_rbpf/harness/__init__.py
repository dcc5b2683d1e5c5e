"""Scenarios, ground truth generation, filter runs, metrics and the CLI."""
