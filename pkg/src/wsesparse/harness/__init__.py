"""Experiment harness: sweep specifications, point runners and the CLI."""
from .sweep import SweepSpec
