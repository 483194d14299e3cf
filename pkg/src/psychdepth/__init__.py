"""Measure how chat models' self-reported psychological traits shift over a
long two-agent conversation."""

__version__ = "0.1.0"
