"""Scenario-based EV charging forecasts and feeder impact simulation."""

__version__ = "0.1.0"
