"""Hydraulic and chlorine-quality control toolkit for water distribution networks."""

__version__ = "0.1.0"
