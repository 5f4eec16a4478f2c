# kpitrack/__init__.py
"""Extracción y seguimiento longitudinal de KPIs en transcripciones de earnings calls."""

__version__ = "0.1.0"
