"""Homoclinic loops to a saddle in 4D conservative flows: maps, orbits and estimates."""

__version__ = '0.3.0'
