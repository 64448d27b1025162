"""HEOM propagation of a laser-driven two-level system in a structured bath,
with dynamical-map tomography and volume-based non-Markovianity analysis."""

__version__ = "0.1.0"
