"""Simulation workbench for distributed quantum metrology with local control."""

__version__ = "0.1.0"
