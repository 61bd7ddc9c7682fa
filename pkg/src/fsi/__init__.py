"""Monolithic Lagrangian fluid-structure interaction solver."""
