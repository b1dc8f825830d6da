"""Inexact sketch-and-project solvers for consistent linear systems."""
