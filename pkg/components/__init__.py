"""Components package for the inexact sketch-and-project trace viewer."""
