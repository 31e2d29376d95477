"""Numerical toolkit for Euclidean Gibbs measures of quantum anharmonic crystals."""

__version__ = "0.1.0"
