"""Numerical toolkit for the SL(2;C) anti-self-dual and Kapustin-Witten
equations on flat periodic domains."""

__version__ = "0.1.0"
