"""Floquet-Bloch modes, spectra and transport for spatiotemporally driven barrier lattices."""

__version__ = "0.1.0"
