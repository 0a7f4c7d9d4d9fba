"""Spectral-Galerkin simulation and verification suite for the stochastic Cahn-Hilliard equation."""
__version__ = "0.1.0"
