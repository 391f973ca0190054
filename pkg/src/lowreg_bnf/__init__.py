"""Birkhoff normal forms for Hamiltonian PDEs in low regularity, on truncated lattices."""

__version__ = "0.1.0"
