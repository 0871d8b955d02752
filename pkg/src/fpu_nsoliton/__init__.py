"""Numerical laboratory for FPU lattice solitary waves and asymptotic N-soliton states."""
__version__ = "0.1.0"
