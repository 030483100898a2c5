"""Numerical Aubry-Mather theory for monotone lattice variational problems."""

__version__ = "0.1.0"
