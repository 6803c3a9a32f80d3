"""Spectral toolkit for stochastic flows acting on differential forms."""
