"""Multiscale flatness coefficients for discrete measures."""
