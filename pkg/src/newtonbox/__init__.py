"""Analytic integration of the Newton potential over axis-aligned boxes.

The package integrates monomial-weighted singular kernels (1/R in 3-D,
ln(X^2+Y^2) in 2-D) in closed form with exact rational coefficients,
evaluates the results in arbitrary precision, and couples the exact
near-field integrals with a solid-harmonics fast multipole method into a
free-space Poisson solver on Cartesian grids.
"""

from .exactmath import BigFloat, MultiIndex, Polynomial, Rational, rational

__all__ = [
    "BigFloat",
    "MultiIndex",
    "Polynomial",
    "Rational",
    "rational",
]

__version__ = "0.1.0"
