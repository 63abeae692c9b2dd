"""monodrift package.

This package provides spectral-Galerkin simulation, pull-back stationary
solutions, rate functions by optimal control and Monte Carlo large-deviation
probes for SPDEs with locally monotone coefficients.
"""

__version__ = "0.1.0"
