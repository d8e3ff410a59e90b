"""Verify-and-reconstruct engine for submanifolds of S^k x H^m products.

The package checks the compatibility equations of candidate submanifold data
on a rectangular chart and, when they hold, rebuilds the immersion by
parallel transport in a flat Lorentzian bundle, then validates the rebuild
against the original data up to an ambient isometry.
"""

__version__ = "0.1.0"
