"""Torus-bundle ansatz for the anomaly-cancelling heterotic system.

Exact Picard-lattice arithmetic for K3 orbifolds, spectral exterior calculus
on the flat four-torus, fibered forms on T^2 bundles, Chern curvature of the
bordered metric, and a continuity-method solver for the reduced scalar
equation.
"""

from . import curvature, fibered, lattice, pipeline, solver, spectral

__all__ = ["curvature", "fibered", "lattice", "pipeline", "solver", "spectral"]
__version__ = "0.1.0"
