"""Lattice Boltzmann solver on NURBS-parameterized body-fitted grids.

Subpackage map:

- ``nurbs``: spline/NURBS basis, patches, geometry builders
- ``operators``: collocation matrices, differentiation operators, metrics
- ``lattice``: D2Q9 velocity set, equilibrium, moments, relaxation time
- ``solver``: semi-discrete RHS, RK4 stepping, boundary conditions, run loop
- ``benchmarks``: Taylor-Green vortex and lid-driven cavity cases
- ``io_cli``: configuration files, VTK/CSV output, command-line driver
"""

from .nurbs import (
    GeometryError,
    KnotVector,
    NurbsPatch2D,
    SingularMapError,
    build_geometry,
)

__version__ = "0.1.0"

__all__ = [
    "GeometryError",
    "SingularMapError",
    "KnotVector",
    "NurbsPatch2D",
    "build_geometry",
    "__version__",
]
