"""rieszheat: numerical laboratory for heat equations driven by Riesz-kernel noise.

Submodules
----------
kernels    closed-form kernels, spectral constants, special integrals
noise      spectral sampling of the space-time noise on a torus lattice
oracle     exact second-order theory of the constant-coefficient solution
solver     exponential-Euler time stepping of the nonlinear system
potential  energies, capacities, Hausdorff covers, box-counting dimension
hitting    hitting-probability and fractal-dimension experiments
cli        command-line entry point and report emission
"""

from .kernels import NoiseParams, PotentialKernelConfig

__version__ = "0.1.0"

__all__ = ["NoiseParams", "PotentialKernelConfig", "__version__"]
