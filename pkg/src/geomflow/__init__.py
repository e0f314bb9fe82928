"""Geometry-preserving residual networks on constraint sets.

Subpackages and modules:

  geometry   constraint-set kernels (spheres, SO(3), SE(3), disk, products)
  liealg     so(3)/se(3) coordinates, exponentials, group steps
  dynamics   synthetic manifold dynamics and endpoint-pair datasets
  neuralnet  tape-based autodiff engine and the architecture family
  flowmatch  flow-matching velocity fields and learned projections
  oracles    independent numerical checks of the approximation guarantees
  harness    configuration, training loop, metrics, sweeps, and the CLI
"""

__version__ = "0.1.0"
