"""Birth-death gradient-flow sampling toolkit.

Three fidelities of the same dynamics: exact/grid-based mean-field solvers
on the 1D torus (`meanfield`), kernelized regularizations of the driving
energies (`kernels`, `meanfield`), and finite-N stochastic particle
samplers (`particles`), together with the distances and divergences used
to diagnose them (`metrics`) and a seeded batch-experiment runner
(`runner`, `cli`).
"""

__version__ = "0.1.0"

from .errors import ConfigError, DivergenceError, SolverAbort

__all__ = ["ConfigError", "DivergenceError", "SolverAbort", "__version__"]
