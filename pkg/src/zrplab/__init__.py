"""Kinetic Monte Carlo laboratory for the asymmetric zero range process.

Particles on a periodic lattice hop with occupation-dependent rate g and a
finite-range asymmetric kernel p; time runs diffusively (sped up by N^2).
The package pairs an exact event-driven simulator with the analytic objects
it must reproduce: invariant-measure thermodynamics, spectral heat-equation
references for equilibrium perturbations, one-block observables, and exact
finite-block canonical-ensemble quantities.
"""

from .errors import ZrplabError
from .thermo import JumpKernel, RateFunction, ThermoFunctions, validate_rate_function

__version__ = "0.1.0"

__all__ = [
    "ZrplabError",
    "JumpKernel",
    "RateFunction",
    "ThermoFunctions",
    "validate_rate_function",
    "__version__",
]
