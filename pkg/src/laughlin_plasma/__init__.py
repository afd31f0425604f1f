"""Plasma-analogy laboratory for Laughlin-type quantum Hall states.

Monte Carlo densities, ground-state configurations of the log gas, the 2D
Thomas-Fermi screening model, and the incompressibility checks built on them.
"""

__version__ = "0.1.0"

from .states import (Configuration, Identity, PlasmaParams, Prefactor, QuadraticExponential,
                     QuasiHoleProduct, SingularConfigurationError, log_gibbs_weight,
                     prefactor_log_modulus, scaled_gradient, scaled_hamiltonian)
from .gibbs_sampler import ChainSettings, DensityHistogram, disk_averages, run_chain
from .ground_state import MinimizeSettings, exclusion_check, minimize
from .tf_model import NucleiSet, tf_solve
from .incompressibility import TrapPotential, bathtub_energy, corollary_check

__all__ = [
    "Configuration", "Identity", "PlasmaParams", "Prefactor", "QuadraticExponential",
    "QuasiHoleProduct", "SingularConfigurationError", "log_gibbs_weight", "prefactor_log_modulus",
    "scaled_gradient", "scaled_hamiltonian", "ChainSettings", "DensityHistogram", "disk_averages",
    "run_chain", "MinimizeSettings", "exclusion_check", "minimize", "NucleiSet", "tf_solve",
    "TrapPotential", "bathtub_energy", "corollary_check",
]
