"""Multifractality of coherent states in a spin-boson model at system scale j.

Submodules
----------
model         basis enumeration, parity blocks, dense spectra
coherent      product coherent states and eigenbasis expansions
classical     mean-field trajectories and surface sections
multifractal  IPR_q, mass exponents, dimension fits, synthetic oracles
cache         content-addressed spectrum store
pipeline      batch experiment drivers and CSV emitters
cli           command-line entry point
"""

from .model import (
    ModelParams,
    SpectralData,
    build_hamiltonian,
    converged_count,
    diagonalize,
    ground_energy_intensive,
    params_digest,
    solve_block,
)
from .coherent import (
    EigenExpansion,
    PhaseSpacePoint,
    basis_coeffs,
    classical_energy,
    eigen_expansion,
    solve_xplus,
    surface_sample,
)
from .classical import integrate_trajectory, poincare_section
from .multifractal import (
    fit_tau,
    ipr_q,
    mass_exponents,
    pdos_q,
    synth_random_gaussian,
    synth_sequence_state,
)
from .cache import SpectrumCache

__version__ = "0.1.0"
