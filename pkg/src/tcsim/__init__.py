"""Qubit chains coupled to quantized photon and phonon modes.

Modules
-------
fockspace    truncated tensor-product basis, sparse operators, states
hamiltonian  system description and the individual Hamiltonian terms
propagator   exact and Krylov time evolution, observables, analytic JCM
meanfield    c-number equations of motion under a product closure
analytics    envelope, revival, spectral-peak and line-shape fits
cli          config-driven experiments (``tcsim`` console script)
"""
from .errors import (BasisMismatchError, CapacityError, ConfigError, ConvergenceError,
                     CutoffError, InsufficientDataError, TCSimError)
from .fockspace import (BasisIndex, Boundary, ModeKind, ModeSpec, QubitChainSpec,
                        SparseOperator, StateVector, build_basis)
from .hamiltonian import CouplingSpec, SystemSpec, assemble_total, build_terms, jcm_spec
from .propagator import (Engine, EvolutionConfig, TimeSeries, evolve, jcm_sigma_z_analytic,
                         product_initial_state, revival_time, trajectory)

__version__ = "0.1.0"
