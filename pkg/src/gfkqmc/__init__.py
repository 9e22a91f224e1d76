"""Generalized Feynman-Kac ground-state energies of few-body Coulomb systems.

Modules:
    system: particles, Born-Oppenheimer / non-Born-Oppenheimer specs, Coulomb potential.
    trial: guide functions with analytic drift and Laplacian.
    walk: drifted binomial random walks and the path functional.
    estimate: energies, properties, error bars and infinite-time extrapolation.
    quantities: ionization potential, dissociation energy, unit conversion.
    cli: configuration-driven command line front end.
"""

from .estimate import (
    EnergySeries,
    EnsembleResult,
    Extrapolation,
    energy_at_t,
    energy_series,
    extrapolate,
    extrapolate_ensemble,
    property_expectation,
    timestep_extrapolate,
    virial_ratio,
)
from .estimator import GFKEnergyEstimator, TransientExtrapolator
from .exceptions import (
    ConfigError,
    DegenerateEnsemble,
    FitFailed,
    GFKError,
    NonConverged,
    NonFiniteDrift,
    PathAborted,
    SingularConfiguration,
    UnitMismatch,
)
from .quantities import EnergyValue, Unit, apply_offset, dissociation_energy, ionization_potential, to_hartree, to_wavenumber
from .system import Mode, Particle, Scaling, SystemSpec, potential, walk_scales
from .trial import (
    AtomicProductTrial,
    CorrelatedExponentialTrial,
    CorrelatedTerm,
    GaussianTrial,
    TrialFunction,
    drift,
    lambda_T_estimate,
    local_energy,
)
from .walk import PathState, WalkParams, binomial_increment, run_ensemble, step

__version__ = "0.1.0"
