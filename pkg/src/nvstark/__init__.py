"""NV-center spin levels, Stark-tuned dephasing and the fits that go with them."""

from .nvcore import (
    CONSTANTS,
    FieldVector,
    NVParameters,
    PhysicalConstants,
    PhysicsDomainError,
    SphericalDirection,
    UnitError,
    cartesian_to_spherical,
    convert_unit,
    spherical_to_cartesian,
)
from .hamiltonian import (
    EigenSystem,
    HamiltonianMatrix,
    NonHermitianError,
    ResonanceSet,
    StrongMixingError,
    build_electronic_hamiltonian,
    build_full_hamiltonian,
    eigensolve,
    mixing_angle,
    resonance_frequencies,
    transition_rate,
)
from .noise import NoisePath, OUParams, autocorrelation, sample_ou_path
from .coherence import (
    DecayCurve,
    NoiseEnvironment,
    TimeStepError,
    sensitivity_factors,
    simulate_sequence_mc,
    t2_echo_combined,
    t2_echo_electric,
    t2_echo_magnetic,
    t2_fid_combined,
    t2_fid_magnetic,
)
from .fitting import FitResult, GaussianDipModel, Spectrum, T2Series, nonlinear_least_squares
from .electrostatics import ElectrodeGeometry, point_charge_field, uniform_field_from_voltage

__version__ = "0.1.0"
