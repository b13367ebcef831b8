"""Periodic simulation and state estimation for gas pipeline networks."""
from .errors import (
    GasPipeError,
    InfeasibleSteadyState,
    IntegrationFailure,
    InvalidArgument,
    NoPeriodicOrbit,
    SingularDerivative,
    TopologyError,
)
from .experiments import (
    BiasReport,
    ErrorReport,
    NoiseSpec,
    bias_study,
    builtin_fixture,
    error_report,
    estimate,
    grid_truth,
    sweep,
    synthesize,
)
from .network import Compressor, Junction, Network, Pipe, RefinedNetwork, incidence, refine, weighted_incidence
from .profiles import SinusoidProfile, SplineProfile, constant
from .scenario import Scenario
from .simulator import Trajectory, periodic_orbit, simulate, steady_state
from .solver import SolveOptions, SolveReport, default_start, solve
from .transcription import (
    MeasurementSet,
    NlpProblem,
    TimeGrid,
    build_joint_estimation,
    build_noiseless_ivp,
    build_state_estimation,
)
from .units import GasConstants

__version__ = "0.1.0"
