"""Driven vibronic monomer dynamics with photon/phonon correlation functions."""

__version__ = "0.1.0"

from .bath import (
    BathParams,
    ExponentialMode,
    expansion_coeffs,
    matsubara_tail,
    spectral_density,
)
from .config import ConfigError, RunConfig, parse_config
from .correlations import (
    CorrelationTrace,
    MonomerSimulation,
    SteadyStateNotFound,
    classify_bunching,
    detection_probability,
    detection_series,
    g1,
    g2,
    normalization_reference,
    seed,
    steady_state_time,
    zero_delay_cross_series,
)
from .heom import (
    AdoHierarchy,
    HeomPropagator,
    HierarchyIndex,
    HierarchySpace,
    PropagationError,
    PropagatorConfig,
    Trajectory,
    enumerate_hierarchy,
    equilibrate,
    hierarchy_generator,
    hierarchy_rhs,
    load_checkpoint,
    propagate,
    save_checkpoint,
)
from .model import (
    BasisTransform,
    DensityMatrix,
    Drive,
    OperatorSet,
    VibronicParams,
    adiabatize,
    build_system,
    drive_hamiltonian,
    ladder_ops,
    thermal_state,
)
from .oracle import (
    OracleReport,
    piecewise_exponential_step,
    run_oracle_suite,
    unitary_two_time,
)
from .traceio import read_trace, render_svg, write_trace
