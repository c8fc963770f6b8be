"""Block-diagonal Lindblad-type rate equations on finite label spaces."""

from .state import (
    BlockDiagonalObservable,
    BlockDiagonalState,
    LabelSpace,
    StructureError,
    ValidationReport,
    label_weights,
    marginalize,
    pair,
    total_trace,
    validate,
)
from .generator import (
    GeneralizedLindbladGenerator,
    Jump,
    StateDerivative,
    apply_heisenberg,
    apply_schrodinger,
    jumps_from_kossakowski,
    zero_generator,
)
from .integrator import (
    EvolutionConfig,
    IntegrationError,
    InvariantBreach,
    TimeSeries,
    evolve,
    integrate_linear,
    step_rk4,
)
from .gas import (
    GasParameters,
    InternalLevels,
    RateCoefficientTable,
    ScatteringAmplitude,
    build_rate_table,
    dynamic_structure_factor,
    energy_transfer,
    maxwell_boltzmann,
    maxwell_boltzmann_2d,
    rate_coefficient,
    rel,
    sdf_identity_residual,
)
from .scenarios import (
    FrictionSpec,
    KickSpec,
    PreparationSpec,
    QuadratureSpec,
    build_bloch_boltzmann_generator,
    build_internal_coherence_generator,
    build_kick_coherence_ode,
    characteristic_function,
    coherence_decay_curve,
    momentum_lattice,
    radial_grid,
    thermal_state,
    visibility_decay,
)
from .oracles import (
    DecayCurve,
    GeometricFamily,
    gaussian_moment_identity_residual,
    lambda_power_law,
    lambda_stretched,
    loglog_slope,
    position_solution,
    psi_multiexponential,
)

__version__ = "0.1.0"
