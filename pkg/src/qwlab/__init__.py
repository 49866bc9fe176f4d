"""Numerical laboratory for 1D coined quantum walks with substitution coins."""

from .substitution import (
    FIBONACCI,
    THUE_MORSE,
    CoinAngles,
    ResourceCapError,
    SubshiftWindow,
    SubstitutionRule,
    angle_at,
    apply_substitution,
    fixed_point_prefix,
    is_legal_factor,
    iterate,
    sequence_window,
)
from .walk import (
    CoinBank,
    ExponentEstimate,
    ProbabilityProfile,
    TimeAveragedProfile,
    WalkState,
    apply_walk,
    build_coins,
    constant_rotation_bank,
    evolve,
    identity_profiles,
    moment,
    moment_series,
    required_l_max,
    rotation_coin,
    time_averaged_profile,
    transport_exponent_estimate,
)
from .transfer import (
    SpectralParameter,
    WindowBoundReport,
    check_commutation_identity,
    one_step_matrix,
    operator_norm,
    product,
    propagate_solution,
    uniform_bound_scan,
    unimodular_inverse,
    verify_eigenrecursion,
    window_bound_scan,
)
from .resolvent import (
    CertificateReport,
    NeumannResult,
    ParsevalReport,
    TruncatedResolventProblem,
    moment_certificate,
    moment_certificates,
    neumann_oracle,
    parseval_check,
    resolvent_vector,
    resolvent_window_scan,
    solve_resolvent,
    squared_element,
    truncation_radius,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
