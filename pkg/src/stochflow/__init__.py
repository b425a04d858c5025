"""stochflow: stochastic semiflows at desk scale.

Simulates cocycles driven by two-sided Wiener paths in a spectral
truncation, constructs stationary random points, estimates Lyapunov
spectra with stable/unstable splittings, and verifies local invariant
manifold predicates numerically.
"""

from .noise import (
    CovarianceSpec,
    ExpWeight,
    WienerPath,
    coarsen,
    sample_path,
    shift,
    weighted_integral,
)
from .spectral import (
    ModeVec,
    OperatorSpec,
    basis_vec,
    dirichlet_box_operator,
    dirichlet_interval_operator,
    mode_vec,
    project,
    semigroup_apply,
    semigroup_inverse_minus,
    zero_vec,
)
from .semiflow import (
    CocycleTrajectory,
    NonlinearitySpec,
    SemiflowModel,
    backward_centered_eval,
    bounded_lipschitz_drift,
    burgers_drift,
    centered_eval,
    cocycle_eval,
    dissipative_reaction_drift,
    evolve,
    mode_callable_drift,
    pointwise_drift,
    tangent_eval,
    zero_drift,
)
from .stationary import (
    StationaryPoint,
    constant_stationary_point,
    contraction_constant,
    pullback_stationary,
    solve_fixed_point,
    stationarity_residual,
    stochastic_convolution,
)
from .spectrum import (
    LyapunovReport,
    SpectralGap,
    Splitting,
    dichotomy_check,
    hyperbolicity_gap,
    lyapunov_qr,
    split_subspaces,
)
from .manifolds import (
    HistoryChain,
    ManifoldAtlas,
    ManifoldParams,
    StableEvidence,
    build_unstable,
    classify_stable,
    find_stable_samples,
    stable_decay_rate,
    stable_invariance_check,
    stable_lipschitz_exponent,
    tangency_and_transversality,
    unstable_backward_rate,
    unstable_pairwise_rate,
)
from .config import ExperimentConfig, load_config, parse_config, preset_config, serialize_config
from .pipeline import run_pipeline, verify_suite

__version__ = "0.1.0"
