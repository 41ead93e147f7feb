"""Certified Lipschitz upper bounds for feed-forward ReLU-class networks.

The toolkit decomposes the whole-network matrix certificate into a
layer-by-layer recursion, estimates bounds with either per-layer LMI
solves (accurate) or a closed-form rule (fast), and replays every
certificate against two independent verifiers.
"""

from .cascade import (
    CascadeState,
    Certificate,
    ChainReport,
    MonolithicForm,
    MonolithicReport,
    assemble_monolithic,
    final_bound,
    load_certificate,
    next_F,
    next_M,
    save_certificate,
    verify_chain,
    verify_monolithic,
)
from .errors import (
    ConvergenceError,
    DegenerateLayerError,
    EstimateTimeout,
    LipcertError,
    NonFiniteError,
    NotPositiveDefiniteError,
    NotPsdError,
    NumericError,
    ParseError,
    ShapeError,
    SizeError,
    SolverError,
    VerificationError,
)
from .estimators import (
    EstimateOptions,
    LowerBoundReport,
    empirical_lower_bound,
    estimate,
    estimate_fast,
    estimate_sdp,
    estimate_trivial,
    split_compose,
)
from .netio import (
    ActivationBounds,
    CounterRng,
    LayerWeights,
    Network,
    from_weights,
    load_network,
    networks_equal,
    random_network,
    save_network,
)
from .sdpsolve import (
    LmiProblem,
    SdpSolution,
    build_layer_lmi,
    feasible_start,
    maximize_c,
    solve_joint_lipsdp,
)
from .spectral import (
    PdReport,
    SymMatrix,
    check_pd,
    min_eig_sym,
    solve_spd,
    spectral_norm,
    sym_eig,
    sym_sqrt_psd,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
