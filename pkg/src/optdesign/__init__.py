"""D-optimal experimental designs on finite candidate sets.

The solver integrates the gradient flow of ``F(z) = E(z**2)`` with
backward-Euler steps solved by Newton's method, where
``E(w) = -log det(V^T diag(w) V) / N + ||w||_1``.
"""

from .compression import CompressedDesign, compress, nnls
from .core import (
    SUPPORT_RTOL,
    BasisSpec,
    CandidateSet,
    Design,
    InformationMatrix,
    VandermondeMatrix,
    build_vandermonde,
    energy_E,
    energy_F,
    gram_matrix,
    load_candidates_csv,
    read_design_csv,
    square,
    support_indices,
    uniform_sqrt_design,
    write_design_csv,
)
from .diagnostics import (
    ErrorEstimate,
    KKTReport,
    WellPosednessCertificate,
    convergence_rate,
    error_estimate,
    hessian_spectrum,
    kkt_report,
    kkt_residual,
    titterington_solve,
    titterington_step,
    wellposedness_probe,
)
from .errors import (
    DenseCapExceeded,
    IndefiniteHessian,
    InvalidConfig,
    MomentMismatch,
    NegativeWeight,
    NonConvergence,
    OptDesignError,
    RankDeficient,
    RestartBudgetExhausted,
    SupportRankDeficient,
    ZeroGradientStart,
)
from .experiments import (
    ExperimentConfig,
    gen_chebyshev_lobatto_grid,
    gen_disk_admissible_mesh,
    gen_gaussian_cloud,
    gen_uniform_cloud,
    preset,
    run_experiment,
)
from .flow import (
    DesignObjective,
    FlowParams,
    FlowResult,
    FlowTrace,
    newton_inner,
    solve_adaptive,
    solve_fixed_step,
)
from .kernels import (
    WeightedONB,
    bergman,
    grad_E,
    grad_F,
    hess_E,
    hess_F,
    weighted_onb,
)
from .regularization import (
    EtaSchedule,
    KernelProjector,
    Phi2Space,
    build_phi2,
    energy_F_eta,
    grad_F_eta,
    hess_F_eta,
    kernel_projector,
    solve_regularized,
)

__version__ = "0.1.0"
