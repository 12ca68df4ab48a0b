"""Exception hierarchy for optdesign."""


class OptDesignError(Exception):
    """Base class for every error raised by this package."""

    code = "optdesign_error"

    def to_dict(self):
        return {"error": self.code, "message": str(self)}


class InvalidConfig(OptDesignError):
    code = "invalid_config"


class RankDeficient(OptDesignError):
    """The basis is not linearly independent on the candidate set."""

    code = "rank_deficient"

    def __init__(self, n_basis, rank):
        self.n_basis = n_basis
        self.rank = rank
        super().__init__(
            f"Vandermonde matrix has numerical rank {rank} < N = {n_basis}; "
            "the model is not identifiable on this candidate set"
        )


class NegativeWeight(OptDesignError):
    code = "negative_weight"

    def __init__(self, index):
        self.index = index
        super().__init__(f"design weight {index} is negative")


class SupportRankDeficient(OptDesignError):
    """The current design cannot identify the model (singular information matrix)."""

    code = "support_rank_deficient"


class IndefiniteHessian(OptDesignError):
    """Hessian of the step objective is not positive definite; shrink the time step."""

    code = "indefinite_hessian"


class ZeroGradientStart(OptDesignError):
    code = "zero_gradient_start"


class NonConvergence(OptDesignError):
    """Iteration budget exhausted. ``trace`` and ``z`` hold the best-so-far state."""

    code = "non_convergence"

    def __init__(self, message, trace=None, z=None):
        super().__init__(message)
        self.trace = trace
        self.z = z


class RestartBudgetExhausted(NonConvergence):
    code = "restart_budget_exhausted"


class MomentMismatch(OptDesignError):
    code = "moment_mismatch"

    def __init__(self, residual, scale):
        self.residual = residual
        self.scale = scale
        super().__init__(
            f"compressed moments differ by {residual:.3e} (moment scale {scale:.3e})"
        )


class DenseCapExceeded(OptDesignError):
    code = "dense_cap_exceeded"
