"""Exception hierarchy shared by all modules."""


class EnclosureError(Exception):
    """Base class for every error raised by the package."""


class DimensionError(EnclosureError, ValueError):
    pass


class DegenerateStateError(EnclosureError, ValueError):
    """Raised when a (clamped) operator has effectively zero trace."""


class BudgetExceededError(EnclosureError):
    """Raised when an exact sum over O^n would exceed the node budget."""

    def __init__(self, alphabet_size, depth, budget):
        self.alphabet_size = alphabet_size
        self.depth = depth
        self.budget = budget
        super().__init__(
            f"|O|^n = {alphabet_size}^{depth} = {alphabet_size ** depth} "
            f"exceeds the node budget {budget}"
        )


class TransientPartError(EnclosureError):
    """The channel has a non-trivial transient subspace.

    ``recurrent_projector`` is the projector onto the support of the
    maximal-rank invariant state that was found.
    """

    def __init__(self, min_eigenvalue, recurrent_projector):
        self.min_eigenvalue = min_eigenvalue
        self.recurrent_projector = recurrent_projector
        rank = int(round(recurrent_projector.trace().real))
        super().__init__(
            f"transient part detected: maximal invariant state has minimal "
            f"eigenvalue {min_eigenvalue:.3e}, recurrent rank {rank} < "
            f"{recurrent_projector.shape[0]}"
        )


class DecompositionError(EnclosureError):
    pass


class PeriodError(EnclosureError):
    pass


class NotInBlockError(EnclosureError, ValueError):
    pass


class ControllabilityError(EnclosureError):
    def __init__(self, rank, required):
        self.rank = rank
        self.required = required
        super().__init__(
            f"controllability refused: projected rank {rank}, required {required}"
        )


class ScenarioError(EnclosureError, ValueError):
    """Malformed scenario file; ``context`` names the offending field or line."""

    def __init__(self, message, context=None):
        self.context = context
        if context:
            message = f"{context}: {message}"
        super().__init__(message)


class ReportError(EnclosureError):
    pass


class SimulationError(EnclosureError):
    """Too many trajectories collapsed to a zero-trace state."""
