"""Exception hierarchy shared by the library and the CLI."""


class ErgoptError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ValidationError(ErgoptError, ValueError):
    """Invalid input: malformed point, config or observable spec."""

    exit_code = 1


class RepresentationMismatch(ValidationError, TypeError):
    """An observable was evaluated on a point of the wrong system kind."""


class TruncationError(ValidationError):
    """A shift operation needed symbols beyond the stored truncation depth."""


class BudgetExceeded(ValidationError):
    """An enumeration would exceed its configured size budget."""


class ConvergenceError(ErgoptError):
    """A numerical iteration failed to reach its tolerance."""

    exit_code = 2


class OverflowRisk(ConvergenceError):
    """Linear-domain transfer operator would overflow."""


class InfeasibleError(ErgoptError):
    """Perturbation constants do not satisfy the feasibility conditions."""

    exit_code = 3
