"""Exception hierarchy shared by the whole engine."""


class QcheckError(Exception):
    """Base class for all engine errors."""


class ModelSyntaxError(QcheckError):
    """Malformed input document; carries a human-readable position."""

    def __init__(self, message, position=None):
        self.position = position
        if position is not None:
            message = f"{message} (at {position})"
        super().__init__(message)


class ModelTypeError(QcheckError):
    """Expression or declaration is ill-typed."""


class UnsupportedFeatureError(QcheckError):
    """Input uses a feature outside the supported JANI subset."""

    def __init__(self, feature, location=""):
        self.feature = feature
        self.location = location
        where = f" at {location}" if location else ""
        super().__init__(f"unsupported-feature: {feature}{where}")


class InvariantViolation(QcheckError):
    """A structural model invariant does not hold."""


class StateDomainError(QcheckError):
    """An assignment pushed a bounded variable outside its domain."""

    def __init__(self, variable, value, lo, hi, state=None):
        self.variable = variable
        self.value = value
        self.state = state
        super().__init__(
            f"state-domain violation: {variable}={value} outside [{lo},{hi}]"
            + (f" in state {state}" if state is not None else "")
        )


class QueryError(QcheckError):
    """Query text does not match the documented grammar."""


class BudgetExceededError(QcheckError):
    """State-space budget exhausted; carries the partial state count."""

    def __init__(self, partial_count, max_states):
        self.partial_count = partial_count
        self.max_states = max_states
        super().__init__(
            f"state-space budget exhausted: {partial_count} states explored, "
            f"limit {max_states}"
        )


class SolverError(QcheckError):
    """Numeric solving failed in a way that is not a non-convergence result."""


class InfiniteRewardError(QcheckError):
    """A positive-reward end component makes the expected reward infinite."""
