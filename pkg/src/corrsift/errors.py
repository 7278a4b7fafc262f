"""Exception hierarchy for corrsift."""


class CorrsiftError(Exception):
    """Base class for all library errors."""


class DimensionError(CorrsiftError, ValueError):
    pass


class InsufficientObservationsError(DimensionError):
    """Inference needs more observations than variables."""


class DegenerateVariableError(CorrsiftError, ValueError):
    def __init__(self, index: int, value: float):
        self.index = index
        self.value = value
        super().__init__(f"variable {index} has non-positive variance {value!r}")


class SingularMatrixError(CorrsiftError, ValueError):
    def __init__(self, message: str, ratio: float | None = None):
        self.ratio = ratio
        super().__init__(message)


class EmptyRegionError(CorrsiftError):
    """The constraint set {lam : L lam <= g} has no feasible point."""


class DegenerateRegionError(CorrsiftError):
    """The feasible region has zero volume in its ambient dimension."""


class SelectionMismatchError(CorrsiftError):
    """The tested group is not a component of the selection at the given threshold."""


class InsufficientAcceptanceError(CorrsiftError):
    def __init__(self, accepted: int, draws: int):
        self.accepted = accepted
        self.draws = draws
        self.rate = accepted / draws if draws else 0.0
        super().__init__(
            f"only {accepted} of {draws} null draws fell in the conditioning set "
            f"(acceptance rate {self.rate:.3g})"
        )
