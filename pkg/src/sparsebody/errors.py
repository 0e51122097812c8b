"""Exception hierarchy shared by all sparsebody modules."""


class SparseBodyError(Exception):
    """Base class for everything raised on purpose by this package."""


class InvalidArgumentError(SparseBodyError):
    """An argument violates a documented precondition."""


class ValidationError(SparseBodyError):
    """Data fails a structural invariant (bad mesh, bad model, bad file)."""


class ObjParseError(ValidationError):
    """A Wavefront OBJ record could not be parsed.

    Carries the 1-based line number of the offending record.
    """

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class UnreachableVertexError(SparseBodyError):
    """A vertex cannot be reached from the seed set along mesh edges."""

    def __init__(self, vertex: int):
        super().__init__(f"vertex {vertex} is unreachable from the seed set")
        self.vertex = vertex


class NumericalError(SparseBodyError):
    """A numerical failure (NaN or overflow) was detected during optimization."""
