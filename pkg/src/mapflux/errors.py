"""Exception hierarchy for the package.

Every error raised by the library derives from ``MapfluxError`` so callers
(and the CLI) can distinguish validation problems from genuine bugs.
"""


class MapfluxError(Exception):
    """Base class for all library errors."""


class ValidationError(MapfluxError):
    """A model or argument violates a structural invariant."""


class ParseError(MapfluxError):
    """A model file or CLI literal could not be parsed."""


class PoleError(MapfluxError):
    """A moment transform was evaluated at (or too close to) a pole."""


class DomainError(MapfluxError):
    """An argument lies outside the domain of validity of a formula."""


class DegenerateError(MapfluxError):
    """A phase carries a constant (no drift, no noise, no jumps) component."""


class SingularError(MapfluxError):
    """A linear system is numerically rank deficient beyond tolerance."""


class MultiplicityError(MapfluxError):
    """The determinant spectrum is not semi-simple (root collision)."""


class CountError(MapfluxError):
    """The right-half-plane determinant root count differs from the phase count."""


class ConvergenceError(MapfluxError):
    """An iterative solver failed to converge within its iteration budget."""


class IllConditionedError(MapfluxError):
    """An eigenvector basis is too ill conditioned to trust."""


class DriftError(MapfluxError):
    """A computation requires positive stationary drift and it is not."""


class NearSingularError(MapfluxError):
    """Evaluation point too close to a determinant root or matrix eigenvalue."""


class ClassError(MapfluxError):
    """A phase does not belong to the class required by the operation."""


class UnsupportedError(MapfluxError):
    """The request is valid mathematics but outside what the package supports."""


class InsufficientSamplesError(MapfluxError):
    """A conditioning event produced too few samples for a reliable estimate."""
