"""Exception types raised by the library.

Every rejected input or failed contract maps to a named error so callers
can branch on the failure mode instead of parsing messages.
"""


class NetadaptError(Exception):
    """Base class for all library errors."""


class GraphValidationError(NetadaptError):
    """Invalid graph data (base for the specific rejection reasons)."""


class SelfLoopError(GraphValidationError):
    pass


class DuplicateEdgeError(GraphValidationError):
    pass


class NonpositiveLengthError(GraphValidationError):
    pass


class NegativeConductivityError(GraphValidationError):
    pass


class UnknownVertexError(GraphValidationError):
    pass


class PartitionError(NetadaptError):
    """Vertex partition does not cover the vertex set or overlaps."""


class SourceCompatibilityError(NetadaptError):
    """Source/sink vector does not sum to zero within tolerance."""


class DisconnectedSupportError(NetadaptError):
    """Vertices carrying nonzero sources are not mutually connected."""

    def __init__(self, message, components=None):
        super().__init__(message)
        self.components = components or []


class SolverError(NetadaptError):
    """Linear solve failed to meet its residual contract."""


class GradientSingularityError(NetadaptError):
    """Energy gradient requested where it is singular (C = 0, gamma < 1)."""


class StepFailureError(NetadaptError):
    """Backtracking line search underflowed without an acceptable step."""


class ConnectivityViolationError(NetadaptError):
    """Pruning would disconnect vertices that carry nonzero sources."""


class BoundNotApplicableError(NetadaptError):
    """Cut bound requested for a partition with zero net flux."""


class GridFieldError(NetadaptError):
    """Field data inconsistent with its grid."""


class DegeneratePermeabilityError(NetadaptError):
    """Permeability coefficient not uniformly positive."""


class NonFiniteFieldError(NetadaptError):
    """A field or pressure value became NaN or infinite."""


class StabilityError(NetadaptError):
    """Explicit time step violates the diffusion stability restriction."""


class DissipationViolationError(NetadaptError):
    """Recorded energy trace violates the dissipation inequality."""


class ConfigError(NetadaptError):
    """Scenario or solver configuration is invalid."""
