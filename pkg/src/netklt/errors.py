"""Exception hierarchy shared by all netklt modules."""


class NetkltError(Exception):
    """Base class for all library errors."""


# --- graph errors -----------------------------------------------------------


class GraphError(NetkltError):
    pass


class CycleDetected(GraphError):
    pass


class SourceHasInEdge(GraphError):
    pass


class ReceiverHasOutEdge(GraphError):
    pass


class ZeroBandwidth(GraphError):
    pass


class UnknownNode(GraphError):
    pass


class SourceReceiverOverlap(GraphError):
    pass


class MissingPowerCap(GraphError):
    pass


class UnsupportedTopology(GraphError):
    pass


class MultiLayerUnsupported(GraphError):
    pass


# --- model errors -----------------------------------------------------------


class ModelError(NetkltError):
    pass


class GenerationFailed(ModelError):
    pass


class SingularSideInfo(ModelError):
    pass


class NonpositiveWeight(ModelError):
    pass


class NonGaussianModel(ModelError):
    pass


class TargetOutOfRange(ModelError):
    pass


# --- numerics / solver errors ----------------------------------------------


class DimensionMismatch(NetkltError):
    pass


class NotSymmetric(NetkltError):
    pass


class NotNilpotent(NetkltError):
    pass


class SolverError(NetkltError):
    pass


class InfeasibleConstraints(SolverError):
    pass


class Infeasible(SolverError):
    pass


class MaxIterExceeded(SolverError):
    pass


class NumericalFailure(SolverError):
    pass


class SingularInnovationGram(SolverError):
    pass


# --- configuration ----------------------------------------------------------


class ConfigError(NetkltError):
    """Bad experiment/graph configuration (missing file, bad schema, empty grid)."""
