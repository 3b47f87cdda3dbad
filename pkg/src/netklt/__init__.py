"""netklt: reduced-dimension linear transform coding on acyclic networks.

Design per-edge compression matrices and receiver estimators that minimize
weighted mean-squared error over a DAG of vector channels, and certify the
results against cut-set lower bounds (closed-form, semidefinite relaxation,
and information-theoretic).
"""

from .graph import Cut, Edge, Layering, NetworkGraph
from .sources import InnovationPair, SourceModel, TargetSpec

__all__ = [
    "Cut",
    "Edge",
    "InnovationPair",
    "Layering",
    "NetworkGraph",
    "SourceModel",
    "TargetSpec",
]

__version__ = "0.1.0"
