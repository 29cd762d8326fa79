"""Non-parametric part-prototype learning engine and interpretability metrics.

Two-stage pipeline over precomputed patch-token features: stage 1 discovers
unit-norm part prototypes per class by balanced entropic optimal-transport
clustering with momentum updates; stage 2 fine-tunes a residual feature
adapter and per-prototype modulation weights around the frozen prototypes.
Ships with Distinctiveness/Comprehensiveness explanation metrics, a binary
feature-dump format (PTFD), and a CLI orchestrator.
"""

from .core import (
    FeatureBatch,
    PrototypeBank,
    SimilarityTensor,
    cosine_similarity,
    l2_normalize,
)
from .ptfd import read_ptfd, write_ptfd
from .sinkhorn import (
    HardAssignment,
    SinkhornConfig,
    TransportPlan,
    assignment_objective,
    harden_assignment,
    sinkhorn_plan,
)

__version__ = "0.1.0"

__all__ = [
    "FeatureBatch",
    "PrototypeBank",
    "SimilarityTensor",
    "cosine_similarity",
    "l2_normalize",
    "read_ptfd",
    "write_ptfd",
    "SinkhornConfig",
    "TransportPlan",
    "HardAssignment",
    "sinkhorn_plan",
    "harden_assignment",
    "assignment_objective",
    "__version__",
]
