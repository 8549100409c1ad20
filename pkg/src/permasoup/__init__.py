"""Permanental processes, Markov loop soups and entropy-integral certificates on finite sets."""

__version__ = "0.1.0"

from .kernel import IndexSet, Kernel, MetricTable, metric, validate_kernel  # noqa: E402
from .chain import ChainSpec, compute_u1, compute_uT0, h_transform  # noqa: E402
from .moments import (alpha_permanent_moment, laplace_transform, loop_measure_moment,  # noqa: E402
                      partition_moment, raw_moment)
from .entropy import ProbabilityWeights, entropy_integral, entropy_profile  # noqa: E402

__all__ = [
    "IndexSet", "Kernel", "MetricTable", "metric", "validate_kernel",
    "ChainSpec", "compute_u1", "compute_uT0", "h_transform",
    "alpha_permanent_moment", "laplace_transform", "loop_measure_moment", "partition_moment",
    "raw_moment", "ProbabilityWeights", "entropy_integral", "entropy_profile",
]
