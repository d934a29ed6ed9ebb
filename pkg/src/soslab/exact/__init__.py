"""Exhaustive computations on small instances: partition functions, stationary
measures, generator spectra, bottleneck ratios and path congestion."""

from .clusters import (ExpansionCheck, RegimeError, cluster_bound_log, cluster_expansion_check,
                       cluster_weight, two_contour_clusters)
from .enumeration import (DEFAULT_STATE_CAP, ExactModel, ResourceError, enumerate_model, enumerate_states,
                          state_count, tv_marginal_distance)
from .partition import (ConvergenceError, PartitionFunctionFamily, PFValue, RenormalizedSum, RNResult,
                        ceiling_tail_log_factor, elementary_partition_function, log_Z, log_Z_bd,
                        partition_family, partition_function, renormalized_bruteforce,
                        renormalized_partition_function, renormalized_weight, truncated_weight)
from .spectral import (GapResult, ReducibleChainError, bottleneck_ratio, cheeger, cheeger_exact, congestion,
                       raw_gap, spectral_gap)
from .transfer import log_partition

__all__ = [
    "DEFAULT_STATE_CAP", "ConvergenceError", "ExactModel", "ExpansionCheck", "GapResult", "PFValue",
    "PartitionFunctionFamily", "RNResult", "ReducibleChainError", "RegimeError", "RenormalizedSum",
    "ResourceError", "bottleneck_ratio", "ceiling_tail_log_factor", "cheeger", "cheeger_exact",
    "cluster_bound_log", "cluster_expansion_check", "cluster_weight", "congestion",
    "elementary_partition_function", "enumerate_model", "enumerate_states", "log_Z", "log_Z_bd",
    "log_partition", "partition_family", "partition_function", "raw_gap", "renormalized_bruteforce",
    "renormalized_partition_function", "renormalized_weight", "spectral_gap", "state_count",
    "truncated_weight", "tv_marginal_distance", "two_contour_clusters",
]
