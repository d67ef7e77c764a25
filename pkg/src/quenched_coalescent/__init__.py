"""Structured Wright-Fisher populations in a stationary random environment.

Quenched / annealed coalescent effective population sizes, the n-lineage
configuration chain, and a backward-in-time genealogy simulator.
"""

__version__ = "0.1.0"

from .model import (
    Constant,
    EnvironmentSpec,
    EnvironmentStream,
    IIDWeights,
    IslandStructure,
    MarkovChain,
    condition_checks,
    effective_migration,
    island_blocks,
    sample_env_stream,
    validate,
)
from .ergodics import (
    EPSReport,
    NonConvergenceError,
    StationaryVectorEstimate,
    backward_stationary,
    c_f_factor,
    ergodic_average_cq,
    estimate_eps,
    forward_product,
)

__all__ = [
    "Constant",
    "EnvironmentSpec",
    "EnvironmentStream",
    "IIDWeights",
    "IslandStructure",
    "MarkovChain",
    "condition_checks",
    "effective_migration",
    "island_blocks",
    "sample_env_stream",
    "validate",
    "EPSReport",
    "NonConvergenceError",
    "StationaryVectorEstimate",
    "backward_stationary",
    "c_f_factor",
    "ergodic_average_cq",
    "estimate_eps",
    "forward_product",
]
