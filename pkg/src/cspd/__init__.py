"""Diffusion samplers with belief-propagation denoisers for random k-SAT and k-XORSAT."""

from .instance import (
    UNSET,
    FactorGraph,
    FreePolicy,
    Kind,
    Strategy,
    WeightStrategy,
    check_assignment,
    compute_ordering,
    gen_planted_sat,
    gen_random,
    is_solution,
    leaf_removal,
    weight_matrix,
    xorsat_solve,
)

__version__ = "0.1.0"
