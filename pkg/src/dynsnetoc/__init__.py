"""dynsnetoc: dynamic sparse multigraphs with overlapping communities.

A simulation and Bayesian-inference toolkit for time-evolving multigraphs
whose nodes carry base sociabilities from a (truncated) generalized gamma
process and per-community affiliation scores evolving through a stationary
Gamma-Markov chain.  Links are Poisson counts driven by the factorized
weights, which yields sparse graphs with power-law degrees for
sigma in (0, 1).
"""

from .distributions import (
    EtBfryParams,
    GgpParams,
    etbfry_log_density,
    etbfry_sample,
    gamma_sample,
    ggp_tail_intensity,
    ggp_truncated_sample,
)
from .errors import (
    DataFormatError,
    InsufficientDataError,
    NumericError,
    ParameterError,
    ShapeError,
)

__version__ = "0.1.0"
