"""Stationary equilibria of sampling-and-learning models under a switching state."""

from .core import (
    ConfigError,
    ConvergenceError,
    DomainError,
    Environment,
    SignalModel,
    Strategy,
    cutoff_belief,
    effective_lambda,
    g,
    phi,
    phi_table,
    posterior,
    simulate_chain,
    value_informed,
    value_uninformed,
)

__version__ = "0.1.0"
