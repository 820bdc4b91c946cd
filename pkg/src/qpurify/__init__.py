"""Simulation and analysis of entanglement purification in repeater chains."""
from .calculus import (
    DeltaRole,
    DomainError,
    chain_fidelity_limit,
    find_delta_max,
    purification_gain,
    purified_fidelity,
    should_purify,
)
from .chain import ChainParams, RngStream
from .memory import MemoryModel, cmm, emm, lmm
from .policies import PolicyKind, StopCondition, TrialOutcome, run_policy

__version__ = "0.1.0"
