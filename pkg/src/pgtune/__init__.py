"""Guideline-driven tuning of simulated MPI collectives.

A virtual-time message-passing runtime, Default collective algorithms, the
22 guideline mock-ups, an NREP-style benchmark driver, profile generation
and a tuned dispatch layer.
"""

from .collectives import AlgorithmId, CollectiveCall, CollectiveKind, execute_collective, sequential_oracle
from .mockups import MockupConfig, MockupId, ScratchBuffers, execute_mockup, extra_memory_required
from .runtime import Comm, CostModel, Datatype, ReduceOp, dissemination_barrier, run_spmd

__version__ = "0.1.0"

__all__ = [
    "AlgorithmId", "CollectiveCall", "CollectiveKind", "Comm", "CostModel", "Datatype",
    "MockupConfig", "MockupId", "ReduceOp", "ScratchBuffers", "dissemination_barrier",
    "execute_collective", "execute_mockup", "extra_memory_required", "run_spmd",
    "sequential_oracle",
]
