"""Optimal finite-buffer sizing for bus architectures with bridges.

Pipeline: ``arch`` (load/validate) -> ``splitter`` (per-bus subsystems with
bridge buffers) -> ``ctmdp`` (per-subsystem models) -> ``lp``/``simplex``
(occupation-measure LP) -> ``policy`` (arbitration policy and capacities)
-> ``sim`` (discrete-event validation) -> ``harness`` (budget sweeps).
"""

from .arch import Architecture, load_architecture, parse_architecture
from .errors import BufplanError, NumericalError, ValidationError
from .harness import ExperimentResult, ExperimentSpec, run_experiment, summarize
from .policy import BufferAllocation, StationaryPolicy, extract_policy, size_buffers
from .sim import SimConfig, SimulationReport, simulate
from .splitter import SplitPlan, plan_architecture

__version__ = "0.1.0"

__all__ = [
    "Architecture",
    "BufferAllocation",
    "BufplanError",
    "ExperimentResult",
    "ExperimentSpec",
    "NumericalError",
    "SimConfig",
    "SimulationReport",
    "SplitPlan",
    "StationaryPolicy",
    "ValidationError",
    "extract_policy",
    "load_architecture",
    "parse_architecture",
    "plan_architecture",
    "run_experiment",
    "simulate",
    "size_buffers",
    "summarize",
]
