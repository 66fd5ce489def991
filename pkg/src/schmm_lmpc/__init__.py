"""Delay-aware multi-agent consensus.

A semi-continuous HMM models per-link network delays; each agent uses it to
predict when neighbor packets will arrive, forecasts neighbor states, and
applies an infinite-horizon LQ gain on the shifted local consensus error.
"""

__version__ = "0.1.0"

from .errors import (CertificationError, ClusterError, ConfigError, DivergenceError, DomainError,
                     LinkError, SynthesisError, TopologyError, TraceFormatError, UnderflowError)
from .schmm import (SchmmModel, DelayTrace, em_fit, forward_backward, incremental_em_update,
                    init_model, load_model, sample_trace, save_model, viterbi_predict)
from .topology import Topology, AgentDynamics, build_compact, load_graph
from .lmpc import CostWeights, GainSolution, synthesize_gain
from .netsim import Channel, PacketFrame, load_trace, save_trace
from .config import SimConfig, load_config, parse_config
from .runtime import AgentRuntime, SimResult, run_simulation
from .presets import reference_model

__all__ = [
    "AgentDynamics", "AgentRuntime", "CertificationError", "Channel", "ClusterError", "ConfigError",
    "CostWeights", "DelayTrace", "DivergenceError", "DomainError", "GainSolution", "LinkError",
    "PacketFrame", "SchmmModel", "SimConfig", "SimResult", "SynthesisError", "Topology",
    "TopologyError", "TraceFormatError", "UnderflowError", "build_compact", "em_fit",
    "forward_backward", "incremental_em_update", "init_model", "load_config", "load_graph",
    "load_model", "load_trace", "parse_config", "reference_model", "run_simulation",
    "sample_trace", "save_model", "save_trace", "synthesize_gain", "viterbi_predict",
]
