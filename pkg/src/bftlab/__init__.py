"""Deterministic BFT consensus laboratory.

Two leader-based protocol state machines (a chained three-phase design
and a two-phase design with a responsive/wait view entry rule), three
view-synchronization strategies, a seeded discrete-event simulator of
partial synchrony with scripted Byzantine adversaries, and checkers +
metrics that audit safety, liveness, communication complexity, load
balance and latency claims empirically.
"""

from .checkers import check_liveness, check_safety
from .core import (
    Block,
    BlockStore,
    Phase,
    QuorumCertificate,
    SafetyState,
    SignatureToken,
    Vote,
    form_qc,
    highest_qc,
    make_genesis,
    quorum_threshold,
    verify_qc,
)
from .hotstuff2 import HotStuff2Node
from .hotstuff3 import ChainedHotStuffNode
from .metrics import MetricsReport, compute_metrics
from .pacemaker import BaselinePacemaker, EpochPacemaker, RelayerPacemaker, leader_of
from .scenario import PRESETS, ScenarioConfig, parse_scenario
from .simnet import SimNet, run
from .trace import Trace

__version__ = "0.1.0"

__all__ = [
    "Block",
    "BlockStore",
    "BaselinePacemaker",
    "ChainedHotStuffNode",
    "EpochPacemaker",
    "HotStuff2Node",
    "MetricsReport",
    "PRESETS",
    "Phase",
    "QuorumCertificate",
    "RelayerPacemaker",
    "SafetyState",
    "ScenarioConfig",
    "SignatureToken",
    "SimNet",
    "Trace",
    "Vote",
    "check_liveness",
    "check_safety",
    "compute_metrics",
    "form_qc",
    "highest_qc",
    "leader_of",
    "make_genesis",
    "parse_scenario",
    "quorum_threshold",
    "run",
    "verify_qc",
]
