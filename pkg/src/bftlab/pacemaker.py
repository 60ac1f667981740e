"""View synchronization strategies.

A pacemaker decides when its node enters each view. Three interchangeable
designs are provided:

* baseline: on every local timeout, all-to-all sync messages with a 2f+1
  entry threshold. Costs Theta(n^2) per failed view.
* epoch: views are bundled into epochs of f+1; an all-to-all exchange
  (with echo amplification) runs only at the first view of each epoch,
  interior views advance on local timeouts alone. A window of f+1
  consecutive failures costs Theta(n^2) total, not per view.
* relayer: timeout wishes go to the next leader only, which aggregates
  2f+1 of them into a broadcast view certificate; f+1 fallback relayers
  are staggered one timeout apart so one of them is correct.

All three are pure state machines; timers are simulated events, never
real clocks.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .core import NodeId, QuorumCertificate, ViewNumber, fault_bound
from .messages import EpochSync, Message, ViewCertificate, ViewSync, Wish

ROUND_ROBIN = "round_robin"
SEEDED_RANDOM = "seeded_random"

# Exponential backoff on consecutive view failures is capped so that a
# long pre-stabilization stall cannot blow the post-stabilization
# recovery time out to astronomical values.
BACKOFF_CAP = 6


def leader_of(view: ViewNumber, n: int, mode: str = ROUND_ROBIN, seed: int = 0) -> NodeId:
    """Designated leader of a view. Round-robin rotates through node ids;
    seeded-random is a deterministic function of (seed, view) so every
    node and every replay agrees."""
    if mode == ROUND_ROBIN:
        return view % n
    if mode == SEEDED_RANDOM:
        h = hashlib.sha256(f"leader|{seed}|{view}".encode()).digest()
        return int.from_bytes(h[:8], "big") % n
    raise ValueError(f"unknown leader mode {mode!r}")


@dataclass(slots=True)
class TimerRequest:
    kind: str  # "view" | "relay"
    view: ViewNumber
    delay: int
    stage: int = 0


@dataclass(slots=True)
class PacemakerDecision:
    """What a pacemaker step wants done: optionally enter a view, send
    messages (dst None broadcasts), and arm timers."""

    enter_view: ViewNumber | None = None
    enter_cause: str = ""
    sends: list[tuple[NodeId | None, Message]] = field(default_factory=list)
    timers: list[TimerRequest] = field(default_factory=list)


@dataclass(frozen=True, slots=True)
class EpochConfig:
    """Epoch pacemaker shape: epochs are f+1 consecutive views; timeouts
    start at `base_timeout` and scale by `backoff` per consecutive
    failure."""

    epoch_length: int
    base_timeout: int
    backoff: float = 2.0

    def __post_init__(self):
        if self.epoch_length < 1:
            raise ValueError("epoch_length must be >= 1")


class BasePacemaker:
    """State common to all three designs: current view, failure counter
    for backoff, and the node's latest protocol-level QC for sync
    piggybacking."""

    name = "base"

    def __init__(self, node_id: NodeId, n: int, base_timeout: int, backoff: float,
                 leader_mode: str = ROUND_ROBIN, seed: int = 0):
        self.node_id = node_id
        self.n = n
        self.f = fault_bound(n)
        self.base_timeout = base_timeout
        self.backoff = backoff
        self.leader_mode = leader_mode
        self.seed = seed
        self.current_view: ViewNumber = 0
        self.failures = 0
        self.highest: QuorumCertificate | None = None

    def leader_of(self, view: ViewNumber) -> NodeId:
        return leader_of(view, self.n, self.leader_mode, self.seed)

    def timeout_for(self, failures: int) -> int:
        return int(self.base_timeout * (self.backoff ** min(failures, BACKOFF_CAP)))

    def note_highest(self, qc: QuorumCertificate) -> None:
        if self.highest is None or qc.view > self.highest.view:
            self.highest = qc

    def note_commit(self) -> None:
        self.failures = 0

    def _enter(self, view: ViewNumber, cause: str,
               decision: PacemakerDecision | None = None) -> PacemakerDecision:
        decision = decision or PacemakerDecision()
        if view <= self.current_view:
            return decision
        self.current_view = view
        decision.enter_view = view
        decision.enter_cause = cause
        decision.timers.append(TimerRequest("view", view, self.timeout_for(self.failures)))
        return decision

    # Interface driven by the node shell ------------------------------

    def start(self) -> PacemakerDecision:
        """Initial synchronized entry into view 1 at time zero."""
        return self._enter(1, "initial")

    def on_qc_observed(self, view: ViewNumber) -> PacemakerDecision:
        """Protocol saw a QC for `view`: progress, so enter view+1 and
        reset backoff."""
        self.failures = 0
        return self._advance_to(view + 1, "qc")

    def on_view_timeout(self, view: ViewNumber) -> PacemakerDecision:
        raise NotImplementedError

    def on_relay_timeout(self, view: ViewNumber, stage: int) -> PacemakerDecision:
        return PacemakerDecision()

    def on_message(self, sender: NodeId, msg: Message) -> PacemakerDecision:
        raise NotImplementedError

    def _advance_to(self, view: ViewNumber, cause: str) -> PacemakerDecision:
        raise NotImplementedError


class BaselinePacemaker(BasePacemaker):
    """All-to-all timeout coordination; quadratic per failed view."""

    name = "baseline"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._sync_votes: dict[ViewNumber, set[NodeId]] = {}
        self._sync_sent: set[ViewNumber] = set()

    def _advance_to(self, view, cause):
        return self._enter(view, cause)

    def on_view_timeout(self, view: ViewNumber) -> PacemakerDecision:
        decision = PacemakerDecision()
        if view != self.current_view:
            return decision
        self.failures += 1
        target = view + 1
        if target not in self._sync_sent:
            self._sync_sent.add(target)
            self._record_sync(target, self.node_id)
            decision.sends.append((None, ViewSync(target, self._qc_for_sync())))
        # Re-arm so a node that never hears back keeps retrying; the
        # resend is suppressed by _sync_sent.
        decision.timers.append(TimerRequest("view", view, self.timeout_for(self.failures)))
        return self._check_threshold(target, decision)

    def on_message(self, sender: NodeId, msg: Message) -> PacemakerDecision:
        decision = PacemakerDecision()
        if isinstance(msg, ViewSync):
            if msg.view <= self.current_view:
                return decision
            self._record_sync(msg.view, sender)
            return self._check_threshold(msg.view, decision)
        return decision

    def _record_sync(self, view: ViewNumber, sender: NodeId) -> None:
        self._sync_votes.setdefault(view, set()).add(sender)

    def _check_threshold(self, view: ViewNumber, decision: PacemakerDecision) -> PacemakerDecision:
        if view > self.current_view and len(self._sync_votes.get(view, ())) >= 2 * self.f + 1:
            decision = self._enter(view, "sync", decision)
            self._prune()
        return decision

    def _qc_for_sync(self) -> QuorumCertificate:
        assert self.highest is not None, "pacemaker started before genesis installed"
        return self.highest

    def _prune(self) -> None:
        for v in [v for v in self._sync_votes if v <= self.current_view]:
            del self._sync_votes[v]


class EpochPacemaker(BasePacemaker):
    """Epoch-bundled synchronization. All-to-all exchange only at epoch
    boundaries (views that are multiples of f+1); interior views advance
    on local timeouts or QCs with zero pacemaker messages."""

    name = "epoch"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.epoch_length = self.f + 1
        self._epoch_votes: dict[int, set[NodeId]] = {}
        self._epoch_sent: set[int] = set()

    def epoch_of(self, view: ViewNumber) -> int:
        return view // self.epoch_length

    def is_boundary(self, view: ViewNumber) -> bool:
        return view % self.epoch_length == 0

    def _advance_to(self, view, cause):
        if not self.is_boundary(view):
            return self._enter(view, cause)
        return self._want_boundary(view)

    def on_view_timeout(self, view: ViewNumber) -> PacemakerDecision:
        decision = PacemakerDecision()
        if view != self.current_view:
            return decision
        self.failures += 1
        target = view + 1
        if not self.is_boundary(target):
            return self._enter(target, "timeout", decision)
        decision.timers.append(TimerRequest("view", view, self.timeout_for(self.failures)))
        merged = self._want_boundary(target)
        merged.timers.extend(decision.timers)
        merged.sends.extend(decision.sends)
        return merged

    def _want_boundary(self, view: ViewNumber) -> PacemakerDecision:
        decision = PacemakerDecision()
        epoch = self.epoch_of(view)
        if epoch not in self._epoch_sent:
            self._epoch_sent.add(epoch)
            self._epoch_votes.setdefault(epoch, set()).add(self.node_id)
            decision.sends.append((None, EpochSync(epoch)))
        return self._check_epoch(epoch, decision)

    def on_message(self, sender: NodeId, msg: Message) -> PacemakerDecision:
        decision = PacemakerDecision()
        if not isinstance(msg, EpochSync):
            return decision
        boundary_view = msg.epoch * self.epoch_length
        if boundary_view <= self.current_view:
            return decision
        votes = self._epoch_votes.setdefault(msg.epoch, set())
        votes.add(sender)
        # Echo amplification: f+1 distinct reports of an epoch this node
        # has not asked for itself are proof at least one correct node
        # wants it, so join in.
        if len(votes) >= self.f + 1 and msg.epoch not in self._epoch_sent:
            self._epoch_sent.add(msg.epoch)
            votes.add(self.node_id)
            decision.sends.append((None, EpochSync(msg.epoch)))
        return self._check_epoch(msg.epoch, decision)

    def _check_epoch(self, epoch: int, decision: PacemakerDecision) -> PacemakerDecision:
        boundary_view = epoch * self.epoch_length
        if (
            boundary_view > self.current_view
            and len(self._epoch_votes.get(epoch, ())) >= 2 * self.f + 1
        ):
            decision = self._enter(boundary_view, "epoch", decision)
            for e in [e for e in self._epoch_votes if e <= self.epoch_of(self.current_view)]:
                del self._epoch_votes[e]
        return decision


class RelayerPacemaker(BasePacemaker):
    """Expected-linear view changes: wishes go to the next leader only,
    which broadcasts an aggregated view certificate; up to f+1 staggered
    fallback relayers cover Byzantine-silent leaders."""

    name = "relayer"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._wishes: dict[ViewNumber, set[NodeId]] = {}
        self._cert_sent: set[ViewNumber] = set()
        self._wish_stage: dict[ViewNumber, int] = {}

    def _advance_to(self, view, cause):
        return self._enter(view, cause)

    def on_view_timeout(self, view: ViewNumber) -> PacemakerDecision:
        decision = PacemakerDecision()
        if view != self.current_view:
            return decision
        self.failures += 1
        target = view + 1
        decision.timers.append(TimerRequest("view", view, self.timeout_for(self.failures)))
        if target not in self._wish_stage:
            self._wish_stage[target] = 0
            self._send_wish(target, 0, decision)
        return decision

    def on_relay_timeout(self, view: ViewNumber, stage: int) -> PacemakerDecision:
        decision = PacemakerDecision()
        if view <= self.current_view:
            return decision
        if self._wish_stage.get(view, -1) != stage - 1:
            return decision
        self._wish_stage[view] = stage
        self._send_wish(view, stage, decision)
        return decision

    def _send_wish(self, view: ViewNumber, stage: int, decision: PacemakerDecision) -> None:
        relayer = self.leader_of(view + stage)
        wish = Wish(view)
        if relayer == self.node_id:
            self._note_wish(view, self.node_id, decision)
        else:
            decision.sends.append((relayer, wish))
        if stage < self.f:
            decision.timers.append(
                TimerRequest("relay", view, self.base_timeout, stage=stage + 1)
            )

    def on_message(self, sender: NodeId, msg: Message) -> PacemakerDecision:
        decision = PacemakerDecision()
        if isinstance(msg, Wish):
            # A relayer may already be past this view; the certificate
            # still unblocks whoever is not.
            self._note_wish(msg.view, sender, decision)
            return decision
        if isinstance(msg, ViewCertificate):
            if msg.view > self.current_view:
                return self._enter(msg.view, "cert", decision)
            return decision
        return decision

    def _note_wish(self, view: ViewNumber, sender: NodeId, decision: PacemakerDecision) -> None:
        wishes = self._wishes.setdefault(view, set())
        wishes.add(sender)
        if len(wishes) >= 2 * self.f + 1 and view not in self._cert_sent:
            self._cert_sent.add(view)
            cert = ViewCertificate(view, frozenset(wishes))
            decision.sends.append((None, cert))
            if view > self.current_view:
                self._enter(view, "cert", decision)


PACEMAKERS = {
    "baseline": BaselinePacemaker,
    "epoch": EpochPacemaker,
    "relayer": RelayerPacemaker,
}
