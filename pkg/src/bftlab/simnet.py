"""Seeded discrete-event simulator of partial synchrony.

The event queue is a heap of (time, seq) pairs; seq is assigned from
insertion order, so the whole execution is a pure function of the
scenario configuration, seed included. Messages are delayed, never lost:
before the stabilization time the adversary may hold a message, but it
must deliver by gst + cap; after it, delivery lands within the actual
delay range.

Byzantine behavior is scripted. A corrupted node runs the normal
protocol state machine underneath and a strategy filter over its
outgoing messages, so a strategy can only ever use signature tokens the
corrupted node legitimately holds; fabricating a correct node's token
trips a simulator assertion.
"""

from __future__ import annotations

import heapq
import random
from collections import deque
from dataclasses import dataclass
from functools import partial

from .core import Block, NodeId, Phase, Vote, make_genesis
from .errors import (
    BadSignatureToken,
    ClockRegression,
    ConfigInvalid,
    ForgedToken,
    InvalidQC,
    SimulationStall,
)
from .hotstuff2 import HotStuff2Node
from .hotstuff3 import ChainedHotStuffNode
from .messages import (
    EpochSync,
    FetchResponse,
    Message,
    Proposal,
    QCAnnounce,
    StatusMsg,
    ViewCertificate,
    ViewSync,
    VoteMsg,
    Wish,
    message_kind,
    message_payload_units,
    message_ref,
    message_size,
    message_view,
)
from .pacemaker import PACEMAKERS, PacemakerDecision, leader_of
from .protocol import ClusterConfig, Output
from .scenario import ADVERSARIAL_HOLD, RANDOM_UP_TO, ScenarioConfig
from .trace import Trace

_DELIVER = 0
_TIMER = 1

# hard cap so a misconfigured or deliberately broken run cannot spin forever
MAX_EVENTS = 5_000_000

PROTOCOL_CLASSES = {
    "hotstuff3": ChainedHotStuffNode,
    "hotstuff2": HotStuff2Node,
}


# -- Byzantine strategies ----------------------------------------------------


@dataclass(frozen=True, slots=True)
class Crash:
    at_time: int = 0


@dataclass(frozen=True, slots=True)
class SilentLeader:
    pass


@dataclass(frozen=True, slots=True)
class Equivocator:
    pass


@dataclass(frozen=True, slots=True)
class VoteWithholder:
    pass


@dataclass(frozen=True, slots=True)
class MaxDelay:
    pass


ByzantineStrategy = Crash | SilentLeader | Equivocator | VoteWithholder | MaxDelay


def build_strategy(kind: str, param: int | None) -> ByzantineStrategy:
    if kind == "crash":
        return Crash(param if param is not None else 0)
    if kind == "silent_leader":
        return SilentLeader()
    if kind == "equivocator":
        return Equivocator()
    if kind == "vote_withholder":
        return VoteWithholder()
    if kind == "max_delay":
        return MaxDelay()
    raise ConfigInvalid([("byzantine", f"unknown strategy {kind!r}")])


def apply_strategy(strategy, node, sends):
    """Transform a node's outgoing message batch per its strategy.

    Strategies never gain messages they could not produce: the
    equivocator trades its one broadcast for two half-broadcasts plus its
    own (legitimately signed) votes; the withholder and silent leader
    only drop.
    """
    if strategy is None or isinstance(strategy, (Crash, MaxDelay)):
        return sends
    if isinstance(strategy, SilentLeader):
        return [(dst, m) for dst, m in sends if not isinstance(m, Proposal)]
    if isinstance(strategy, VoteWithholder):
        return [(dst, m) for dst, m in sends if not isinstance(m, VoteMsg)]
    if isinstance(strategy, Equivocator):
        return _equivocate(node, sends)
    return sends


def _equivocate(node, sends):
    out = []
    for dst, msg in sends:
        if not (
            dst is None
            and isinstance(msg, Proposal)
            and msg.block.proposer == node.id
        ):
            out.append((dst, msg))
            continue
        a = msg.block
        b = Block.make(a.parent, a.view, a.justify, a.payload_units + 1, a.proposer)
        n = node.protocol.n
        half = n // 2
        lower, upper = range(0, half), range(half, n)
        for i in lower:
            out.append((i, Proposal(a)))
        for i in upper:
            out.append((i, Proposal(b)))
        # vote for the sibling too; the own-half vote happens when the
        # node processes its own proposal like everyone else
        own_block = a if node.id < half else b
        other = b if own_block is a else a
        if isinstance(node.protocol, HotStuff2Node):
            vote = Vote.make(other.id, other.view, Phase.PREPARE, node.id)
            out.append((node.id, VoteMsg(vote)))
        else:
            vote = Vote.make(other.id, other.view, Phase.GENERIC, node.id)
            out.append((node.protocol.leader_of(other.view + 1), VoteMsg(vote)))
    return out


def _tokens_of(msg: Message):
    if isinstance(msg, VoteMsg):
        return (msg.vote.sig,)
    if isinstance(msg, Proposal):
        return msg.block.justify.tokens
    if isinstance(msg, FetchResponse):
        return msg.block.justify.tokens
    if isinstance(msg, QCAnnounce):
        return msg.qc.tokens
    if isinstance(msg, StatusMsg):
        return msg.lock.tokens
    if isinstance(msg, ViewSync):
        return msg.highest.tokens
    return ()


_PACEMAKER_MSG = (ViewSync, EpochSync, Wish, ViewCertificate)


class SimNode:
    """Couples one node's protocol and pacemaker state machines and
    routes their outputs back into the network."""

    def __init__(self, node_id: NodeId, net: "SimNet", protocol, pacemaker, strategy):
        self.id = node_id
        self.net = net
        self.protocol = protocol
        self.pacemaker = pacemaker
        self.strategy = strategy
        self.crash_at = strategy.at_time if isinstance(strategy, Crash) else None
        self._pending_formed = None

    @property
    def crashed(self) -> bool:
        return self.crash_at is not None and self.net.now >= self.crash_at

    def start(self) -> None:
        self._drive(deque([("pace_start",)]))

    def handle_deliver(self, src: NodeId, msg: Message) -> None:
        if self.crashed:
            return
        actions: deque = deque()
        if isinstance(msg, _PACEMAKER_MSG):
            actions.append(("pace_msg", src, msg))
        if not isinstance(msg, _PACEMAKER_MSG) or isinstance(msg, ViewSync):
            # a sync message carries the sender's highest QC, which the
            # protocol should also digest
            actions.append(("proto_msg", src, msg))
        self._drive(actions)

    def handle_timer(self, kind: str, view: int, stage: int) -> None:
        if self.crashed:
            self.net.trace.add("timer_fire", self.net.now, self.id, kind, view, "stale")
            return
        if kind == "view":
            live = self.pacemaker.current_view == view
            action = ("view_timeout", view)
        elif kind == "relay":
            live = self.pacemaker.current_view < view
            action = ("pace_relay", view, stage)
        else:  # delta
            live = (
                self.protocol.safety.current_view == view
                and view not in getattr(self.protocol, "proposed_in", ())
            )
            action = ("proto_delta", view)
        self.net.trace.add(
            "timer_fire", self.net.now, self.id, kind, view, "live" if live else "stale"
        )
        if live:
            self._drive(deque([action]))

    # -- the node-local engine ----------------------------------------

    def _drive(self, actions: deque) -> None:
        while True:
            self._drain(actions)
            # a QC formed from votes that nothing embedded gets
            # disseminated on its own, otherwise the cluster might stall
            if self._pending_formed is None:
                break
            qc, self._pending_formed = self._pending_formed, None
            if self.pacemaker.current_view <= qc.view:
                self._route_sends([(None, QCAnnounce(qc))], actions)

    def _drain(self, actions: deque) -> None:
        while actions:
            item = actions.popleft()
            kind = item[0]
            if kind == "proto_msg":
                _, src, msg = item
                try:
                    out = self.protocol.on_message(src, msg)
                except (InvalidQC, BadSignatureToken) as exc:
                    self.net.trace.add(
                        "reject", self.net.now, self.id, type(exc).__name__,
                        message_ref(msg),
                    )
                    continue
                self._apply_output(out, actions)
            elif kind == "proto_view":
                self._apply_output(self.protocol.on_view_entered(item[1]), actions)
            elif kind == "proto_delta":
                self._apply_output(self.protocol.on_delta_timer(item[1]), actions)
            elif kind == "pace_msg":
                _, src, msg = item
                self._apply_decision(self.pacemaker.on_message(src, msg), actions)
            elif kind == "view_timeout":
                # the protocol reacts first so a rescued vote beats the
                # view-change traffic into the next leader's queue
                self._apply_output(self.protocol.on_view_timeout(item[1]), actions)
                self._apply_decision(self.pacemaker.on_view_timeout(item[1]), actions)
            elif kind == "pace_relay":
                self._apply_decision(self.pacemaker.on_relay_timeout(item[1], item[2]), actions)
            elif kind == "pace_qc":
                self._apply_decision(self.pacemaker.on_qc_observed(item[1]), actions)
            elif kind == "pace_start":
                self._apply_decision(self.pacemaker.start(), actions)

    def _apply_output(self, out: Output, actions: deque) -> None:
        now, trace = self.net.now, self.net.trace
        for note in out.notes:
            tag = note[0]
            if tag == "propose":
                trace.add("propose", now, self.id, note[1], note[2], note[3], note[4])
            elif tag == "qc_formed":
                trace.add("qc_formed", now, self.id, note[1], note[2], note[3])
            elif tag == "lock":
                trace.add("lock", now, self.id, note[1], note[2])
            elif tag == "delta_wait":
                trace.add("delta_wait", now, self.id, note[1])
            elif tag == "violation":
                trace.add("violation", now, self.id, note[1], note[2])
            elif tag == "reject":
                trace.add("reject", now, self.id, note[1], note[2])
        for block_id, height, view, cert_view, cert_ref in out.commits:
            trace.add("commit", now, self.id, block_id, height, view, cert_view, cert_ref)
            trace.note_commit(self.id, block_id, now)
            self.net.on_commit(self.id)
            self.pacemaker.note_commit()
        if out.delta_timer is not None:
            self.net.arm_timer(
                self.id, "delta", self.protocol.safety.current_view, 0, out.delta_timer
            )
        self.pacemaker.note_highest(self.protocol.safety.highest_qc)
        if out.formed_qc is not None:
            self._pending_formed = out.formed_qc
        self._route_sends(out.sends, actions)
        if out.qc_observed is not None:
            actions.append(("pace_qc", out.qc_observed))
        if out.halt:
            self.net.halt("protocol_violation", self.id)

    def _apply_decision(self, dec: PacemakerDecision, actions: deque) -> None:
        for t in dec.timers:
            self.net.arm_timer(self.id, t.kind, t.view, t.stage, t.delay)
        self._route_sends(dec.sends, actions)
        if dec.enter_view is not None:
            self.net.trace.add(
                "view_enter", self.net.now, self.id, dec.enter_view, dec.enter_cause
            )
            actions.append(("proto_view", dec.enter_view))

    def _route_sends(self, sends, actions: deque) -> None:
        if not sends:
            return
        sends = apply_strategy(self.strategy, self, sends)
        for dst, msg in sends:
            if dst is None:
                for d in range(self.net.n):
                    if d != self.id:
                        self.net.send(self.id, d, msg)
                self._self_deliver(msg, actions)
            elif dst == self.id:
                self._self_deliver(msg, actions)
            else:
                self.net.send(self.id, dst, msg)

    def _self_deliver(self, msg: Message, actions: deque) -> None:
        if isinstance(msg, _PACEMAKER_MSG):
            actions.append(("pace_msg", self.id, msg))
            if isinstance(msg, ViewSync):
                actions.append(("proto_msg", self.id, msg))
        else:
            actions.append(("proto_msg", self.id, msg))


class SimNet:
    """The event loop: clock, queue, delay model, token accounting."""

    def __init__(self, config: ScenarioConfig, protocol_factory=None):
        config.validate()
        self.config = config
        self.n = config.n
        self.now = 0
        self._seq = 0
        self._heap: list = []
        self.trace = Trace(config=config.to_dict())
        self._rng = random.Random(f"{config.seed}:delay")
        self._halted: str | None = None
        self._commit_counts = [0] * config.n
        self._events_processed = 0

        strategies: dict[int, ByzantineStrategy] = {
            node_id: build_strategy(kind, param)
            for node_id, kind, param in config.byzantine
        }
        self._max_delay_senders = {
            node_id for node_id, s in strategies.items() if isinstance(s, MaxDelay)
        }
        self._correct = [i for i in range(config.n) if i not in strategies]

        leader_fn = partial(
            leader_of, n=config.n, mode=config.leader_mode, seed=config.seed
        )
        cluster = ClusterConfig(
            n=config.n,
            leader_fn=leader_fn,
            payload_units=config.payload_units,
            aggregate_qc=config.aggregate_qc,
            delta_cap=config.delta_cap,
        )
        protocol_factory = protocol_factory or PROTOCOL_CLASSES[config.protocol]
        self.nodes: list[SimNode] = []
        for i in range(config.n):
            protocol = protocol_factory(i, cluster)
            pacemaker = PACEMAKERS[config.pacemaker](
                i, config.n, config.timeout(), config.backoff,
                leader_mode=config.leader_mode, seed=config.seed,
            )
            self.nodes.append(SimNode(i, self, protocol, pacemaker, strategies.get(i)))

        # unforgeability bookkeeping: tokens that correct nodes have put
        # into circulation (the genesis certificate is everyone's)
        _, genesis_qc = make_genesis(config.n, config.aggregate_qc)
        self._issued_tokens = set(genesis_qc.tokens)

    # -- scheduling -----------------------------------------------------

    def send(self, src: NodeId, dst: NodeId, msg: Message) -> None:
        self._account_tokens(src, msg)
        units = message_size(msg)
        self.trace.add(
            "send", self.now, src, dst, message_kind(msg), message_view(msg),
            message_ref(msg), units,
        )
        self.trace.note_send(src, units)
        at = self._delivery_time(src, self.now, message_payload_units(msg))
        self._push(at, _DELIVER, dst, src, msg)

    def arm_timer(self, node: NodeId, kind: str, view: int, stage: int, delay: int) -> None:
        at = self.now + delay
        self.trace.add("timer_set", self.now, node, kind, view, at)
        self._push(at, _TIMER, node, kind, (view, stage))

    def _push(self, time: int, etype: int, *payload) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (time, self._seq, etype, *payload))

    def _delivery_time(self, src: NodeId, send_time: int, payload_units: int) -> int:
        cfg = self.config
        cost = payload_units * cfg.payload_cost
        bound = max(send_time, cfg.gst) + cfg.delta_cap + cost
        if src in self._max_delay_senders:
            return bound
        if send_time >= cfg.gst:
            return send_time + self._rng.randint(cfg.delta_min, cfg.delta_max) + cost
        if cfg.pre_gst_policy[0] == ADVERSARIAL_HOLD:
            return bound
        cap = cfg.pre_gst_policy[1]
        drawn = send_time + self._rng.randint(cfg.delta_min, cap) + cost
        return min(drawn, bound)

    def _account_tokens(self, src: NodeId, msg: Message) -> None:
        tokens = _tokens_of(msg)
        if not tokens:
            return
        if self.nodes[src].strategy is None:
            self._issued_tokens.update(tokens)
        else:
            for t in tokens:
                if self.nodes[t.signer].strategy is None and t not in self._issued_tokens:
                    raise ForgedToken(
                        f"strategy on node {src} fabricated a token of correct "
                        f"node {t.signer}"
                    )

    # -- loop -----------------------------------------------------------

    def on_commit(self, node: NodeId) -> None:
        self._commit_counts[node] += 1

    def halt(self, reason: str, node: NodeId) -> None:
        if self._halted is None:
            self._halted = reason
            self.trace.add("halt", self.now, node, reason)

    def start(self) -> None:
        for node in self.nodes:
            if not node.crashed:
                node.start()

    def step(self) -> None:
        time, _seq, etype, *payload = heapq.heappop(self._heap)
        if time < self.now:
            raise ClockRegression(f"event at {time} while clock is at {self.now}")
        self.now = time
        self._events_processed += 1
        if etype == _DELIVER:
            dst, src, msg = payload
            self.trace.add(
                "deliver", self.now, dst, src, message_kind(msg), message_view(msg),
                message_ref(msg), message_size(msg),
            )
            self.nodes[dst].handle_deliver(src, msg)
        else:
            node, kind, (view, stage) = payload
            self.nodes[node].handle_timer(kind, view, stage)

    def run(self) -> Trace:
        cfg = self.config
        self.start()
        stop_reason = "drained"
        while self._heap:
            next_time = self._heap[0][0]
            if cfg.stop_horizon is not None and next_time > cfg.stop_horizon:
                stop_reason = "horizon"
                break
            self.step()
            if self._halted is not None:
                stop_reason = self._halted
                break
            if cfg.stop_commits is not None and self._correct:
                if min(self._commit_counts[i] for i in self._correct) >= cfg.stop_commits:
                    stop_reason = "commits"
                    break
            if self._events_processed >= MAX_EVENTS:
                raise SimulationStall(
                    f"exceeded {MAX_EVENTS} events at t={self.now} "
                    f"({cfg.name}, seed {cfg.seed})"
                )
        self.trace.stop_reason = stop_reason
        self.trace.end_time = self.now
        self.trace.halted = self._halted is not None
        return self.trace


def run(config: ScenarioConfig, protocol_factory=None) -> Trace:
    """Run one scenario to completion and return its trace."""
    return SimNet(config, protocol_factory=protocol_factory).run()


def schedule_message(net: SimNet, src: NodeId, dst: NodeId, msg: Message) -> None:
    """Queue a message on the simulated network (test/tooling entry)."""
    net.send(src, dst, msg)
