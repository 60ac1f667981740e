"""Shared plumbing for the two protocol state machines.

Both protocols are pure state machines: (state, input event) -> (state,
Output). The Output lists messages to send, newly committed blocks, the
view-advance signal for the pacemaker, and trace annotations; the
simulator applies it.

Block admission discipline: a block is stored only once its parent is
stored, so every stored chain is walkable. Blocks that arrive ahead of
their parents wait in a pending buffer while a fetch request goes to the
sender; since the network only delays and never drops, every pending
block eventually resolves.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .core import (
    Block,
    BlockStore,
    NodeId,
    Phase,
    QuorumCertificate,
    SafetyState,
    SignatureToken,
    ViewNumber,
    Vote,
    fault_bound,
    make_genesis,
    quorum_threshold,
)
from .errors import BadSignatureToken, InvalidQC
from .messages import (
    FetchRequest,
    FetchResponse,
    Message,
    Proposal,
    QCAnnounce,
    StatusMsg,
    StatusRequest,
    ViewSync,
    VoteMsg,
)
from . import core


@dataclass(slots=True)
class Output:
    """Everything a protocol step wants the simulator to do."""

    sends: list[tuple[NodeId | None, Message]] = field(default_factory=list)
    # (block_id, height, block_view, certifying_view, certifying_block)
    commits: list[tuple[str, int, ViewNumber, ViewNumber, str]] = field(default_factory=list)
    qc_observed: ViewNumber | None = None
    formed_qc: QuorumCertificate | None = None
    delta_timer: int | None = None
    notes: list[tuple] = field(default_factory=list)
    halt: bool = False

    def observe(self, view: ViewNumber) -> None:
        if self.qc_observed is None or view > self.qc_observed:
            self.qc_observed = view


@dataclass(frozen=True, slots=True)
class ClusterConfig:
    """Per-node protocol parameters."""

    n: int
    leader_fn: Callable[[ViewNumber], NodeId]
    payload_units: int = 0
    aggregate_qc: bool = True
    delta_cap: int = 1000


class ProtocolNode:
    """Base: block store, safety state, admission/fetch bookkeeping."""

    def __init__(self, node_id: NodeId, config: ClusterConfig):
        self.id = node_id
        self.config = config
        self.n = config.n
        self.f = fault_bound(config.n)
        self.threshold = quorum_threshold(config.n)
        genesis, genesis_qc = make_genesis(config.n, config.aggregate_qc)
        self.genesis = genesis
        self.store = BlockStore(genesis)
        self.safety = SafetyState(locked_qc=genesis_qc, highest_qc=genesis_qc)
        # blocks waiting for a missing parent, keyed by the missing id
        self._pending_blocks: dict[str, list[Block]] = {}
        self._pending_ids: set[str] = set()
        # certificates waiting for their block
        self._pending_qcs: dict[str, list[QuorumCertificate]] = {}
        self._requested: set[str] = set()
        # fetch requests we cannot answer yet
        self._fetch_waiters: dict[str, list[NodeId]] = {}

    # -- dispatch ------------------------------------------------------

    def on_message(self, src: NodeId, msg: Message) -> Output:
        out = Output()
        if isinstance(msg, Proposal):
            self._deliver_block(msg.block, src, out)
        elif isinstance(msg, VoteMsg):
            self._on_vote(src, msg.vote, out)
        elif isinstance(msg, QCAnnounce):
            self._deliver_qc(msg.qc, src, out)
        elif isinstance(msg, StatusRequest):
            self._on_status_request(src, msg.view, out)
        elif isinstance(msg, StatusMsg):
            self._on_status(src, msg, out)
        elif isinstance(msg, FetchRequest):
            self._on_fetch_request(src, msg.block_id, out)
        elif isinstance(msg, FetchResponse):
            self._deliver_block(msg.block, src, out)
        elif isinstance(msg, ViewSync):
            self._deliver_qc(msg.highest, src, out)
        return out

    def on_view_entered(self, view: ViewNumber) -> Output:
        raise NotImplementedError

    def on_delta_timer(self, view: ViewNumber) -> Output:
        return Output()

    def on_view_timeout(self, view: ViewNumber) -> Output:
        return Output()

    def leader_of(self, view: ViewNumber) -> NodeId:
        return self.config.leader_fn(view)

    # -- block admission ----------------------------------------------

    def _deliver_block(self, block: Block, src: NodeId, out: Output) -> None:
        if block.id in self.store or block.id in self._pending_ids:
            return
        self._validate_block(block)
        if block.parent not in self.store:
            self._pending_ids.add(block.id)
            self._pending_blocks.setdefault(block.parent, []).append(block)
            self._request(block.parent, src, out)
            return
        self._admit(block, out)

    def _validate_block(self, block: Block) -> None:
        if not core.verify_qc(block.justify, self.n):
            raise InvalidQC(f"block {block.id} carries an invalid QC")
        if block.view <= block.justify.view:
            raise InvalidQC(
                f"block {block.id} view {block.view} does not exceed its "
                f"justify view {block.justify.view}"
            )

    def _admit(self, block: Block, out: Output) -> None:
        self.store.insert(block)
        for requester in self._fetch_waiters.pop(block.id, []):
            out.sends.append((requester, FetchResponse(block)))
        self._on_block_admitted(block, out)
        # anything waiting on this block can now go in, oldest first
        for child in self._pending_blocks.pop(block.id, []):
            self._pending_ids.discard(child.id)
            if child.id not in self.store:
                self._admit(child, out)
        for qc in self._pending_qcs.pop(block.id, []):
            self._on_qc_resolved(qc, out)

    def _deliver_qc(self, qc: QuorumCertificate, src: NodeId, out: Output) -> None:
        if not core.verify_qc(qc, self.n):
            raise InvalidQC(f"announced QC for {qc.block_id} failed verification")
        resolved = qc.block_id in self.store
        self._on_qc_delivered(qc, resolved, out)
        if not resolved:
            # a verified QC is sound evidence even before its block
            # arrives; the block-dependent effects run on resolution
            self._pending_qcs.setdefault(qc.block_id, []).append(qc)
            self._request(qc.block_id, src, out)

    def _request(self, block_id: str, src: NodeId, out: Output) -> None:
        if block_id in self._requested or block_id in self.store:
            return
        self._requested.add(block_id)
        if src != self.id:
            out.sends.append((src, FetchRequest(block_id)))

    def _on_fetch_request(self, src: NodeId, block_id: str, out: Output) -> None:
        block = self.store.get(block_id)
        if block is not None:
            out.sends.append((src, FetchResponse(block)))
        else:
            self._fetch_waiters.setdefault(block_id, []).append(src)

    # -- hooks implemented by each protocol ----------------------------

    def _on_block_admitted(self, block: Block, out: Output) -> None:
        raise NotImplementedError

    def _on_qc_delivered(self, qc: QuorumCertificate, resolved: bool, out: Output) -> None:
        """Effects of a QC that do not require holding its block."""
        raise NotImplementedError

    def _on_qc_resolved(self, qc: QuorumCertificate, out: Output) -> None:
        """Effects of a QC once its block is in the store."""
        raise NotImplementedError

    def _on_vote(self, src: NodeId, vote: Vote, out: Output) -> None:
        raise NotImplementedError

    def _on_status_request(self, src: NodeId, view: ViewNumber, out: Output) -> None:
        out.sends.append((src, StatusMsg(view, self.safety.locked_qc)))

    def _on_status(self, src: NodeId, msg: StatusMsg, out: Output) -> None:
        pass

    # -- shared helpers -------------------------------------------------

    def _check_vote_token(self, vote: Vote) -> None:
        expected = SignatureToken.subject_of(vote.block_id, vote.view, vote.phase)
        if vote.sig.subject != expected or vote.sig.signer != vote.voter:
            raise BadSignatureToken(
                f"vote by {vote.voter} for {vote.block_id} carries a bad token"
            )

    def _commit(self, block: Block, cert: QuorumCertificate, out: Output) -> None:
        """Commit `block` plus its uncommitted ancestors, oldest first,
        on the strength of `cert`. A commit that conflicts with the local
        committed prefix is recorded as a safety violation and halts the
        scenario."""
        if self.store.is_committed(block.id):
            return
        newly, conflict = self.store.commit_chain(block)
        if conflict:
            # Record the divergent commit so cross-node checkers see it,
            # then stop the run: the protocol under test is broken.
            out.commits.append(
                (block.id, len(self.store.committed) + 1, block.view, cert.view, cert.block_id)
            )
            out.notes.append(("violation", "conflicting_commit", block.id))
            out.halt = True
            return
        base = len(self.store.committed) - len(newly)
        for i, b in enumerate(newly):
            out.commits.append((b.id, base + i + 1, b.view, cert.view, cert.block_id))

    def _update_lock(self, qc: QuorumCertificate, out: Output) -> None:
        before = self.safety.locked_qc.view
        self.safety.raise_lock(qc)
        if self.safety.locked_qc.view > before:
            out.notes.append(("lock", qc.view, qc.block_id))

    def make_vote(self, block_id: str, view: ViewNumber, phase: Phase) -> Vote:
        return Vote.make(block_id, view, phase, self.id)
