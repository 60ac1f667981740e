"""Chained (pipelined) three-phase HotStuff.

All phases share one message shape: a leader proposes a block carrying
the QC it knows ("the key"), everyone sends a single generic vote to the
*next* view's leader, and that leader's freshly formed QC rides inside
its own proposal. One block therefore advances three overlapping
instances at once.

Commit rule: when a QC completes a chain of three blocks in consecutive
views, each justifying its parent, the head of that chain commits along
with all of its uncommitted ancestors. A view gap restarts the chain.

Voting rule: vote for a proposal iff its view is above the highest view
voted and it either extends the locked block or carries a justify newer
than the lock. The second disjunct is what lets correct nodes abandon a
lock that provably went nowhere.
"""

from __future__ import annotations

from .core import Block, NodeId, Phase, QuorumCertificate, ViewNumber, Vote, form_qc
from .errors import NotLeader, StaleView
from .messages import Proposal, VoteMsg
from .protocol import Output, ProtocolNode


class ChainedHotStuffNode(ProtocolNode):
    """One node's chained three-phase state machine."""

    protocol_name = "hotstuff3"

    def __init__(self, node_id, config):
        super().__init__(node_id, config)
        # votes awaiting quorum, keyed by (block_id, view) -> voter -> vote
        self.pending_votes: dict[tuple[str, ViewNumber], dict[NodeId, Vote]] = {}
        self._formed: set[tuple[str, ViewNumber]] = set()
        self._last_vote: Vote | None = None

    # -- view entry / proposing ----------------------------------------

    def on_view_entered(self, view: ViewNumber) -> Output:
        out = Output()
        self.safety.current_view = max(self.safety.current_view, view)
        self._prune_votes()
        if self.leader_of(view) == self.id:
            block = self.make_proposal(view, self.config.payload_units)
            out.notes.append(("propose", view, block.id, block.justify.view, block.payload_units))
            out.sends.append((None, Proposal(block)))
        return out

    def make_proposal(self, view: ViewNumber, payload_units: int) -> Block:
        """Build this view's proposal on top of the highest QC known."""
        if self.leader_of(view) != self.id:
            raise NotLeader(f"node {self.id} does not lead view {view}")
        if self.safety.current_view != view:
            raise StaleView(
                f"asked to propose for view {view} while in view "
                f"{self.safety.current_view}"
            )
        justify = self.safety.highest_qc
        return Block.make(justify.block_id, view, justify, payload_units, self.id)

    # -- proposal handling ----------------------------------------------

    def _on_block_admitted(self, block: Block, out: Output) -> None:
        # the carried QC is processed first, whether or not we vote
        self.process_qc(block.justify, out)
        self._maybe_vote(block, out)

    def _maybe_vote(self, block: Block, out: Output) -> None:
        if block.view <= self.genesis.view:
            return
        if not self._vote_view_ok(block):
            return
        if not self._safe_to_vote(block):
            return
        vote = self.make_vote(block.id, block.view, Phase.GENERIC)
        self.safety.highest_voted[Phase.GENERIC] = block.view
        self._last_vote = vote
        # votes flow to the next view's leader, which is what lets that
        # leader embed the QC in its own proposal
        out.sends.append((self.leader_of(block.view + 1), VoteMsg(vote)))

    def _vote_view_ok(self, block: Block) -> bool:
        return block.view > self.safety.highest_voted[Phase.GENERIC]

    def on_view_timeout(self, view: ViewNumber) -> Output:
        """A view died without the vote turning into visible progress.
        Re-send the newest vote to the upcoming leader so a quorum that
        was swallowed by a faulty aggregator can still form."""
        out = Output()
        lv = self._last_vote
        if lv is not None and lv.view > self.safety.highest_qc.view:
            out.sends.append((self.leader_of(view + 1), VoteMsg(lv)))
        return out

    def _safe_to_vote(self, block: Block) -> bool:
        lock = self.safety.locked_qc
        if block.justify.view > lock.view:
            return True
        return self.store.extends(block.id, lock.block_id)

    # -- vote aggregation -------------------------------------------------

    def _on_vote(self, src: NodeId, vote: Vote, out: Output) -> None:
        # Any node may aggregate: a certificate formed from genuine votes
        # is sound no matter who assembled it, and timed-out views route
        # their votes past a faulty next leader to whoever proposes next.
        self._check_vote_token(vote)
        if vote.phase is not Phase.GENERIC:
            out.notes.append(("reject", "vote_phase", vote.block_id))
            return
        if not self._retain_vote(vote):
            out.notes.append(("reject", "stale_vote", vote.block_id))
            return
        key = (vote.block_id, vote.view)
        if key in self._formed:
            return
        bucket = self.pending_votes.setdefault(key, {})
        if vote.voter in bucket:
            return
        bucket[vote.voter] = vote
        if len(bucket) >= self.threshold:
            qc = form_qc(list(bucket.values()), self.n, self.config.aggregate_qc)
            self._formed.add(key)
            out.notes.append(("qc_formed", qc.view, qc.phase.value, qc.block_id))
            out.formed_qc = qc
            self._deliver_qc(qc, src, out)

    def _retain_vote(self, vote: Vote) -> bool:
        if vote.view >= self.safety.current_view - 1:
            return True
        # an older vote whose view still has no certificate may be the
        # missing piece of a quorum a faulty aggregator swallowed
        return vote.view > self.safety.highest_qc.view

    def _prune_votes(self) -> None:
        floor = self.safety.current_view - 1
        served = self.safety.highest_qc.view
        for key in [k for k in self.pending_votes if k[1] < floor and k[1] <= served]:
            del self.pending_votes[key]

    # -- QC processing -----------------------------------------------------

    def _on_qc_delivered(self, qc: QuorumCertificate, resolved: bool, out: Output) -> None:
        if resolved:
            self.process_qc(qc, out)
            return
        # the block is still in flight; the view advance must not wait on it
        if qc.view > self.genesis.view and qc.view >= self.safety.highest_qc.view:
            self.safety.observe_qc(qc)
            out.observe(qc.view)

    def _on_qc_resolved(self, qc: QuorumCertificate, out: Output) -> None:
        self.process_qc(qc, out)

    def process_qc(self, qc: QuorumCertificate, out: Output) -> None:
        """Apply a (verified, resolvable) QC: one-chain updates the key,
        two-chain raises the lock, an uninterrupted three-chain commits,
        and the pacemaker is told progress happened."""
        if qc.view <= self.genesis.view:
            return
        if qc.view < self.safety.highest_qc.view:
            # old news: state is monotone, nothing to redo
            return
        self.safety.observe_qc(qc)
        out.observe(qc.view)
        b = self.store.get(qc.block_id)
        if b is None:
            return
        b1 = self.store.get(b.justify.block_id)
        if b1 is None or b.justify.view <= self.genesis.view:
            return
        self._update_lock(b.justify, out)
        b2 = self.store.get(b1.justify.block_id)
        if b2 is None or b1.justify.view <= self.genesis.view:
            return
        self._try_commit(qc, b, b1, b2, out)

    def _try_commit(
        self, qc: QuorumCertificate, b: Block, b1: Block, b2: Block, out: Output
    ) -> None:
        if (
            b.parent == b1.id
            and b1.parent == b2.id
            and b.view == b1.view + 1
            and b1.view == b2.view + 1
        ):
            self._commit(b2, qc, out)
