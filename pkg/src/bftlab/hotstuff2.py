"""Two-phase consensus with the responsive/wait view-entry rule.

Each view runs two certificate rounds on one block. The first round
(prepare) certifies that the leader proposed a single value: collecting
2f+1 prepare votes yields a prepare-QC, and any node that sees that QC
becomes *locked* on it. The second round (commit) ratifies the lock:
2f+1 commit votes yield a commit-QC, which makes the block final.

A new leader entering a view chooses between two entry modes:

* responsive: it already holds a QC from exactly the preceding view, so
  no newer lock can exist anywhere and it proposes immediately, at
  network speed.
* delta-wait: otherwise some node's view timer must already have expired,
  so responsiveness is lost anyway; the leader asks everyone for their
  lock, waits one maximum network delay, and proposes on the highest lock
  it heard of.

Views are not pipelined: one decision per view, mirroring the two
view-change cases exactly.
"""

from __future__ import annotations

from .core import Block, NodeId, Phase, QuorumCertificate, ViewNumber, Vote, form_qc
from .errors import NotLeader
from .messages import Proposal, QCAnnounce, StatusMsg, StatusRequest, VoteMsg
from .protocol import Output, ProtocolNode

RESPONSIVE = "responsive"
DELTA_WAIT = "delta_wait"


class HotStuff2Node(ProtocolNode):
    """One node's two-phase state machine."""

    protocol_name = "hotstuff2"

    def __init__(self, node_id, config):
        super().__init__(node_id, config)
        self.entry_mode: str | None = None
        self.proposed_in: set[ViewNumber] = set()
        # vote buffers for views this node leads: (view, phase, block_id) -> voter -> vote
        self._votes: dict[tuple[ViewNumber, Phase, str], dict[NodeId, Vote]] = {}
        self._formed: set[tuple[ViewNumber, Phase, str]] = set()
        # statuses collected while waiting to propose: view -> sender -> lock
        self._status_buf: dict[ViewNumber, dict[NodeId, QuorumCertificate]] = {}
        # prepare-QC uniqueness evidence: view -> block_id
        self._seen_prepare: dict[ViewNumber, str] = {}
        self._commit_voted: set[ViewNumber] = set()

    # -- view entry -------------------------------------------------------

    def on_view_entered(self, view: ViewNumber) -> Output:
        self.safety.current_view = max(self.safety.current_view, view)
        self._prune()
        if self.leader_of(view) != self.id:
            return Output()
        return self.enter_view(view)

    def enter_view(self, view: ViewNumber) -> Output:
        """Leader-side entry: propose now if the preceding view's QC is in
        hand, otherwise collect locks for one maximum delay first."""
        if self.leader_of(view) != self.id:
            raise NotLeader(f"node {self.id} does not lead view {view}")
        out = Output()
        if self.safety.highest_qc.view == view - 1:
            self.entry_mode = RESPONSIVE
            self._propose(view, self.safety.highest_qc, out)
        else:
            self.entry_mode = DELTA_WAIT
            out.notes.append(("delta_wait", view))
            out.sends.append((None, StatusRequest(view)))
            out.delta_timer = self.config.delta_cap
        return out

    def on_delta_timer(self, view: ViewNumber) -> Output:
        out = Output()
        if self.safety.current_view != view or view in self.proposed_in:
            return out
        best = self.safety.locked_qc
        for lock in self._status_buf.get(view, {}).values():
            if lock.view > best.view:
                best = lock
        self._propose(view, best, out)
        return out

    def _propose(self, view: ViewNumber, justify: QuorumCertificate, out: Output) -> None:
        block = Block.make(
            justify.block_id, view, justify, self.config.payload_units, self.id
        )
        self.proposed_in.add(view)
        out.notes.append(("propose", view, block.id, justify.view, block.payload_units))
        if justify.block_id not in self.store:
            # propose on the reported lock anyway; fetch its block from
            # whoever told us about it so our own chain fills in
            holder = self._holder_of(view, justify)
            if holder is not None:
                self._request(justify.block_id, holder, out)
        out.sends.append((None, Proposal(block)))

    def _holder_of(self, view: ViewNumber, lock: QuorumCertificate) -> NodeId | None:
        for sender, qc in self._status_buf.get(view, {}).items():
            if qc.block_id == lock.block_id:
                return sender
        return None

    # -- proposal handling --------------------------------------------------

    def _on_block_admitted(self, block: Block, out: Output) -> None:
        self._ingest_qc(block.justify, out)
        self._maybe_prepare_vote(block, out)

    def _maybe_prepare_vote(self, block: Block, out: Output) -> None:
        if block.view <= self.genesis.view:
            return
        if not self._prepare_view_ok(block):
            return
        lock = self.safety.locked_qc
        if not (
            block.justify.view >= lock.view
            or self.store.extends(block.id, lock.block_id)
        ):
            return
        vote = self.make_vote(block.id, block.view, Phase.PREPARE)
        self.safety.highest_voted[Phase.PREPARE] = block.view
        out.sends.append((block.proposer, VoteMsg(vote)))

    def _prepare_view_ok(self, block: Block) -> bool:
        return block.view > self.safety.highest_voted[Phase.PREPARE]

    # -- certificate handling -------------------------------------------------

    def _ingest_qc(self, qc: QuorumCertificate, out: Output) -> None:
        if qc.phase is Phase.PREPARE:
            self.on_prepare_qc(qc, out)
        elif qc.phase is Phase.COMMIT:
            self._on_commit_qc_meta(qc, out)
            if qc.block_id in self.store:
                self._on_commit_qc_commit(qc, out)

    def _on_qc_delivered(self, qc: QuorumCertificate, resolved: bool, out: Output) -> None:
        if qc.phase is Phase.PREPARE:
            self.on_prepare_qc(qc, out)
        elif qc.phase is Phase.COMMIT:
            self._on_commit_qc_meta(qc, out)
            if resolved:
                self._on_commit_qc_commit(qc, out)

    def _on_qc_resolved(self, qc: QuorumCertificate, out: Output) -> None:
        if qc.phase is Phase.COMMIT:
            self._on_commit_qc_commit(qc, out)

    def on_prepare_qc(self, qc: QuorumCertificate, out: Output) -> None:
        """Lock on the certificate and ratify it with a commit vote if it
        belongs to the current (or a newer) view."""
        if qc.view <= self.genesis.view:
            return
        seen = self._seen_prepare.get(qc.view)
        if seen is not None and seen != qc.block_id:
            # two prepare certificates in one view require f+1 corrupted
            # nodes; reaching here means the run's assumptions are broken
            out.notes.append(("violation", "equivocation_evidence", qc.block_id))
            out.halt = True
            return
        self._seen_prepare[qc.view] = qc.block_id
        self._update_lock(qc, out)
        self.safety.observe_qc(qc)
        if self._commit_vote_ok(qc):
            self._commit_voted.add(qc.view)
            vote = self.make_vote(qc.block_id, qc.view, Phase.COMMIT)
            out.sends.append((self.leader_of(qc.view), VoteMsg(vote)))

    def _commit_vote_ok(self, qc: QuorumCertificate) -> bool:
        return qc.view >= self.safety.current_view and qc.view not in self._commit_voted

    def _on_commit_qc_meta(self, qc: QuorumCertificate, out: Output) -> None:
        """Block-independent effects of a commit certificate."""
        self.safety.observe_qc(qc)
        self._update_lock(qc, out)
        out.observe(qc.view)

    def _on_commit_qc_commit(self, qc: QuorumCertificate, out: Output) -> None:
        block = self.store.get(qc.block_id)
        if block is not None:
            self._commit(block, qc, out)

    def on_commit_qc(self, qc: QuorumCertificate, out: Output | None = None) -> Output:
        """Full commit-certificate handling; block must be resolvable."""
        out = out if out is not None else Output()
        self._on_commit_qc_meta(qc, out)
        self._on_commit_qc_commit(qc, out)
        return out

    # -- vote aggregation --------------------------------------------------

    def _on_vote(self, src: NodeId, vote: Vote, out: Output) -> None:
        self._check_vote_token(vote)
        if vote.phase is Phase.PREPARE:
            expects_me = vote.view in self.proposed_in
        elif vote.phase is Phase.COMMIT:
            expects_me = self.leader_of(vote.view) == self.id
        else:
            expects_me = False
        if not expects_me:
            out.notes.append(("reject", "not_aggregator", vote.block_id))
            return
        if not self._retain_vote(vote):
            out.notes.append(("reject", "stale_vote", vote.block_id))
            return
        key = (vote.view, vote.phase, vote.block_id)
        if key in self._formed:
            return
        bucket = self._votes.setdefault(key, {})
        if vote.voter in bucket:
            return
        bucket[vote.voter] = vote
        if len(bucket) >= self.threshold:
            qc = form_qc(list(bucket.values()), self.n, self.config.aggregate_qc)
            self._formed.add(key)
            out.notes.append(("qc_formed", qc.view, qc.phase.value, qc.block_id))
            # the leader applies its own certificate, then disseminates it
            self._ingest_qc(qc, out)
            out.sends.append((None, QCAnnounce(qc)))

    def _retain_vote(self, vote: Vote) -> bool:
        return vote.view >= self.safety.current_view - 1

    def _prune(self) -> None:
        floor = self.safety.current_view - 1
        for key in [k for k in self._votes if k[0] < floor]:
            del self._votes[key]
        for view in [v for v in self._status_buf if v < self.safety.current_view]:
            del self._status_buf[view]
        self._commit_voted = {v for v in self._commit_voted if v >= floor}

    # -- status exchange ------------------------------------------------------

    def _on_status(self, src: NodeId, msg: StatusMsg, out: Output) -> None:
        if self.leader_of(msg.view) != self.id or msg.view < self.safety.current_view:
            return
        self._status_buf.setdefault(msg.view, {})[src] = msg.lock
        # a reported lock is a real prepare certificate: adopt it
        self._deliver_qc(msg.lock, src, out)
