"""Domain types shared by both consensus protocols.

Blocks, votes, quorum certificates, the per-node block store and the
quorum arithmetic sit here. Everything is an immutable value except
``BlockStore`` and ``SafetyState``, which are owned by exactly one node's
state machine.

Signatures are modeled, not computed: a ``SignatureToken`` is an
unforgeable-by-convention record of who signed what. The simulator
enforces unforgeability as an invariant instead of running cryptography.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

from .errors import (
    InsufficientVotes,
    MalformedClusterSize,
    MixedSubjects,
    UnknownBlock,
)

NodeId = int
ViewNumber = int

GENESIS_PARENT = "<root>"


class Phase(str, Enum):
    """Vote/QC phase. Chained mode uses only GENERIC; the two-phase
    protocol distinguishes PREPARE (certify) from COMMIT (ratify)."""

    GENERIC = "generic"
    PREPARE = "prepare"
    COMMIT = "commit"


@lru_cache(maxsize=200_000)
def digest(*parts: object) -> str:
    """Deterministic short digest of a tuple of printable parts."""
    h = hashlib.sha256("|".join(str(p) for p in parts).encode())
    return h.hexdigest()[:16]


def quorum_threshold(n: int) -> int:
    """Votes needed for a quorum certificate in a cluster of n = 3f+1.

    Cluster sizes are restricted to exactly 3f+1 with f >= 1; anything
    else is rejected rather than rounding f, which keeps the
    quorum-intersection arithmetic exact.
    """
    if n < 4 or (n - 1) % 3 != 0:
        raise MalformedClusterSize(f"cluster size must be 3f+1 with f >= 1, got n={n}")
    f = (n - 1) // 3
    return 2 * f + 1


def fault_bound(n: int) -> int:
    """f for a valid cluster size n = 3f+1."""
    quorum_threshold(n)
    return (n - 1) // 3


@dataclass(frozen=True, slots=True)
class SignatureToken:
    """Record that `signer` signed `subject`; stands in for a signature."""

    signer: NodeId
    subject: str

    @staticmethod
    def subject_of(block_id: str, view: ViewNumber, phase: Phase) -> str:
        return digest("tok", block_id, view, phase.value)


@dataclass(frozen=True, slots=True)
class QuorumCertificate:
    """Aggregated evidence that 2f+1 distinct nodes voted for one block
    in one view and phase.

    size_units is the accounting size used by the metrics: 1 when
    signature aggregation is modeled as on, len(signers) otherwise.
    """

    block_id: str
    view: ViewNumber
    phase: Phase
    signers: frozenset[NodeId]
    tokens: tuple[SignatureToken, ...]
    size_units: int

    def subject(self) -> str:
        return SignatureToken.subject_of(self.block_id, self.view, self.phase)


@dataclass(frozen=True, slots=True)
class Block:
    """A proposal: parent link, view, the QC it carries, and an abstract
    payload size. The id is a structural digest, so identical content
    yields an identical id on every node and every replay."""

    id: str
    parent: str
    view: ViewNumber
    justify: QuorumCertificate
    payload_units: int
    proposer: NodeId

    @staticmethod
    def make(
        parent: str,
        view: ViewNumber,
        justify: QuorumCertificate,
        payload_units: int,
        proposer: NodeId,
    ) -> "Block":
        if view <= justify.view:
            raise ValueError(f"block view {view} must exceed justify view {justify.view}")
        block_id = digest(
            "blk", parent, view, justify.block_id, justify.view, justify.phase.value,
            payload_units, proposer,
        )
        return Block(block_id, parent, view, justify, payload_units, proposer)


@dataclass(frozen=True, slots=True)
class Vote:
    block_id: str
    view: ViewNumber
    phase: Phase
    voter: NodeId
    sig: SignatureToken

    @staticmethod
    def make(block_id: str, view: ViewNumber, phase: Phase, voter: NodeId) -> "Vote":
        token = SignatureToken(voter, SignatureToken.subject_of(block_id, view, phase))
        return Vote(block_id, view, phase, voter, token)


GENESIS_ID = digest("blk", "genesis")


def make_genesis(n: int, aggregate: bool = True) -> tuple[Block, QuorumCertificate]:
    """Synthetic view-0 block plus its self-justifying QC, installed in
    every store at start. The QC carries tokens from the first 2f+1 node
    ids so that it verifies like any other QC."""
    threshold = quorum_threshold(n)
    signers = frozenset(range(threshold))
    subject = SignatureToken.subject_of(GENESIS_ID, 0, Phase.GENERIC)
    tokens = tuple(SignatureToken(i, subject) for i in range(threshold))
    qc = QuorumCertificate(
        block_id=GENESIS_ID,
        view=0,
        phase=Phase.GENERIC,
        signers=signers,
        tokens=tokens,
        size_units=1 if aggregate else threshold,
    )
    block = Block(GENESIS_ID, GENESIS_PARENT, 0, qc, 0, 0)
    return block, qc


def form_qc(votes: set[Vote] | list[Vote], n: int, aggregate: bool = True) -> QuorumCertificate:
    """Aggregate matching votes into a QC.

    Duplicate votes from one signer collapse to a single entry before the
    threshold check. When more than 2f+1 distinct voters are supplied,
    the lowest 2f+1 node ids are kept so the certificate always carries
    exactly the quorum it claims.
    """
    votes = list(votes)
    if not votes:
        raise InsufficientVotes("no votes supplied")
    subject = (votes[0].block_id, votes[0].view, votes[0].phase)
    for v in votes:
        if (v.block_id, v.view, v.phase) != subject:
            raise MixedSubjects(
                f"votes disagree on subject: {subject} vs "
                f"{(v.block_id, v.view, v.phase)}"
            )
    threshold = quorum_threshold(n)
    by_voter: dict[NodeId, Vote] = {}
    for v in sorted(votes, key=lambda v: v.voter):
        by_voter.setdefault(v.voter, v)
    if len(by_voter) < threshold:
        raise InsufficientVotes(
            f"{len(by_voter)} distinct voters, need {threshold}"
        )
    chosen = [by_voter[voter] for voter in sorted(by_voter)[:threshold]]
    return QuorumCertificate(
        block_id=votes[0].block_id,
        view=votes[0].view,
        phase=votes[0].phase,
        signers=frozenset(v.voter for v in chosen),
        tokens=tuple(v.sig for v in chosen),
        size_units=1 if aggregate else threshold,
    )


def verify_qc(qc: QuorumCertificate, n: int) -> bool:
    """Receiver-side check of a QC. Returns False on any defect instead
    of raising: malformed certificates are adversarial input, not bugs."""
    try:
        threshold = quorum_threshold(n)
    except MalformedClusterSize:
        return False
    if len(qc.tokens) != threshold:
        return False
    token_signers = {t.signer for t in qc.tokens}
    if len(token_signers) != threshold or token_signers != set(qc.signers):
        return False
    if any(s < 0 or s >= n for s in token_signers):
        return False
    subject = qc.subject()
    return all(t.subject == subject for t in qc.tokens)


def highest_qc(a: QuorumCertificate, b: QuorumCertificate) -> QuorumCertificate:
    """The QC with the larger view; ties break toward the
    lexicographically smaller block id so every node picks the same one."""
    if a.view != b.view:
        return a if a.view > b.view else b
    if a.block_id != b.block_id:
        return a if a.block_id < b.block_id else b
    return a


class BlockStore:
    """Per-node block tree plus the committed prefix.

    Every stored non-genesis block's parent is stored too; blocks whose
    parents are still in flight wait in a pending buffer owned by the
    protocol layer, not here. The committed prefix is always a
    root-anchored path; `commit_chain` reports a conflict instead of
    extending the prefix with a block from another branch.
    """

    def __init__(self, genesis: Block):
        self.blocks: dict[str, Block] = {genesis.id: genesis}
        self.children: dict[str, list[str]] = {}
        self.heights: dict[str, int] = {genesis.id: 0}
        self.committed: list[str] = []
        self._committed_set: set[str] = set()

    def __contains__(self, block_id: str) -> bool:
        return block_id in self.blocks

    def get(self, block_id: str) -> Block | None:
        return self.blocks.get(block_id)

    def insert(self, block: Block) -> bool:
        """Add a block whose parent is already stored. Returns False when
        the block was already present."""
        if block.id in self.blocks:
            return False
        if block.parent not in self.blocks:
            raise UnknownBlock(f"parent {block.parent} of {block.id} not stored")
        self.blocks[block.id] = block
        self.children.setdefault(block.parent, []).append(block.id)
        self.heights[block.id] = self.heights[block.parent] + 1
        return True

    def extends(self, descendant: str, ancestor: str) -> bool:
        """True iff `ancestor` lies on `descendant`'s parent path,
        reflexively."""
        if descendant not in self.blocks or ancestor not in self.blocks:
            raise UnknownBlock(
                f"extends needs both blocks stored: {descendant}, {ancestor}"
            )
        target_height = self.heights[ancestor]
        cur = self.blocks[descendant]
        while self.heights[cur.id] > target_height:
            cur = self.blocks[cur.parent]
        return cur.id == ancestor

    def committed_tip(self) -> str:
        return self.committed[-1] if self.committed else GENESIS_ID

    def is_committed(self, block_id: str) -> bool:
        return block_id in self._committed_set or block_id == GENESIS_ID

    def commit_chain(self, block: Block) -> tuple[list[Block], bool]:
        """Commit `block` and its uncommitted ancestors, oldest first.

        Returns (newly_committed, conflict). On conflict (the block's
        ancestry does not pass through the current committed tip) nothing
        is appended and conflict is True; the caller decides how loudly
        to fail.
        """
        if self.is_committed(block.id):
            return [], False
        path: list[Block] = []
        cur = block
        while not self.is_committed(cur.id):
            path.append(cur)
            cur = self.blocks[cur.parent]
        if cur.id != self.committed_tip():
            return [], True
        path.reverse()
        for b in path:
            self.committed.append(b.id)
            self._committed_set.add(b.id)
        return path, False


@dataclass
class SafetyState:
    """Per-node protocol memory: the lock, the highest QC (the key handed
    to the next leader), the highest view voted per phase, and the
    current view. Lock and key views never decrease."""

    locked_qc: QuorumCertificate
    highest_qc: QuorumCertificate
    highest_voted: dict[Phase, ViewNumber] = field(
        default_factory=lambda: {p: 0 for p in Phase}
    )
    current_view: ViewNumber = 0

    def observe_qc(self, qc: QuorumCertificate) -> None:
        self.highest_qc = highest_qc(self.highest_qc, qc)

    def raise_lock(self, qc: QuorumCertificate) -> None:
        self.locked_qc = highest_qc(self.locked_qc, qc)
