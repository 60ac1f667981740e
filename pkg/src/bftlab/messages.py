"""Wire messages exchanged through the simulated network.

Each message is a small immutable value. `size_units` implements the
accounting model used throughout the metrics: every message costs one
base unit, proposals add their payload, and anything carrying a quorum
certificate adds the certificate's accounting size.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import Block, NodeId, QuorumCertificate, ViewNumber, Vote


@dataclass(frozen=True, slots=True)
class Proposal:
    block: Block


@dataclass(frozen=True, slots=True)
class VoteMsg:
    vote: Vote


@dataclass(frozen=True, slots=True)
class QCAnnounce:
    """A standalone QC broadcast: two-phase certify/ratify certificates,
    or a chained-mode QC formed before the pacemaker granted the view."""

    qc: QuorumCertificate


@dataclass(frozen=True, slots=True)
class StatusRequest:
    view: ViewNumber


@dataclass(frozen=True, slots=True)
class StatusMsg:
    """A node's locked QC, reported to a leader gathering state before it
    proposes after a timeout."""

    view: ViewNumber
    lock: QuorumCertificate


@dataclass(frozen=True, slots=True)
class FetchRequest:
    block_id: str


@dataclass(frozen=True, slots=True)
class FetchResponse:
    block: Block


@dataclass(frozen=True, slots=True)
class ViewSync:
    """All-to-all view-change message of the baseline pacemaker; carries
    the sender's highest QC so laggards catch up."""

    view: ViewNumber
    highest: QuorumCertificate


@dataclass(frozen=True, slots=True)
class EpochSync:
    epoch: int


@dataclass(frozen=True, slots=True)
class Wish:
    """Timeout wish sent to a relayer leader only."""

    view: ViewNumber


@dataclass(frozen=True, slots=True)
class ViewCertificate:
    """Aggregated proof that 2f+1 nodes wished a view; accounting size 1."""

    view: ViewNumber
    signers: frozenset[NodeId]


Message = (
    Proposal
    | VoteMsg
    | QCAnnounce
    | StatusRequest
    | StatusMsg
    | FetchRequest
    | FetchResponse
    | ViewSync
    | EpochSync
    | Wish
    | ViewCertificate
)

PROTOCOL_KINDS = frozenset(
    {"proposal", "vote", "qc", "status_request", "status", "fetch_request", "fetch_response"}
)
PACEMAKER_KINDS = frozenset({"view_sync", "epoch_sync", "wish", "view_cert"})


def message_kind(msg: Message) -> str:
    return _KINDS[type(msg)]


_KINDS: dict[type, str] = {
    Proposal: "proposal",
    VoteMsg: "vote",
    QCAnnounce: "qc",
    StatusRequest: "status_request",
    StatusMsg: "status",
    FetchRequest: "fetch_request",
    FetchResponse: "fetch_response",
    ViewSync: "view_sync",
    EpochSync: "epoch_sync",
    Wish: "wish",
    ViewCertificate: "view_cert",
}


def message_size(msg: Message) -> int:
    """Accounting size in units: 1 base + payload for proposals + carried
    QC sizes. A view certificate counts as one aggregated unit."""
    if isinstance(msg, Proposal):
        return 1 + msg.block.payload_units + msg.block.justify.size_units
    if isinstance(msg, QCAnnounce):
        return 1 + msg.qc.size_units
    if isinstance(msg, StatusMsg):
        return 1 + msg.lock.size_units
    if isinstance(msg, ViewSync):
        return 1 + msg.highest.size_units
    if isinstance(msg, FetchResponse):
        return 1 + msg.block.payload_units + msg.block.justify.size_units
    if isinstance(msg, ViewCertificate):
        return 2
    return 1


def message_payload_units(msg: Message) -> int:
    """Payload units that slow this message down in the delay model."""
    if isinstance(msg, (Proposal, FetchResponse)):
        return msg.block.payload_units
    return 0


def message_view(msg: Message) -> ViewNumber | None:
    if isinstance(msg, Proposal):
        return msg.block.view
    if isinstance(msg, VoteMsg):
        return msg.vote.view
    if isinstance(msg, QCAnnounce):
        return msg.qc.view
    if isinstance(msg, (StatusRequest, StatusMsg, ViewSync, Wish, ViewCertificate)):
        return msg.view
    return None


def message_ref(msg: Message) -> str | None:
    """Block id the message is about, for the trace."""
    if isinstance(msg, Proposal):
        return msg.block.id
    if isinstance(msg, VoteMsg):
        return msg.vote.block_id
    if isinstance(msg, QCAnnounce):
        return msg.qc.block_id
    if isinstance(msg, StatusMsg):
        return msg.lock.block_id
    if isinstance(msg, FetchRequest):
        return msg.block_id
    if isinstance(msg, FetchResponse):
        return msg.block.id
    if isinstance(msg, ViewSync):
        return msg.highest.block_id
    return None
