"""Exception types shared across the package."""


class BftLabError(Exception):
    """Base class for all package errors."""


class MalformedClusterSize(BftLabError):
    """Cluster size is not of the form 3f+1 with f >= 1."""


class InsufficientVotes(BftLabError):
    """Fewer than 2f+1 distinct voters behind a would-be QC."""


class MixedSubjects(BftLabError):
    """Votes offered for aggregation disagree on (block, view, phase)."""


class UnknownBlock(BftLabError):
    """A block id was referenced that the store does not hold."""


class InvalidQC(BftLabError):
    """A quorum certificate failed verification."""


class BadSignatureToken(BftLabError):
    """A vote carried a token that does not match its claimed subject."""


class NotLeader(BftLabError):
    """A leader-only operation was invoked on a non-leader."""


class StaleView(BftLabError):
    """An operation referenced a view the node has already moved past."""


class ForgedToken(BftLabError):
    """A Byzantine strategy fabricated a correct node's signature token."""


class ClockRegression(BftLabError):
    """The simulated clock attempted to move backwards."""


class ConfigInvalid(BftLabError):
    """Scenario configuration failed validation.

    `problems` lists (field, message) pairs so callers can report
    field-precise diagnostics.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [("config", problems)]
        self.problems = list(problems)
        super().__init__("; ".join(f"{f}: {m}" for f, m in self.problems))


class ParseError(BftLabError):
    """Scenario text could not be parsed at all."""


class SimulationStall(BftLabError):
    """The event loop exceeded its internal safety cap."""


class IoError(BftLabError):
    """Trace or report emission failed."""
