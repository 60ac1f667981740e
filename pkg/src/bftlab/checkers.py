"""Safety and liveness verdicts over completed traces.

The safety checker is the ground truth for the whole laboratory: for
every pair of correct nodes, the shorter committed sequence must be a
prefix of the longer. The liveness checker demands steady commit
progress after stabilization, inside a window derived from the timeouts
the run actually used, so only genuine stalls fail it.
"""

from __future__ import annotations

from dataclasses import dataclass

from .trace import Trace

PASS = "PASS"
FAIL = "FAIL"
NOT_APPLICABLE = "NOT_APPLICABLE"


@dataclass(frozen=True)
class Verdict:
    status: str
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.status != FAIL

    def __str__(self) -> str:
        return f"{self.status}" + (f" ({self.detail})" if self.detail else "")


def check_safety(trace: Trace) -> Verdict:
    """Pairwise prefix consistency of correct nodes' committed logs."""
    correct = trace.correct_nodes()
    logs = {i: trace.committed.get(i, []) for i in correct}
    worst: tuple[int, int, int] | None = None  # (height, a, b)
    for idx, a in enumerate(correct):
        for b in correct[idx + 1:]:
            log_a, log_b = logs[a], logs[b]
            for height, (x, y) in enumerate(zip(log_a, log_b), start=1):
                if x != y:
                    if worst is None or height < worst[0]:
                        worst = (height, a, b)
                    break
    if worst is not None:
        height, a, b = worst
        return Verdict(
            FAIL,
            f"nodes {a} and {b} diverge at height {height}: "
            f"{logs[a][height - 1]} vs {logs[b][height - 1]}",
        )
    return Verdict(PASS, f"{len(correct)} logs prefix-consistent")


def liveness_window(trace: Trace) -> int:
    """Progress window: (f+2) times the largest view timeout the run
    armed, so backoff growth widens the demand instead of failing it."""
    f = trace.config["f"]
    longest = max(
        (rec[5] - rec[1] for rec in trace.iter_kind("timer_set") if rec[3] == "view"),
        default=trace.config["base_timeout"],
    )
    return (f + 2) * longest


def check_liveness(trace: Trace) -> Verdict:
    """Every correct node's committed height must grow within every
    window of length W after stabilization plus one synchronization
    period."""
    cfg = trace.config
    gst = cfg["gst"]
    if gst > trace.end_time:
        return Verdict(NOT_APPLICABLE, "stabilization never happened inside the horizon")
    window = liveness_window(trace)
    # nodes start view 1 together, so a run that is synchronous from the
    # first instant needs no synchronization allowance
    if gst == 0:
        start = 0
    else:
        start = gst + max(
            (rec[5] - rec[1] for rec in trace.iter_kind("timer_set") if rec[3] == "view"),
            default=cfg["base_timeout"],
        ) + cfg["delta_cap"]
    end = trace.end_time
    if end <= start:
        return Verdict(NOT_APPLICABLE, "no post-stabilization runway")
    for node in trace.correct_nodes():
        times = [t for t in trace.commit_times.get(node, []) if t >= start]
        marks = [start] + times + [end]
        for prev, cur in zip(marks, marks[1:]):
            if cur - prev >= window:
                return Verdict(
                    FAIL,
                    f"node {node} made no progress in [{prev}, {cur}] "
                    f"(window {window})",
                )
    return Verdict(PASS, f"window {window}, runway [{start}, {end}]")


def audit_commit_certification(trace: Trace) -> Verdict:
    """Every commit record must cite a certificate whose formation the
    trace recorded no later than the commit: commits never appear out of
    thin air."""
    formed_at: dict[tuple[int, str], int] = {}
    for rec in trace.iter_kind("qc_formed"):
        key = (rec[3], rec[5])  # (view, block_id)
        formed_at.setdefault(key, rec[1])
    for rec in trace.iter_kind("commit"):
        when = formed_at.get((rec[6], rec[7]))
        if when is None or when > rec[1]:
            return Verdict(
                FAIL,
                f"commit of {rec[3]} at t={rec[1]} cites certificate "
                f"(view {rec[6]}, {rec[7]}) that never formed before it",
            )
    return Verdict(PASS, "all commits certified")
