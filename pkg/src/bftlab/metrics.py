"""Communication and latency accounting over a trace.

All message math is in abstract units: one unit per message, plus
payload units on proposals, plus the accounting size of any carried
certificate. Totals reconcile exactly with the per-node counters the
trace maintained while running; a dedicated check asserts that.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from statistics import mean, median

from .messages import PACEMAKER_KINDS
from .trace import Trace


@dataclass
class MetricsReport:
    decisions: int = 0
    total_messages: int = 0
    total_units: int = 0
    per_decision_msgs_mean: float = 0.0
    per_decision_msgs_max: int = 0
    per_decision_units_mean: float = 0.0
    per_decision_units_max: int = 0
    latency_mean: float = 0.0
    latency_min: int = 0
    latency_max: int = 0
    latency_p50: float = 0.0
    view_timeouts: int = 0
    views_entered: int = 0
    timeout_entries: int = 0
    qc_entries: int = 0
    pacemaker_messages: int = 0
    pacemaker_units: int = 0
    protocol_messages: int = 0
    protocol_units: int = 0
    send_counts: dict[int, int] = field(default_factory=dict)
    send_units: dict[int, int] = field(default_factory=dict)
    load_balance_ratio: float = 0.0
    delta_waits: int = 0

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["send_counts"] = {str(k): v for k, v in sorted(self.send_counts.items())}
        d["send_units"] = {str(k): v for k, v in sorted(self.send_units.items())}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def render_table(self) -> str:
        rows = [
            ("decisions", self.decisions),
            ("messages total", self.total_messages),
            ("units total", self.total_units),
            ("msgs/decision mean", round(self.per_decision_msgs_mean, 2)),
            ("msgs/decision max", self.per_decision_msgs_max),
            ("units/decision mean", round(self.per_decision_units_mean, 2)),
            ("commit latency mean", round(self.latency_mean, 2)),
            ("commit latency p50", round(self.latency_p50, 2)),
            ("commit latency min/max", f"{self.latency_min}/{self.latency_max}"),
            ("views entered", self.views_entered),
            ("view timeouts", self.view_timeouts),
            ("entries timeout/qc", f"{self.timeout_entries}/{self.qc_entries}"),
            ("pacemaker msgs (units)", f"{self.pacemaker_messages} ({self.pacemaker_units})"),
            ("protocol msgs (units)", f"{self.protocol_messages} ({self.protocol_units})"),
            ("load balance max/min", round(self.load_balance_ratio, 3)),
            ("delta waits", self.delta_waits),
        ]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


def first_commit_times(trace: Trace) -> dict[str, int]:
    """Earliest time any correct node committed each block."""
    correct = set(trace.correct_nodes())
    firsts: dict[str, int] = {}
    for rec in trace.iter_kind("commit"):
        if rec[2] in correct and rec[3] not in firsts:
            firsts[rec[3]] = rec[1]
    return firsts


def first_send_times(trace: Trace) -> dict[str, int]:
    """Earliest proposal broadcast time per block id."""
    firsts: dict[str, int] = {}
    for rec in trace.iter_kind("send"):
        if rec[4] == "proposal" and rec[6] not in firsts:
            firsts[rec[6]] = rec[1]
    return firsts


def commit_latencies(trace: Trace) -> list[int]:
    sends = first_send_times(trace)
    commits = first_commit_times(trace)
    return [commits[b] - sends[b] for b in commits if b in sends]


def messages_in_window(trace: Trace, t0: int, t1: int) -> tuple[int, int]:
    """(count, units) of sends with t0 < send_time <= t1."""
    count = units = 0
    for rec in trace.iter_kind("send"):
        if t0 < rec[1] <= t1:
            count += 1
            units += rec[7]
    return count, units


def compute_metrics(trace: Trace) -> MetricsReport:
    report = MetricsReport()
    sends = list(trace.iter_kind("send"))
    report.total_messages = len(sends)
    report.total_units = sum(rec[7] for rec in sends)
    for rec in sends:
        if rec[4] in PACEMAKER_KINDS:
            report.pacemaker_messages += 1
            report.pacemaker_units += rec[7]
        else:
            report.protocol_messages += 1
            report.protocol_units += rec[7]

    commit_order = sorted(set(first_commit_times(trace).values()))
    report.decisions = len(commit_order)
    if commit_order:
        # sends are chronological, so one pass splits them into
        # per-decision segments
        seg_msgs, seg_units = [], []
        idx = 0
        for t in commit_order:
            c = u = 0
            while idx < len(sends) and sends[idx][1] <= t:
                c += 1
                u += sends[idx][7]
                idx += 1
            seg_msgs.append(c)
            seg_units.append(u)
        report.per_decision_msgs_mean = mean(seg_msgs)
        report.per_decision_msgs_max = max(seg_msgs)
        report.per_decision_units_mean = mean(seg_units)
        report.per_decision_units_max = max(seg_units)

    latencies = commit_latencies(trace)
    if latencies:
        report.latency_mean = mean(latencies)
        report.latency_min = min(latencies)
        report.latency_max = max(latencies)
        report.latency_p50 = median(latencies)

    report.view_timeouts = sum(
        1 for rec in trace.iter_kind("timer_fire") if rec[3] == "view" and rec[5] == "live"
    )
    for rec in trace.iter_kind("view_enter"):
        report.views_entered += 1
        if rec[4] in ("timeout", "sync", "cert", "epoch"):
            report.timeout_entries += 1
        elif rec[4] == "qc":
            report.qc_entries += 1
    report.delta_waits = sum(1 for _ in trace.iter_kind("delta_wait"))

    report.send_counts = dict(trace.send_counts)
    report.send_units = dict(trace.send_units)
    correct = trace.correct_nodes()
    units = [trace.send_units.get(i, 0) for i in correct]
    if units and min(units) > 0:
        report.load_balance_ratio = max(units) / min(units)
    return report


def reconcile(trace: Trace, report: MetricsReport) -> bool:
    """Totals must match the counters maintained during the run."""
    return (
        report.total_messages == sum(trace.send_counts.values())
        and report.total_units == sum(trace.send_units.values())
    )
