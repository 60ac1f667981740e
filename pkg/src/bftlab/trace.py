"""Trace recording and emission.

A trace is the totally ordered record of everything a simulation did:
message sends and deliveries, timer activity, view entries, proposals,
certificate formations, lock movements, commits and violations. Given
the same scenario and seed the byte content of an emitted trace is
identical on every run; the replay audit relies on this.

Records are stored as small tuples (kind first) and serialized to JSON
Lines with a fixed field order per kind.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable

from .errors import IoError, ParseError

# field names per record kind, in emission order (after "kind")
RECORD_FIELDS: dict[str, tuple[str, ...]] = {
    "send": ("time", "node", "dst", "msg", "view", "ref", "units"),
    "deliver": ("time", "node", "src", "msg", "view", "ref", "units"),
    "timer_set": ("time", "node", "timer", "view", "fire_at"),
    "timer_fire": ("time", "node", "timer", "view", "status"),
    "view_enter": ("time", "node", "view", "cause"),
    "propose": ("time", "node", "view", "ref", "justify_view", "payload"),
    "qc_formed": ("time", "node", "view", "phase", "ref"),
    "lock": ("time", "node", "view", "ref"),
    "commit": ("time", "node", "ref", "height", "view", "cert_view", "cert_ref"),
    "delta_wait": ("time", "node", "view"),
    "violation": ("time", "node", "what", "ref"),
    "reject": ("time", "node", "reason", "ref"),
    "halt": ("time", "node", "reason"),
}


@dataclass
class Trace:
    """Ordered simulation record plus derived bookkeeping."""

    config: dict[str, Any]
    records: list[tuple] = field(default_factory=list)
    send_counts: dict[int, int] = field(default_factory=dict)
    send_units: dict[int, int] = field(default_factory=dict)
    committed: dict[int, list[str]] = field(default_factory=dict)
    commit_times: dict[int, list[int]] = field(default_factory=dict)
    stop_reason: str = ""
    end_time: int = 0
    halted: bool = False

    def add(self, kind: str, *fields) -> None:
        self.records.append((kind, *fields))

    def note_send(self, node: int, units: int) -> None:
        self.send_counts[node] = self.send_counts.get(node, 0) + 1
        self.send_units[node] = self.send_units.get(node, 0) + units

    def note_commit(self, node: int, block_id: str, time: int) -> None:
        self.committed.setdefault(node, []).append(block_id)
        self.commit_times.setdefault(node, []).append(time)

    def correct_nodes(self) -> list[int]:
        byz = {b[0] for b in self.config.get("byzantine", [])}
        return [i for i in range(self.config["n"]) if i not in byz]

    def iter_kind(self, kind: str) -> Iterable[tuple]:
        return (r for r in self.records if r[0] == kind)

    # -- serialization ---------------------------------------------------

    def to_lines(self) -> list[str]:
        lines = [json.dumps({"kind": "header", "config": self.config}, sort_keys=True)]
        for rec in self.records:
            kind = rec[0]
            names = RECORD_FIELDS[kind]
            obj = {"kind": kind}
            for name, value in zip(names, rec[1:]):
                obj[name] = value
            lines.append(json.dumps(obj))
        footer = {
            "kind": "footer",
            "stop_reason": self.stop_reason,
            "end_time": self.end_time,
            "halted": self.halted,
            "send_counts": {str(k): v for k, v in sorted(self.send_counts.items())},
            "send_units": {str(k): v for k, v in sorted(self.send_units.items())},
        }
        lines.append(json.dumps(footer, sort_keys=True))
        return lines

    def dump(self, path) -> None:
        try:
            with open(path, "w") as fh:
                fh.write("\n".join(self.to_lines()))
                fh.write("\n")
        except OSError as exc:
            raise IoError(f"cannot write trace to {path}: {exc}") from exc

    @staticmethod
    def load(path) -> "Trace":
        try:
            with open(path) as fh:
                lines = [ln for ln in fh.read().splitlines() if ln.strip()]
        except OSError as exc:
            raise IoError(f"cannot read trace from {path}: {exc}") from exc
        if not lines:
            raise ParseError(f"trace file {path} is empty")
        header = json.loads(lines[0])
        if header.get("kind") != "header":
            raise ParseError("trace file does not start with a header record")
        config = header["config"]
        # config lists arrive as JSON arrays; normalize byzantine entries
        config["byzantine"] = [tuple(b) for b in config.get("byzantine", [])]
        trace = Trace(config=config)
        for ln in lines[1:]:
            obj = json.loads(ln)
            kind = obj.get("kind")
            if kind == "footer":
                trace.stop_reason = obj.get("stop_reason", "")
                trace.end_time = obj.get("end_time", 0)
                trace.halted = obj.get("halted", False)
                trace.send_counts = {int(k): v for k, v in obj.get("send_counts", {}).items()}
                trace.send_units = {int(k): v for k, v in obj.get("send_units", {}).items()}
                continue
            if kind not in RECORD_FIELDS:
                raise ParseError(f"unknown trace record kind {kind!r}")
            names = RECORD_FIELDS[kind]
            rec = (kind, *(obj.get(name) for name in names))
            trace.records.append(rec)
            if kind == "commit":
                trace.note_commit(obj["node"], obj["ref"], obj["time"])
        return trace
