"""Scenario configuration: the single description of a simulation run.

Scenario files are flat `key = value` text; `#` starts a comment. A
small library of named presets ships with the package so the CLI can run
`bftlab run faultless` without any file on disk.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

from .core import fault_bound
from .errors import ConfigInvalid, ParseError

PROTOCOLS = ("hotstuff3", "hotstuff2")
PACEMAKER_NAMES = ("baseline", "epoch", "relayer")
LEADER_MODES = ("round_robin", "seeded_random")
STRATEGY_NAMES = ("crash", "silent_leader", "equivocator", "vote_withholder", "max_delay")

ADVERSARIAL_HOLD = "adversarial_hold"
RANDOM_UP_TO = "random_up_to"


@dataclass(frozen=True)
class ScenarioConfig:
    n: int = 4
    protocol: str = "hotstuff3"
    pacemaker: str = "baseline"
    leader_mode: str = "round_robin"
    gst: int = 0
    delta_cap: int = 1000
    delta_min: int = 10
    delta_max: int = 10
    payload_cost: int = 0
    payload_units: int = 0
    pre_gst_policy: tuple = (ADVERSARIAL_HOLD,)
    byzantine: tuple = ()  # tuples (node_id, strategy, param-or-None)
    seed: int = 1
    stop_commits: int | None = None
    stop_horizon: int | None = None
    aggregate_qc: bool = True
    base_timeout: int | None = None  # defaults to 4 * delta_cap
    backoff: float = 2.0
    name: str = "scenario"

    @property
    def f(self) -> int:
        return (self.n - 1) // 3

    def timeout(self) -> int:
        return self.base_timeout if self.base_timeout is not None else 4 * self.delta_cap

    def validate(self) -> "ScenarioConfig":
        problems: list[tuple[str, str]] = []
        if self.n < 4 or (self.n - 1) % 3 != 0:
            problems.append(("n", f"n must equal 3f+1 with f >= 1, got {self.n}"))
        else:
            fault_bound(self.n)
        if self.protocol not in PROTOCOLS:
            problems.append(("protocol", f"unknown protocol {self.protocol!r}"))
        if self.pacemaker not in PACEMAKER_NAMES:
            problems.append(("pacemaker", f"unknown pacemaker {self.pacemaker!r}"))
        if self.leader_mode not in LEADER_MODES:
            problems.append(("leader_mode", f"unknown leader mode {self.leader_mode!r}"))
        if self.delta_min < 0 or self.delta_max < self.delta_min:
            problems.append(("delta_min", "need 0 <= delta_min <= delta_max"))
        if self.delta_max > self.delta_cap:
            problems.append(("delta_max", "actual delay bound must not exceed the cap"))
        if self.gst < 0:
            problems.append(("gst", "gst must be non-negative"))
        if self.payload_cost < 0 or self.payload_units < 0:
            problems.append(("payload_units", "payload fields must be non-negative"))
        if self.pre_gst_policy[0] not in (ADVERSARIAL_HOLD, RANDOM_UP_TO):
            problems.append(("pre_gst_policy", f"unknown policy {self.pre_gst_policy[0]!r}"))
        elif self.pre_gst_policy[0] == RANDOM_UP_TO:
            if len(self.pre_gst_policy) != 2 or self.pre_gst_policy[1] < self.delta_min:
                problems.append(("pre_gst_policy", "random_up_to needs a max >= delta_min"))
        if self.stop_commits is None and self.stop_horizon is None:
            problems.append(("stop_commits", "need stop_commits and/or stop_horizon"))
        if self.stop_commits is not None and self.stop_commits < 0:
            problems.append(("stop_commits", "stop_commits must be non-negative"))
        if self.stop_horizon is not None and self.stop_horizon < 0:
            problems.append(("stop_horizon", "stop_horizon must be non-negative"))
        if self.backoff < 1.0:
            problems.append(("backoff", "backoff multiplier must be >= 1"))
        if self.base_timeout is not None and self.base_timeout <= 0:
            problems.append(("base_timeout", "base_timeout must be positive"))
        if (self.n - 1) % 3 == 0 and self.n >= 4:
            f = (self.n - 1) // 3
            if len(self.byzantine) > f:
                problems.append(
                    ("byzantine", f"{len(self.byzantine)} corrupted nodes exceeds f={f}")
                )
            seen = set()
            for entry in self.byzantine:
                node_id, strategy = entry[0], entry[1]
                if node_id < 0 or node_id >= self.n:
                    problems.append(("byzantine", f"node {node_id} outside [0, {self.n})"))
                if node_id in seen:
                    problems.append(("byzantine", f"node {node_id} corrupted twice"))
                seen.add(node_id)
                if strategy not in STRATEGY_NAMES:
                    problems.append(("byzantine", f"unknown strategy {strategy!r}"))
        if problems:
            raise ConfigInvalid(problems)
        return self

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "f": self.f,
            "protocol": self.protocol,
            "pacemaker": self.pacemaker,
            "leader_mode": self.leader_mode,
            "gst": self.gst,
            "delta_cap": self.delta_cap,
            "delta_min": self.delta_min,
            "delta_max": self.delta_max,
            "payload_cost": self.payload_cost,
            "payload_units": self.payload_units,
            "pre_gst_policy": list(self.pre_gst_policy),
            "byzantine": [list(b) for b in self.byzantine],
            "seed": self.seed,
            "stop_commits": self.stop_commits,
            "stop_horizon": self.stop_horizon,
            "aggregate_qc": self.aggregate_qc,
            "base_timeout": self.timeout(),
            "backoff": self.backoff,
        }


_INT_KEYS = {
    "n", "gst", "delta_cap", "delta_min", "delta_max", "payload_cost",
    "payload_units", "seed", "stop_commits", "stop_horizon", "base_timeout",
}
_STR_KEYS = {"protocol", "pacemaker", "leader_mode", "name"}
_BOOL_KEYS = {"aggregate_qc"}
_FLOAT_KEYS = {"backoff"}


def parse_scenario(source: str, *, name: str | None = None) -> ScenarioConfig:
    """Parse a scenario from a file path, a preset name, or literal text.

    Raises ParseError for unreadable input and ConfigInvalid with
    field-level diagnostics for bad values.
    """
    if source in PRESETS:
        return parse_scenario_text(PRESETS[source], name=name or source)
    if os.path.exists(source):
        with open(source) as fh:
            text = fh.read()
        default_name = os.path.splitext(os.path.basename(source))[0]
        return parse_scenario_text(text, name=name or default_name)
    if "=" in source or source.strip() == "":
        return parse_scenario_text(source, name=name or "inline")
    raise ParseError(f"no such scenario file or preset: {source!r}")


def parse_scenario_text(text: str, *, name: str = "scenario") -> ScenarioConfig:
    values: dict = {"name": name}
    problems: list[tuple[str, str]] = []
    declared_f: int | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        try:
            if key in _INT_KEYS:
                values[key] = int(value)
            elif key in _STR_KEYS:
                values[key] = value
            elif key in _BOOL_KEYS:
                if value.lower() not in ("true", "false"):
                    raise ValueError("expected true/false")
                values[key] = value.lower() == "true"
            elif key in _FLOAT_KEYS:
                values[key] = float(value)
            elif key == "f":
                declared_f = int(value)
            elif key == "pre_gst_policy":
                values[key] = _parse_policy(value)
            elif key == "byzantine":
                values[key] = _parse_byzantine(value)
            else:
                problems.append((key, f"unknown key (line {lineno})"))
        except ValueError as exc:
            problems.append((key, f"bad value {value!r} (line {lineno}): {exc}"))
    if problems:
        raise ConfigInvalid(problems)
    config = ScenarioConfig(**values)
    if declared_f is not None and declared_f != config.f:
        raise ConfigInvalid([("f", f"declared f={declared_f} but n={config.n} implies f={config.f}")])
    return config.validate()


def _parse_policy(value: str) -> tuple:
    if value == ADVERSARIAL_HOLD:
        return (ADVERSARIAL_HOLD,)
    if value.startswith(RANDOM_UP_TO):
        _, _, arg = value.partition(":")
        if not arg:
            raise ValueError("random_up_to needs a bound, e.g. random_up_to:5000")
        return (RANDOM_UP_TO, int(arg))
    raise ValueError(f"unknown pre-GST policy {value!r}")


def _parse_byzantine(value: str) -> tuple:
    if not value.strip():
        return ()
    entries = []
    for part in value.split(","):
        part = part.strip()
        node_str, _, rest = part.partition(":")
        if not rest:
            raise ValueError(f"expected id:strategy, got {part!r}")
        strategy, _, param = rest.partition("@")
        entries.append((int(node_str), strategy.strip(), int(param) if param else None))
    return tuple(entries)


PRESETS: dict[str, str] = {
    "faultless": """
        # happy path: no faults, fixed small delays, stabilized from the start
        n = 4
        protocol = hotstuff3
        pacemaker = baseline
        gst = 0
        delta_cap = 1000
        delta_min = 10
        delta_max = 10
        seed = 1
        stop_commits = 30
        stop_horizon = 200000
    """,
    "leader-cascade": """
        # every leader of the first f views crashes at time zero
        n = 7
        protocol = hotstuff3
        pacemaker = epoch
        gst = 0
        delta_cap = 1000
        delta_min = 10
        delta_max = 20
        backoff = 1.0
        byzantine = 1:crash@0, 2:crash@0
        seed = 1
        stop_commits = 3
        stop_horizon = 400000
    """,
    "equivocation": """
        # one leader proposes two conflicting blocks per led view
        n = 4
        protocol = hotstuff2
        pacemaker = baseline
        gst = 0
        delta_cap = 1000
        delta_min = 10
        delta_max = 50
        byzantine = 1:equivocator
        seed = 7
        stop_commits = 20
        stop_horizon = 400000
    """,
    "late-gst": """
        # adversarial pre-stabilization schedule, then normal service
        n = 4
        protocol = hotstuff2
        pacemaker = relayer
        gst = 20000
        delta_cap = 1000
        delta_min = 10
        delta_max = 100
        pre_gst_policy = adversarial_hold
        seed = 3
        stop_commits = 15
        stop_horizon = 400000
    """,
}


def with_overrides(config: ScenarioConfig, **kwargs) -> ScenarioConfig:
    return replace(config, **kwargs).validate()
