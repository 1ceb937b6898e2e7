"""Experiment configuration: an INI file read with :mod:`configparser`.

Example::

    [experiment]
    scenario = gap-vs-depth
    seed = 7
    out = results

    [model]
    model = ising        ; ising | hardcore | potts | colorings
    beta = 1.2
    h = 0.0

    [tree]
    b = 2
    depth = 3
    boundary = plus      ; plus|minus|free|even|odd|color:<k>|frozen[:<k>]|file:<path>

    [sweep]
    beta = 0.6, 0.9, 1.2 ; comma lists, or start:stop[:step] integer ranges
    depth = 0:3

    [budget]
    replicas = 10000

    [caps]
    exact_states = 32768

Sweep values replace the matching model or tree key point by point.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

SCENARIOS = (
    "phase-curve",
    "gap-vs-depth",
    "vm-decay",
    "em-concentration",
    "coupling-tails",
    "hardcore-cycle",
    "model-thresholds",
)

DEFAULT_BUDGET = {
    "replicas": 10_000,
    "samples": 100_000,
    "restarts": 8,
    "functions": 50,
    "horizon": 400.0,
    "trajectories": 64,
}

DEFAULT_CAPS = {
    "exact_states": 1 << 15,
    "dp_depth": 12,
    "max_replicas": 1_000_000,
}

# per-scenario model and tree used when the config omits them
SCENARIO_DEFAULTS = {
    "phase-curve": ({"model": "ising", "beta": 1.2, "h": 0.0}, {"b": 2, "depth": 3, "boundary": "plus"}),
    "gap-vs-depth": ({"model": "ising", "beta": 1.2, "h": 0.0}, {"b": 2, "depth": 3, "boundary": "plus"}),
    "vm-decay": ({"model": "ising", "beta": 0.6, "h": 0.0}, {"b": 2, "depth": 4, "boundary": "free"}),
    "em-concentration": ({"model": "ising", "beta": 1.2, "h": 0.0}, {"b": 2, "depth": 8, "boundary": "plus"}),
    "coupling-tails": ({"model": "ising", "beta": 1.2, "h": 0.0}, {"b": 2, "depth": 8, "boundary": "plus"}),
    "hardcore-cycle": ({"model": "hardcore", "lambda": 2.0}, {"b": 2, "depth": 12, "boundary": "even"}),
    "model-thresholds": ({"model": "colorings", "q": 4}, {"b": 2, "depth": 12, "boundary": "color:1"}),
}

MODEL_KEYS = {"model", "beta", "h", "lambda", "q", "antiferro"}
TREE_KEYS = {"b", "depth", "boundary"}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def _parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_axis(text: str) -> list:
    """``"0.6, 0.9"`` -> floats; ``"2:5"`` -> 2, 3, 4, 5; ``"0:1:0.25"`` -> inclusive grid."""
    text = text.strip()
    if ":" in text and "," not in text and not text.lower().startswith(("color", "file", "frozen")):
        parts = [float(p) for p in text.split(":")]
        if len(parts) == 2:
            parts.append(1.0)
        start, stop, step = parts
        if step <= 0:
            raise ConfigError(f"non-positive step in {text!r}")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        vals = [start + i * step for i in range(count)]
        if all(float(v).is_integer() for v in parts):
            return [int(round(v)) for v in vals]
        return [round(v, 12) for v in vals]
    return [_parse_value(p) for p in text.split(",") if p.strip()]


@dataclass
class ExperimentConfig:
    scenario: str
    model: dict | None = None
    tree: dict | None = None
    sweep: dict = field(default_factory=dict)
    seed: int = 0
    budget: dict = field(default_factory=dict)
    caps: dict = field(default_factory=dict)
    out: str = "."

    def __post_init__(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {', '.join(SCENARIOS)}")
        model, tree = SCENARIO_DEFAULTS[self.scenario]
        self.model = dict(self.model or model)
        self.tree = {**tree, **(self.tree or {})}
        self.budget = {**DEFAULT_BUDGET, **self.budget}
        self.caps = {**DEFAULT_CAPS, **self.caps}
        self.validate()

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {', '.join(SCENARIOS)}")
        unknown = set(self.model) - MODEL_KEYS
        if unknown:
            raise ConfigError(f"unknown model keys {sorted(unknown)}")
        unknown = set(self.tree) - TREE_KEYS
        if unknown:
            raise ConfigError(f"unknown tree keys {sorted(unknown)}")
        b = int(self.tree.get("b", 2))
        if b < 2:
            raise ConfigError("b must be at least 2")
        depths = self.sweep.get("depth", [self.tree.get("depth", 3)])
        if max(int(d) for d in depths) > self.caps["dp_depth"]:
            raise ConfigError(f"depth exceeds the DP cap {self.caps['dp_depth']}")
        if min(int(d) for d in depths) < 0:
            raise ConfigError("depth must be non-negative")
        if self.caps["exact_states"] > 1 << 15:
            raise ConfigError("exact_states cap cannot exceed 2^15")
        for key in ("replicas", "samples", "restarts", "functions", "trajectories"):
            v = self.budget[key]
            if int(v) != v or v < 1:
                raise ConfigError(f"budget {key} must be a positive integer")
        if self.budget["replicas"] > self.caps["max_replicas"]:
            raise ConfigError("replica budget exceeds max_replicas cap")
        for key, vals in self.sweep.items():
            if not isinstance(vals, list) or not vals:
                raise ConfigError(f"sweep axis {key!r} must be a non-empty list")

    # serialisation

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "model": dict(sorted(self.model.items())),
            "tree": dict(sorted(self.tree.items())),
            "sweep": dict(sorted(self.sweep.items())),
            "seed": self.seed,
            "budget": dict(sorted(self.budget.items())),
            "caps": dict(sorted(self.caps.items())),
        }

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(scenario=d["scenario"], model=d.get("model"), tree=d.get("tree"), sweep=dict(d.get("sweep", {})),
                   seed=int(d.get("seed", 0)), budget=dict(d.get("budget", {})), caps=dict(d.get("caps", {})),
                   out=d.get("out", "."))

    @classmethod
    def from_text(cls, text: str, scenario: str | None = None) -> "ExperimentConfig":
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        known = {"experiment", "model", "tree", "sweep", "budget", "caps"}
        extra = set(parser.sections()) - known
        if extra:
            raise ConfigError(f"unknown sections {sorted(extra)}")
        exp = dict(parser["experiment"]) if parser.has_section("experiment") else {}
        name = scenario or exp.get("scenario")
        if not name:
            raise ConfigError("no scenario given")
        if scenario and exp.get("scenario") and exp["scenario"] != scenario:
            raise ConfigError(f"config is for scenario {exp['scenario']!r}, not {scenario!r}")

        def section(key):
            return {k: _parse_value(v) for k, v in parser[key].items()} if parser.has_section(key) else {}

        d = {
            "scenario": name,
            "model": section("model"),
            "tree": section("tree"),
            "sweep": ({k: parse_axis(v) for k, v in parser["sweep"].items()}
                      if parser.has_section("sweep") else {}),
            "seed": int(exp.get("seed", 0)),
            "budget": section("budget"),
            "caps": section("caps"),
            "out": exp.get("out", "."),
        }
        return cls.from_dict(d)

    @classmethod
    def from_file(cls, path, scenario: str | None = None) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        return cls.from_text(path.read_text(), scenario)
