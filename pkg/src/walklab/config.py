"""Experiment configuration: a small line-oriented `key = value` format with
`[section]` headers, strict unknown-key rejection, and a serializer whose
output parses back to an equal record.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from enum import Enum

import numpy as np

from .expert import GainSet
from .learning import EnvSpec, PpoConfig, RewardConfig
from .policy import GaussianMlpPolicy, PolicyKind
from .sim import SimParams
from .transfer import InitMode, PerturbationSpec


class ParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnknownKey(ValueError):
    pass


class InvariantViolation(ValueError):
    pass


@dataclass(frozen=True)
class PolicyConfig:
    kind: PolicyKind = PolicyKind.PURE_NN
    hidden: tuple[int, ...] = (64, 64)
    log_std_init: float = -1.0
    # None means the kind's built-in action ranges
    range_center: tuple[float, ...] | None = None
    range_half: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if not self.hidden or any(h <= 0 for h in self.hidden):
            raise ValueError("hidden needs positive layer sizes")
        for name in ("range_center", "range_half"):
            v = getattr(self, name)
            if v is not None and len(v) != 3:
                raise ValueError(f"{name} needs exactly 3 values")
        if self.range_half is not None and any(h <= 0 for h in self.range_half):
            raise ValueError("range_half values must be positive")

    def make(self, rng: np.random.Generator,
             gains: GainSet | None = None) -> GaussianMlpPolicy:
        pol = GaussianMlpPolicy.create(self.kind, rng, hidden=self.hidden,
                                       gains=gains,
                                       log_std_init=self.log_std_init)
        if self.range_center is not None:
            pol.range_center = np.array(self.range_center)
        if self.range_half is not None:
            pol.range_half = np.array(self.range_half)
        return pol


@dataclass(frozen=True)
class TerrainConfig:
    max_dev: float = 0.10
    step_min: float = 0.5
    step_max: float = 1.5
    extent: float = 30.0

    def __post_init__(self) -> None:
        if self.max_dev < 0:
            raise ValueError("max_dev must be non-negative")
        if not 0 < self.step_min <= self.step_max:
            raise ValueError("need 0 < step_min <= step_max")
        if self.extent < 0:
            raise ValueError("extent must be non-negative")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    iterations: int = 50
    out_dir: str = "out"

    def __post_init__(self) -> None:
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


@dataclass(frozen=True)
class ExperimentConfig:
    sim: SimParams = field(default_factory=SimParams)
    gains: GainSet = field(default_factory=GainSet)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    terrain: TerrainConfig = field(default_factory=TerrainConfig)
    surrogate: PerturbationSpec = field(default_factory=PerturbationSpec)
    run: RunConfig = field(default_factory=RunConfig)

    def env_spec(self, flat: bool = False,
                 preloaded: bool = False) -> EnvSpec:
        return EnvSpec(
            params=self.sim, gains=self.gains,
            terrain_max_dev=0.0 if flat else self.terrain.max_dev,
            terrain_step_min=self.terrain.step_min,
            terrain_step_max=self.terrain.step_max,
            terrain_extent=self.terrain.extent,
            preloaded_start=preloaded,
        )


# --- value converters (parse, serialize) per field type ---

def _float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"not a number: {text!r}")


def _int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ValueError(f"not an integer: {text!r}")


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1"):
        return True
    if t in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    parts = text.replace(",", " ").split()
    return tuple(_float(p) for p in parts)


def _ints(text: str) -> tuple[int, ...]:
    parts = text.replace(",", " ").split()
    return tuple(_int(p) for p in parts)


def _opt_float(text: str) -> float | None:
    return None if text.strip().lower() == "none" else _float(text)


def _opt_floats(text: str) -> tuple[float, ...] | None:
    return None if text.strip().lower() == "none" else _floats(text)


def _policy_kind(text: str) -> PolicyKind:
    try:
        return PolicyKind(text.strip())
    except ValueError:
        raise ValueError(f"kind must be one of "
                         f"{[k.value for k in PolicyKind]}, got {text!r}")


def _init_mode(text: str) -> InitMode:
    try:
        return InitMode(text.strip())
    except ValueError:
        raise ValueError(f"init_mode must be one of "
                         f"{[m.value for m in InitMode]}, got {text!r}")


def _show(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return " ".join(_show(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _auto(cls, overrides: dict[str, object] | None = None) -> dict:
    """Field -> parser map derived from a dataclass's annotations."""
    table = {}
    for f in fields(cls):
        if overrides and f.name in overrides:
            table[f.name] = overrides[f.name]
        elif f.type in ("float", float):
            table[f.name] = _float
        elif f.type in ("int", int):
            table[f.name] = _int
        elif f.type in ("bool", bool):
            table[f.name] = _bool
        elif f.type in ("str", str):
            table[f.name] = str
        else:
            raise TypeError(f"no parser for field {cls.__name__}.{f.name}")
    return table


_SECTIONS: dict[str, tuple[str, type, dict]] = {
    "sim": ("sim", SimParams, _auto(SimParams)),
    "gains": ("gains", GainSet, _auto(GainSet)),
    "policy": ("policy", PolicyConfig, _auto(PolicyConfig, {
        "kind": _policy_kind, "hidden": _ints,
        "range_center": _opt_floats, "range_half": _opt_floats})),
    "reward": ("reward", RewardConfig, _auto(RewardConfig)),
    "ppo": ("ppo", PpoConfig, _auto(PpoConfig,
                                    {"value_learning_rate": _opt_float})),
    "terrain": ("terrain", TerrainConfig, _auto(TerrainConfig)),
    "surrogate": ("surrogate", PerturbationSpec, _auto(PerturbationSpec, {
        "init_mode": _init_mode, "sensor_noise_std": _floats})),
    "run": ("run", RunConfig, _auto(RunConfig)),
}


def parse_config(text: str) -> ExperimentConfig:
    """Parse `[section]` / `key = value` lines; `#` starts a comment.

    Raises ParseError (with line number) for malformed lines, UnknownKey for
    keys or sections not in the schema, and InvariantViolation when a value
    fails its owning type's validity checks.
    """
    values: dict[str, dict[str, object]] = {name: {} for name in _SECTIONS}
    section: str | None = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError("unterminated section header", line_no)
            name = line[1:-1].strip()
            if name not in _SECTIONS:
                raise UnknownKey(f"line {line_no}: unknown section [{name}]")
            section = name
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {line!r}", line_no)
        if section is None:
            raise ParseError("key before any [section] header", line_no)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        parsers = _SECTIONS[section][2]
        if key not in parsers:
            raise UnknownKey(f"line {line_no}: unknown key {key!r} "
                             f"in section [{section}]")
        try:
            values[section][key] = parsers[key](value)
        except ValueError as exc:
            raise ParseError(f"{key}: {exc}", line_no)
    kwargs = {}
    for name, (attr, cls, _) in _SECTIONS.items():
        try:
            kwargs[attr] = cls(**values[name])
        except ValueError as exc:
            raise InvariantViolation(f"[{name}] {exc}")
    return ExperimentConfig(**kwargs)


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def serialize_config(cfg: ExperimentConfig) -> str:
    """Text form of every field; parse_config of the output round-trips."""
    out = []
    for name, (attr, cls, parsers) in _SECTIONS.items():
        out.append(f"[{name}]")
        section = getattr(cfg, attr)
        for key in parsers:
            out.append(f"{key} = {_show(getattr(section, key))}")
        out.append("")
    return "\n".join(out)
