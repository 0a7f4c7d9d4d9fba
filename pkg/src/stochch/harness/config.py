"""Declarative experiment configuration with JSON round-trip and dotted overrides."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from ..analysis import EventSpec
from ..dynamics import ModelParams, recommended_dt
from ..noise import NoiseSpec
from ..spectral import GridSpec

KINDS = (
    "convolution-scaling",
    "energy-functional",
    "deterministic-ladder",
    "stochastic-error",
    "spectral-estimate",
    "interp-inequality",
    "apriori-check",
    "event-probability",
    "trace-check",
)

MAX_SEED = 2**64 - 1


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    """Template for ModelParams; dt = None means dt_factor * eps^3."""

    d: int = 2
    n: int = 64
    quad_oversample: int = 2
    T: float = 0.01
    dt: float | None = None
    dt_factor: float = 0.1
    dealias_pad: int = 2
    theta: float = 0.2

    def grid(self) -> GridSpec:
        return GridSpec(self.d, self.n, self.quad_oversample)

    def dt_for(self, epsilon: float) -> float:
        if self.dt is not None:
            return float(self.dt)
        dt = recommended_dt(epsilon, self.dt_factor)
        # snap so that T is an integer number of steps
        steps = max(1, int(round(self.T / dt)))
        return self.T / steps

    def params(self, epsilon: float, noise: NoiseSpec | None) -> ModelParams:
        return ModelParams(epsilon, self.grid(), self.dt_for(epsilon), self.T, noise, self.dealias_pad, self.theta)


@dataclass
class ExperimentConfig:
    kind: str
    epsilon_ladder: list[float]
    model: ModelConfig = field(default_factory=ModelConfig)
    noise: NoiseSpec | None = None
    event: EventSpec | None = None
    samples: int = 1
    base_seed: int = 0
    output_dir: str = "out"
    snapshot_stride: int = 0
    options: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        ladder = [float(e) for e in self.epsilon_ladder]
        if not ladder:
            raise ConfigError("epsilon_ladder must not be empty")
        if any(b >= a for a, b in zip(ladder, ladder[1:])):
            raise ConfigError("epsilon_ladder must be strictly decreasing")
        if any(not 0 < e <= 1 for e in ladder):
            raise ConfigError("epsilon values must lie in (0, 1]")
        self.epsilon_ladder = ladder
        if int(self.samples) < 1:
            raise ConfigError("samples must be >= 1")
        if not 0 <= int(self.base_seed) <= MAX_SEED:
            raise ConfigError("base_seed must be an unsigned 64-bit integer")
        if int(self.snapshot_stride) < 0:
            raise ConfigError("snapshot_stride must be >= 0")

    # ------------------------------------------------------------ serialisation

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "epsilon_ladder": list(self.epsilon_ladder),
            "model": asdict(self.model),
            "noise": None if self.noise is None else self.noise.as_dict(),
            "event": None if self.event is None else asdict(self.event),
            "samples": int(self.samples),
            "base_seed": int(self.base_seed),
            "output_dir": str(self.output_dir),
            "snapshot_stride": int(self.snapshot_stride),
            "options": copy.deepcopy(self.options),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "kind" not in data or "epsilon_ladder" not in data:
            raise ConfigError("config needs 'kind' and 'epsilon_ladder'")
        try:
            model = ModelConfig(**(data.get("model") or {}))
            noise = data.get("noise")
            noise = None if noise is None else NoiseSpec(**noise)
            event = data.get("event")
            event = None if event is None else EventSpec(**event)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cls(
            kind=data["kind"],
            epsilon_ladder=list(data["epsilon_ladder"]),
            model=model,
            noise=noise,
            event=event,
            samples=int(data.get("samples", 1)),
            base_seed=int(data.get("base_seed", 0)),
            output_dir=str(data.get("output_dir", "out")),
            snapshot_stride=int(data.get("snapshot_stride", 0)),
            options=dict(data.get("options") or {}),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def params(self, epsilon: float, stochastic: bool = True) -> ModelParams:
        return self.model.params(epsilon, self.noise if stochastic else None)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``a.b.c=value`` assignments (values parsed as JSON when possible)."""
    out = copy.deepcopy(data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise ConfigError(f"empty key in override {item!r}")
        node = out
        for p in parts[:-1]:
            if node.get(p) is None:
                node[p] = {}
            node = node[p]
            if not isinstance(node, dict):
                raise ConfigError(f"cannot descend into non-mapping at {p!r}")
        node[parts[-1]] = _parse_value(raw)
    return out


def load_config(path: str | Path | None, overrides: list[str] | None = None, base: dict | None = None) -> ExperimentConfig:
    data = dict(base or {})
    if path is not None:
        with open(path) as fh:
            data.update(json.load(fh))
    return ExperimentConfig.from_dict(apply_overrides(data, overrides or []))
