"""Scenario configuration.  Times are seconds here and microseconds inside."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

from .calendar import DEFAULT_MESSAGE_SIZES, CommTiming, ConfigurationError, seconds
from .scheduler import Durations

ALGORITHMS = ("scheduler", "centralized_ws", "decentralized_ws")
NOISE_MODES = ("off", "gaussian")


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "custom"
    devices: int = 4
    cores_per_device: int = 4
    frame_period: float = 18.86
    detector_duration: float = 0.1
    hp_duration: float = 0.98
    lp2_duration: float = 16.862
    lp4_duration: float = 11.611
    hp_padding: float = 0.0
    lp_padding: float = 0.5
    throughput_Bps: float = 16.3e6
    jitter_padding: float = 0.005
    message_sizes: dict = field(default_factory=lambda: dict(DEFAULT_MESSAGE_SIZES))
    algorithm: str = "scheduler"
    preemption: bool = True
    hp_deadline_budget: float = 1.0
    max_stagger_offset: float = 1.0
    poll_interval: float = 0.1
    noise: str = "off"
    # None means "same as the matching padding"
    sigma_proc: float | None = None
    sigma_comm: float | None = None
    stagger_seed: int = 0
    noise_seed: int = 0
    ws_seed: int = 0

    def validate(self) -> "ScenarioConfig":
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"algorithm must be one of {ALGORITHMS}")
        if self.noise not in NOISE_MODES:
            raise ConfigurationError(f"noise must be one of {NOISE_MODES}")
        if self.devices < 2 or self.cores_per_device < 4:
            raise ConfigurationError("need at least 2 devices with 4 cores")
        positive = ("frame_period", "detector_duration", "hp_duration", "lp2_duration",
                    "lp4_duration", "throughput_Bps", "hp_deadline_budget", "poll_interval")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        for name in ("hp_padding", "lp_padding", "jitter_padding", "max_stagger_offset"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        if self.frame_period <= self.detector_duration + self.hp_deadline_budget:
            raise ConfigurationError("frame period must exceed detector time plus HP budget")
        if self.hp_duration + self.hp_padding >= self.hp_deadline_budget:
            raise ConfigurationError("HP slot does not fit in its deadline budget")
        for kind in DEFAULT_MESSAGE_SIZES:
            if kind not in self.message_sizes:
                raise ConfigurationError(f"missing message size {kind!r}")
        self.timing()
        return self

    def durations(self) -> Durations:
        return Durations(hp=seconds(self.hp_duration), lp2=seconds(self.lp2_duration),
                         lp4=seconds(self.lp4_duration), hp_padding=seconds(self.hp_padding),
                         lp_padding=seconds(self.lp_padding))

    def timing(self) -> CommTiming:
        return CommTiming(self.throughput_Bps, seconds(self.jitter_padding), dict(self.message_sizes))

    @property
    def proc_sigma(self) -> float:
        return self.lp_padding if self.sigma_proc is None else self.sigma_proc

    @property
    def comm_sigma(self) -> float:
        return self.jitter_padding if self.sigma_comm is None else self.sigma_comm

    @property
    def label(self) -> str:
        return f"{self.scenario}/{self.algorithm}/{'P' if self.preemption else 'NP'}"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(sorted(unknown))}")
        data = dict(data)
        if "message_sizes" in data:
            data["message_sizes"] = {**DEFAULT_MESSAGE_SIZES, **data["message_sizes"]}
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)
