"""Episode topologies: node placement, compute profiles and radio settings."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from .channel import ChannelParams
from .compute import ComputeProfile
from .errors import ConfigurationError
from .mac import MacParams
from .schemas import validate

UE_TX_POWER = 17.0
AP_TX_POWER = 25.0


class NodeKind(str, Enum):
    UE = "UE"
    AP = "AP"


@dataclass(frozen=True)
class Position:
    x: float
    y: float


def distance(a: Position, b: Position) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


def default_capability(model_params: float) -> float:
    """Synthetic model strength in [0, 1], monotone in parameter count."""
    score = math.log10(model_params / 1e9) * 0.35 + 0.25
    return min(1.0, max(0.0, score))


@dataclass(frozen=True)
class NodeProfile:
    node_id: int
    kind: NodeKind
    position: Position
    compute: ComputeProfile
    tx_power: float
    arrival_rate: float | None = None
    capability_score: float | None = None

    def __post_init__(self):
        if self.kind is NodeKind.AP and self.arrival_rate is not None:
            raise ConfigurationError(f"AP {self.node_id} cannot have an arrival rate")
        if self.kind is NodeKind.UE and not (self.arrival_rate or 0) > 0:
            raise ConfigurationError(f"UE {self.node_id} needs a positive arrival rate")
        if self.capability_score is None:
            object.__setattr__(
                self, "capability_score", default_capability(self.compute.model_params)
            )
        elif not 0.0 <= self.capability_score <= 1.0:
            raise ConfigurationError(f"capability_score of node {self.node_id} not in [0,1]")

    def to_dict(self) -> dict:
        d = {
            "node_id": self.node_id,
            "kind": self.kind.value,
            "position": [self.position.x, self.position.y],
            "compute": self.compute.to_dict(),
            "tx_power": self.tx_power,
            "capability_score": self.capability_score,
        }
        if self.arrival_rate is not None:
            d["arrival_rate"] = self.arrival_rate
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NodeProfile":
        return cls(
            node_id=int(d["node_id"]),
            kind=NodeKind(d["kind"]),
            position=Position(*map(float, d["position"])),
            compute=ComputeProfile.from_dict(d["compute"]),
            tx_power=float(d["tx_power"]),
            arrival_rate=d.get("arrival_rate"),
            capability_score=d.get("capability_score"),
        )


def _range(value, name: str) -> tuple[float, float]:
    lo, hi = value
    if lo > hi:
        raise ConfigurationError(f"{name}: min {lo} > max {hi}")
    return float(lo), float(hi)


@dataclass(frozen=True)
class ProfileRanges:
    """Sampling ranges for one node class.

    ``model_params`` may be a ``[min, max]`` range or, when ``model_choices``
    is set, a discrete set drawn uniformly.
    """

    flops: tuple[float, float]
    mem_bandwidth: tuple[float, float]
    model_params: tuple[float, float] | None = None
    model_choices: tuple[float, ...] | None = None
    bytes_per_param: float = 2.0

    def __post_init__(self):
        _range(self.flops, "flops")
        _range(self.mem_bandwidth, "mem_bandwidth")
        if self.model_choices:
            if min(self.model_choices) <= 0:
                raise ConfigurationError("model_choices must be > 0")
        elif self.model_params is None:
            raise ConfigurationError("either model_params or model_choices is required")
        else:
            _range(self.model_params, "model_params")
        for name in ("flops", "mem_bandwidth", "model_params"):
            r = getattr(self, name)
            if r is not None and r[0] <= 0:
                raise ConfigurationError(f"{name} range must be strictly positive")

    def sample(self, rng: np.random.Generator) -> ComputeProfile:
        if self.model_choices:
            params = float(self.model_choices[rng.integers(len(self.model_choices))])
        else:
            params = float(rng.uniform(*self.model_params))
        return ComputeProfile(
            model_params=params,
            flops=float(rng.uniform(*self.flops)),
            mem_bandwidth=float(rng.uniform(*self.mem_bandwidth)),
            bytes_per_param=self.bytes_per_param,
        )

    def contains(self, cp: ComputeProfile) -> bool:
        if self.model_choices:
            ok = cp.model_params in self.model_choices
        else:
            ok = self.model_params[0] <= cp.model_params <= self.model_params[1]
        return (
            ok
            and self.flops[0] <= cp.flops <= self.flops[1]
            and self.mem_bandwidth[0] <= cp.mem_bandwidth <= self.mem_bandwidth[1]
        )

    def to_dict(self) -> dict:
        d: dict[str, Any] = {
            "flops": list(self.flops),
            "mem_bandwidth": list(self.mem_bandwidth),
            "bytes_per_param": self.bytes_per_param,
        }
        if self.model_choices:
            d["model_choices"] = list(self.model_choices)
        else:
            d["model_params"] = list(self.model_params)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProfileRanges":
        return cls(
            flops=tuple(d["flops"]),
            mem_bandwidth=tuple(d["mem_bandwidth"]),
            model_params=tuple(d["model_params"]) if "model_params" in d else None,
            model_choices=tuple(d["model_choices"]) if "model_choices" in d else None,
            bytes_per_param=d.get("bytes_per_param", 2.0),
        )


# default hardware ranges
DEFAULT_AP_RANGES = ProfileRanges(
    flops=(120e12, 312e12),
    mem_bandwidth=(0.6e12, 2e12),
    model_choices=(7e9, 14e9, 32e9),
)
DEFAULT_UE_RANGES = ProfileRanges(
    flops=(20e12, 48e12),
    mem_bandwidth=(0.2e12, 0.4e12),
    model_params=(1.5e9, 1.5e9),
)


@dataclass(frozen=True)
class ScenarioConfig:
    area_side: float = 50.0
    num_aps_range: tuple[int, int] = (2, 4)
    num_ues_range: tuple[int, int] = (5, 7)
    ap_profile: ProfileRanges = DEFAULT_AP_RANGES
    ue_profile: ProfileRanges = DEFAULT_UE_RANGES
    arrival_rate: float = 0.1
    ue_tx_power: float = UE_TX_POWER
    ap_tx_power: float = AP_TX_POWER
    seed: int = 0
    channel: ChannelParams = field(default_factory=ChannelParams)
    mac: MacParams = field(default_factory=MacParams)
    capability_overrides: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.area_side > 0:
            raise ConfigurationError("area_side must be > 0")
        for name in ("num_aps_range", "num_ues_range"):
            lo, hi = _range(getattr(self, name), name)
            if lo < 1:
                raise ConfigurationError(f"{name}: at least one node required")
        if not self.arrival_rate > 0:
            raise ConfigurationError("arrival_rate must be > 0")

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "area_side": self.area_side,
            "num_aps_range": list(self.num_aps_range),
            "num_ues_range": list(self.num_ues_range),
            "ap_profile": self.ap_profile.to_dict(),
            "ue_profile": self.ue_profile.to_dict(),
            "arrival_rate": self.arrival_rate,
            "ue_tx_power": self.ue_tx_power,
            "ap_tx_power": self.ap_tx_power,
            "seed": self.seed,
            "channel": self.channel.to_dict(),
            "mac": self.mac.to_dict(),
            "capability_overrides": {str(k): v for k, v in self.capability_overrides.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        validate(d, "scenario_config")
        base = cls()
        return cls(
            area_side=d.get("area_side", base.area_side),
            num_aps_range=tuple(d.get("num_aps_range", base.num_aps_range)),
            num_ues_range=tuple(d.get("num_ues_range", base.num_ues_range)),
            ap_profile=ProfileRanges.from_dict(d["ap_profile"]) if "ap_profile" in d else base.ap_profile,
            ue_profile=ProfileRanges.from_dict(d["ue_profile"]) if "ue_profile" in d else base.ue_profile,
            arrival_rate=d.get("arrival_rate", base.arrival_rate),
            ue_tx_power=d.get("ue_tx_power", base.ue_tx_power),
            ap_tx_power=d.get("ap_tx_power", base.ap_tx_power),
            seed=int(d.get("seed", 0)),
            channel=ChannelParams.from_dict(d.get("channel", {})),
            mac=MacParams.from_dict(d.get("mac", {})),
            capability_overrides={
                int(k): float(v) for k, v in d.get("capability_overrides", {}).items()
            },
        )


@dataclass(frozen=True)
class Scenario:
    aps: tuple[NodeProfile, ...]
    ues: tuple[NodeProfile, ...]
    channel: ChannelParams = field(default_factory=ChannelParams)
    mac: MacParams = field(default_factory=MacParams)

    def __post_init__(self):
        object.__setattr__(self, "aps", tuple(self.aps))
        object.__setattr__(self, "ues", tuple(self.ues))
        if not self.aps:
            raise ConfigurationError("scenario needs at least one AP")
        if not self.ues:
            raise ConfigurationError("scenario needs at least one UE")
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("node ids must be unique")
        if any(n.kind is not NodeKind.AP for n in self.aps):
            raise ConfigurationError("aps list holds a non-AP node")
        if any(n.kind is not NodeKind.UE for n in self.ues):
            raise ConfigurationError("ues list holds a non-UE node")

    @property
    def nodes(self) -> tuple[NodeProfile, ...]:
        return self.aps + self.ues

    def node(self, node_id: int) -> NodeProfile:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise KeyError(f"unknown node id {node_id}")

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "aps": [n.to_dict() for n in self.aps],
            "ues": [n.to_dict() for n in self.ues],
            "channel": self.channel.to_dict(),
            "mac": self.mac.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        validate(d, "scenario")
        return cls(
            aps=tuple(NodeProfile.from_dict(n) for n in d["aps"]),
            ues=tuple(NodeProfile.from_dict(n) for n in d["ues"]),
            channel=ChannelParams.from_dict(d.get("channel", {})),
            mac=MacParams.from_dict(d.get("mac", {})),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def generate_scenario(cfg: ScenarioConfig) -> Scenario:
    """Draw a random topology; a pure function of ``cfg`` (seed included).

    Counts, coordinates and profile values are all uniform over their ranges.
    APs take ids ``0..E-1``, UEs continue from ``E``.
    """
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    n_aps = int(rng.integers(cfg.num_aps_range[0], cfg.num_aps_range[1] + 1))
    n_ues = int(rng.integers(cfg.num_ues_range[0], cfg.num_ues_range[1] + 1))

    def place() -> Position:
        x, y = rng.uniform(0.0, cfg.area_side, size=2)
        return Position(float(x), float(y))

    aps = []
    for i in range(n_aps):
        aps.append(NodeProfile(
            node_id=i,
            kind=NodeKind.AP,
            position=place(),
            compute=cfg.ap_profile.sample(rng),
            tx_power=cfg.ap_tx_power,
            capability_score=cfg.capability_overrides.get(i),
        ))
    ues = []
    for j in range(n_aps, n_aps + n_ues):
        ues.append(NodeProfile(
            node_id=j,
            kind=NodeKind.UE,
            position=place(),
            compute=cfg.ue_profile.sample(rng),
            tx_power=cfg.ue_tx_power,
            arrival_rate=cfg.arrival_rate,
            capability_score=cfg.capability_overrides.get(j),
        ))
    return Scenario(tuple(aps), tuple(ues), cfg.channel, cfg.mac)


def nearest_ap(s: Scenario, ue_id: int) -> int:
    """Id of the AP closest to the UE; ties go to the lowest id."""
    ue = s.node(ue_id)
    if ue.kind is not NodeKind.UE:
        raise KeyError(f"node {ue_id} is not a UE")
    best = min(s.aps, key=lambda ap: (distance(ue.position, ap.position), ap.node_id))
    return best.node_id
