"""Task arrivals, synthetic task attributes and the correctness oracle.

Real LLM answers are replaced by Bernoulli draws whose success probability
depends on the executing model's capability score and the task difficulty.
Per-source distributions and the curve parameters are calibration data and
live in ``data/calibration.json``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, ProtocolError
from .schemas import validate


class Source(str, Enum):
    MATH = "Math"
    DAILY = "Daily"
    SCIENCE = "Science"


class AggregationRule(str, Enum):
    ALL_CORRECT = "ALL_CORRECT"
    MAJORITY = "MAJORITY"
    AGGREGATOR_WEIGHTED = "AGGREGATOR_WEIGHTED"


@dataclass(frozen=True)
class Task:
    id: int
    source_ue: int
    source: Source
    category: str
    prompt_tokens: int
    true_output_tokens: int
    difficulty: float
    created_at: float

    def __post_init__(self):
        if self.prompt_tokens < 1:
            raise DomainError("prompt_tokens must be >= 1")
        if not 0.0 <= self.difficulty <= 1.0:
            raise DomainError("difficulty must lie in [0, 1]")


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


@dataclass(frozen=True)
class CurveParams:
    """Shape of ``p(capability, difficulty)``.

    ``p = floor + (cap - floor) * s(c - d - offset) / s(1 - offset) * (1 - (1 - c)**sharpness)``
    with ``s`` a logistic of the given steepness.  Pinned so that
    ``p(1, 0) = cap`` and ``p(0, d) = floor``.
    """

    floor: float = 0.02
    cap: float = 0.95
    steepness: float = 12.0
    offset: float = 0.0
    sharpness: float = 6.0

    def __call__(self, capability: float, difficulty: float) -> float:
        if not (0.0 <= capability <= 1.0 and 0.0 <= difficulty <= 1.0):
            raise DomainError(
                f"capability/difficulty must lie in [0,1], got {capability}, {difficulty}"
            )
        k = self.steepness
        gap = _sigmoid(k * (capability - difficulty - self.offset)) / _sigmoid(k * (1.0 - self.offset))
        strength = 1.0 - (1.0 - capability) ** self.sharpness
        return self.floor + (self.cap - self.floor) * gap * strength


@dataclass(frozen=True)
class SourceProfile:
    """Per-source attribute distributions."""

    difficulty: tuple[float, float]  # Beta(alpha, beta)
    prompt_tokens: tuple[float, float]  # lognormal (mu, sigma) of token count
    output_tokens: tuple[float, float]
    decomposition_bonus: float = 0.05
    split_relief: float = 0.0  # fractional difficulty drop of each share of a real split
    fusion_scale: float | None = None  # per-source aggregation_difficulty_scale override
    categories: tuple[str, ...] = ("general",)

    @property
    def mean_difficulty(self) -> float:
        a, b = self.difficulty
        return a / (a + b)

    @property
    def mean_output_tokens(self) -> float:
        mu, sigma = self.output_tokens
        return math.exp(mu + sigma**2 / 2)

    def to_dict(self) -> dict:
        return {
            "difficulty_beta": list(self.difficulty),
            "prompt_tokens_lognormal": list(self.prompt_tokens),
            "output_tokens_lognormal": list(self.output_tokens),
            "decomposition_bonus": self.decomposition_bonus,
            "split_relief": self.split_relief,
            **({} if self.fusion_scale is None else {"fusion_scale": self.fusion_scale}),
            "categories": list(self.categories),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SourceProfile":
        return cls(
            difficulty=tuple(d["difficulty_beta"]),
            prompt_tokens=tuple(d["prompt_tokens_lognormal"]),
            output_tokens=tuple(d["output_tokens_lognormal"]),
            decomposition_bonus=d.get("decomposition_bonus", 0.05),
            split_relief=d.get("split_relief", 0.0),
            fusion_scale=d.get("fusion_scale"),
            categories=tuple(d.get("categories", ("general",))),
        )


@dataclass(frozen=True)
class CorrectnessModel:
    base_curve: CurveParams = field(default_factory=CurveParams)
    decomposition_bonus: float = 0.05
    aggregation_rule: AggregationRule = AggregationRule.AGGREGATOR_WEIGHTED
    # aggregator faces the parent difficulty scaled by this factor
    aggregation_difficulty_scale: float = 0.3

    def aggregator_probability(self, capability: float, difficulty: float) -> float:
        return self.base_curve(capability, min(1.0, difficulty * self.aggregation_difficulty_scale))


@dataclass(frozen=True)
class LengthModel:
    """Weaker models emit longer answers: tokens scale by ``exp(verbosity*(1-c))``."""

    verbosity: float = 0.0

    def scale(self, capability: float) -> float:
        return math.exp(self.verbosity * (1.0 - capability))


def scaled_tokens(tokens: int, scale: float) -> int:
    return int(round(tokens * scale))


@dataclass(frozen=True)
class Calibration:
    correctness: CorrectnessModel
    length: LengthModel
    sources: dict[Source, SourceProfile]
    targets: dict[Source, dict[str, float]] = field(default_factory=dict)

    def model_for(self, source: Source) -> CorrectnessModel:
        prof = self.sources[source]
        model = replace(self.correctness, decomposition_bonus=prof.decomposition_bonus)
        if prof.fusion_scale is not None:
            model = replace(model, aggregation_difficulty_scale=prof.fusion_scale)
        return model

    def to_dict(self) -> dict:
        c = self.correctness
        return {
            "schema_version": 1,
            "curve": {
                "floor": c.base_curve.floor,
                "cap": c.base_curve.cap,
                "steepness": c.base_curve.steepness,
                "offset": c.base_curve.offset,
                "sharpness": c.base_curve.sharpness,
            },
            "aggregation_rule": c.aggregation_rule.value,
            "aggregation_difficulty_scale": c.aggregation_difficulty_scale,
            "verbosity": self.length.verbosity,
            "sources": {s.value: p.to_dict() for s, p in self.sources.items()},
            "targets": {s.value: dict(t) for s, t in self.targets.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Calibration":
        validate(d, "calibration")
        curve = CurveParams(**d.get("curve", {}))
        correctness = CorrectnessModel(
            base_curve=curve,
            aggregation_rule=AggregationRule(d.get("aggregation_rule", "AGGREGATOR_WEIGHTED")),
            aggregation_difficulty_scale=d.get("aggregation_difficulty_scale", 0.3),
        )
        sources = {Source(k): SourceProfile.from_dict(v) for k, v in d["sources"].items()}
        targets = {Source(k): dict(v) for k, v in d.get("targets", {}).items()}
        return cls(correctness, LengthModel(d.get("verbosity", 0.0)), sources, targets)

    @classmethod
    def load(cls, path: str | Path | None = None) -> "Calibration":
        if path is None:
            text = resources.files("offloadsim.data").joinpath("calibration.json").read_text()
        else:
            text = Path(path).read_text()
        try:
            doc = json.loads(text)
        except ValueError as exc:
            raise ConfigurationError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(doc)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


@dataclass
class ArrivalState:
    """Per-UE gate: a new task may only be drawn once the previous one is done."""

    in_flight: bool = False
    last_completion: float = 0.0


def next_arrival(state: ArrivalState, rng: np.random.Generator, rate: float) -> float:
    """Seconds from the previous completion until the next task is created."""
    if state.in_flight:
        raise ProtocolError("UE still has a task in flight")
    if not rate > 0:
        raise DomainError("arrival rate must be > 0")
    return float(rng.exponential(1.0 / rate))


def synth_task(
    rng: np.random.Generator,
    source: Source,
    created_at: float,
    calib: Calibration,
    task_id: int = 0,
    source_ue: int = 0,
) -> Task:
    prof = calib.sources[source]
    prompt = max(1, int(round(rng.lognormal(*prof.prompt_tokens))))
    output = max(1, int(round(rng.lognormal(*prof.output_tokens))))
    difficulty = float(rng.beta(*prof.difficulty))
    category = prof.categories[int(rng.integers(len(prof.categories)))]
    return Task(task_id, source_ue, source, category, prompt, output, difficulty, created_at)


def realize_correctness(
    capability: float, difficulty: float, model: CorrectnessModel, rng: np.random.Generator
) -> bool:
    p = model.base_curve(capability, difficulty)
    return bool(rng.random() < p)


def aggregate_correctness(
    sub_results: Sequence[bool],
    aggregator_p: float,
    rule: AggregationRule,
    rng: np.random.Generator,
) -> bool:
    """Fuse subtask outcomes into one final-answer outcome.

    ``aggregator_p`` is the aggregator's own success probability.
    """
    if len(sub_results) == 0:
        raise DomainError("no subtask results to aggregate")
    if not 0.0 <= aggregator_p <= 1.0:
        raise DomainError("aggregator probability must lie in [0, 1]")
    n_ok = sum(bool(r) for r in sub_results)
    rule = AggregationRule(rule)
    if rule is AggregationRule.ALL_CORRECT:
        if n_ok < len(sub_results):
            return False
        p = aggregator_p
    elif rule is AggregationRule.MAJORITY:
        if 2 * n_ok <= len(sub_results):
            return False
        p = aggregator_p
    else:
        p = n_ok / len(sub_results) * aggregator_p
    return bool(rng.random() < p)


def check_calibration(calib: Calibration) -> None:
    missing = set(Source) - set(calib.sources)
    if missing:
        raise ConfigurationError(f"calibration lacks sources {sorted(s.value for s in missing)}")
