"""Multi-episode runs: seed derivation, per-task rows and pooled summaries.

Episode ``i`` of a run with master seed ``m`` simulates mode ``M`` with seed
``derive_seed(m, i, M)``.  When no fixed scenario is supplied, the topology
of episode ``i`` is drawn from ``derive_seed(m, i, "topology")``, so every
mode of a comparison sees the same networks.

Summaries pool all completed tasks of all episodes, which keeps each figure
recomputable from the per-task CSV.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .engine import EngineConfig, EpisodeMetrics, Mode, TaskRecord, run_episode
from .planner import HttpPlanner, PlanningParams, ScoreWeights
from .scenario import Scenario, ScenarioConfig, generate_scenario
from .workload import Calibration, Source

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "task_id", "episode", "mode", "source", "latency_total",
    "comm", "queue", "compute", "plan", "agg", "correct", "completed_at",
)
SUMMARY_VERSION = 1


def derive_seed(master: int, *parts) -> int:
    """Stable 63-bit seed from the master seed and any labels."""
    text = "/".join(str(p) for p in (master, *parts))
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "big") >> 1


def episode_seed(master: int, episode: int, mode: Mode) -> int:
    return derive_seed(master, episode, Mode(mode).value)


def topology_seed(master: int, episode: int) -> int:
    return derive_seed(master, episode, "topology")


@dataclass(frozen=True)
class RunSpec:
    episodes: int = 10
    duration: float = 600.0
    master_seed: int = 0
    weights: ScoreWeights = field(default_factory=ScoreWeights)
    planner_noise: float = 0.0
    fading: bool = True
    calibration: Calibration = field(default_factory=Calibration.load)
    planning: PlanningParams = field(default_factory=PlanningParams)
    scenario: Scenario | None = None  # fixed topology for every episode
    scenario_config: ScenarioConfig = field(default_factory=ScenarioConfig)
    planner_endpoint: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")

    def scenario_for(self, episode: int) -> Scenario:
        if self.scenario is not None:
            return self.scenario
        return generate_scenario(replace(self.scenario_config, seed=topology_seed(self.master_seed, episode)))

    def engine_config(self) -> EngineConfig:
        backend = None
        if self.planner_endpoint:
            backend = HttpPlanner(self.planner_endpoint, self.planning)
        return EngineConfig(
            calibration=self.calibration,
            weights=self.weights,
            planning=self.planning,
            planner_noise=self.planner_noise,
            fading=self.fading,
            backend=backend,
        )


def _run_one(spec: RunSpec, mode: Mode, episode: int) -> EpisodeMetrics:
    seed = episode_seed(spec.master_seed, episode, mode)
    m = run_episode(spec.scenario_for(episode), mode, spec.duration, seed, spec.engine_config())
    if m.planner_failures:
        log.warning("episode %d (%s): %d planner failures, tasks ran undecomposed",
                    episode, Mode(mode).value, m.planner_failures)
    return m


def run_mode(spec: RunSpec, mode: Mode) -> list[EpisodeMetrics]:
    """All episodes of one mode, in episode order whatever the worker count."""
    mode = Mode(mode)
    episodes = range(spec.episodes)
    if spec.workers <= 1:
        return [_run_one(spec, mode, e) for e in episodes]
    with ProcessPoolExecutor(spec.workers) as pool:
        return list(pool.map(_run_one, [spec] * spec.episodes, [mode] * spec.episodes, episodes))


def task_row(record: TaskRecord, episode: int) -> dict:
    b = record.breakdown
    return {
        "task_id": record.task_id,
        "episode": episode,
        "mode": record.mode.value,
        "source": record.source.value,
        "latency_total": record.latency_total,
        "comm": b.comm,
        "queue": b.queue,
        "compute": b.compute,
        "plan": b.plan,
        "agg": b.agg,
        "correct": int(record.correct),
        "completed_at": record.completed_at,
    }


def rows_for(metrics: Sequence[EpisodeMetrics]) -> list[dict]:
    return [task_row(r, e) for e, m in enumerate(metrics) for r in m.records]


def _mean(xs: Sequence[float]) -> float:
    return sum(xs) / len(xs) if xs else 0.0


def summarize(rows: Iterable[dict], weights: ScoreWeights, mode: Mode | str, episodes: int, master_seed: int) -> dict:
    """Pooled summary of per-task rows (all values recomputable from the rows)."""
    rows = list(rows)
    lat = [float(r["latency_total"]) for r in rows]
    ok = [int(r["correct"]) for r in rows]
    per_source = {}
    for s in Source:
        cell = [int(r["correct"]) for r in rows if r["source"] == s.value]
        if cell:
            per_source[s.value] = _mean(cell)
    return {
        "schema_version": SUMMARY_VERSION,
        "mode": Mode(mode).value,
        "episodes": episodes,
        "master_seed": master_seed,
        "weights": {"w_accuracy": weights.w_accuracy, "w_delay": weights.w_delay},
        "tasks": len(rows),
        "mean_latency": _mean(lat),
        "accuracy": _mean(ok),
        "per_source_accuracy": per_source,
        "reward": _mean([weights.w_accuracy * c - weights.w_delay * t for c, t in zip(ok, lat)]),
        "mean_breakdown": {k: _mean([float(r[k]) for r in rows]) for k in ("comm", "queue", "compute", "plan", "agg")},
    }


def ranking(summaries: Sequence[dict]) -> list[dict]:
    """Modes ordered by reward (descending), ties by mode name."""
    ordered = sorted(summaries, key=lambda s: (-s["reward"], s["mode"]))
    return [
        {"rank": i, "mode": s["mode"], "reward": s["reward"],
         "mean_latency": s["mean_latency"], "accuracy": s["accuracy"]}
        for i, s in enumerate(ordered, start=1)
    ]
