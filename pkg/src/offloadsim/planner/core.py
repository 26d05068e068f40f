"""Subtask estimates, the per-node score and greedy assignment."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from ..channel import NO_FADING, ChannelParams, FadingSample
from ..compute import ComputeProfile, InferenceJob, aggregation_latency, inference_latency
from ..errors import ConfigurationError, DecodeError
from ..mac import MacParams, tf_exchange_delay
from ..scenario import AP_TX_POWER, Position, distance
from ..workload import CurveParams, scaled_tokens


@dataclass(frozen=True)
class PlanningParams:
    """Knobs shared by the planner backends, the estimator and the engine."""

    max_subtasks: int = 3
    split_threshold: float = 0.35  # parent difficulty at or below this is not split
    instruction_tokens: int = 16  # prompt overhead per subtask when K > 1
    output_overhead_tokens: int = 1  # answer overhead per subtask when K > 1
    dependency_tokens: int = 16  # aggregator context per dependency edge
    agg_output_fraction: float = 0.1  # aggregator answer length vs subtask outputs
    bits_per_token: int = 32
    planner_model_params: float = 7e9
    planner_system_tokens: int = 128
    planner_base_tokens: int = 8
    planner_tokens_per_subtask: int = 16
    # "estimated": aggregator scored on its fusion-accuracy estimate and backlog;
    # "capability": raw capability score, no backlog term
    aggregator_rule: str = "estimated"
    # estimates used when the backend fails and the task runs undecomposed
    fallback_output_tokens: int = 32
    fallback_difficulty: float = 0.5

    def __post_init__(self):
        if self.max_subtasks < 1:
            raise ConfigurationError("max_subtasks must be >= 1")
        if self.aggregator_rule not in ("estimated", "capability"):
            raise ConfigurationError(f"unknown aggregator_rule {self.aggregator_rule!r}")

    def planner_tokens(self, prompt_tokens: int, k: int) -> tuple[int, int]:
        return (
            prompt_tokens + self.planner_system_tokens,
            self.planner_base_tokens + self.planner_tokens_per_subtask * k,
        )


@dataclass(frozen=True)
class Subtask:
    index: int  # 1-based
    role: str
    task_type: str
    prompt_tokens: int
    est_output_tokens: int
    est_difficulty: float
    dependencies: frozenset[int] = frozenset()
    assigned_node: int | None = None
    aggregator_node: int | None = None


@dataclass(frozen=True)
class Plan:
    task_id: int
    subtasks: tuple[Subtask, ...]
    aggregator: int | None = None
    planner_prompt_tokens: int = 0
    planner_output_tokens: int = 0
    est_difficulty: float | None = None  # planner's estimate for the whole task

    @property
    def k(self) -> int:
        return len(self.subtasks)


def check_plan(plan: Plan, max_subtasks: int) -> None:
    """Structural validation: size bound, index range, no self/missing deps, no cycles."""
    k = plan.k
    if k < 1:
        raise DecodeError("plan needs at least one subtask", "subtasks")
    if k > max_subtasks:
        raise DecodeError(f"{k} subtasks exceed max_subtasks={max_subtasks}", "subtasks")
    for pos, sub in enumerate(plan.subtasks):
        if sub.index != pos + 1:
            raise DecodeError(f"index {sub.index} out of order", f"subtasks/{pos}/index")
        for dep in sorted(sub.dependencies):
            if dep == sub.index or not 1 <= dep <= k:
                raise DecodeError(
                    f"dependency {dep} does not name another subtask",
                    f"subtasks/{pos}/dependencies",
                )
    # Kahn's algorithm
    indeg = {s.index: len(s.dependencies) for s in plan.subtasks}
    ready = [i for i, n in indeg.items() if n == 0]
    seen = 0
    while ready:
        i = ready.pop()
        seen += 1
        for s in plan.subtasks:
            if i in s.dependencies:
                indeg[s.index] -= 1
                if indeg[s.index] == 0:
                    ready.append(s.index)
    if seen != k:
        raise DecodeError("dependency cycle", "subtasks")


@dataclass(frozen=True)
class NodeSnapshot:
    node_id: int
    queue_backlog: float
    compute: ComputeProfile
    capability_score: float
    distance_from_planner: float
    distance_from_ue: float
    is_ap: bool = True
    output_scale: float = 1.0  # node-specific answer-length multiplier

    def __post_init__(self):
        if self.queue_backlog < 0:
            raise ConfigurationError("queue_backlog must be >= 0")


@dataclass(frozen=True)
class ScoreWeights:
    w_accuracy: float = 1.0
    w_delay: float = 0.01  # 1/s

    def __post_init__(self):
        if self.w_accuracy < 0 or self.w_delay < 0:
            raise ConfigurationError("weights must be >= 0")


@dataclass(frozen=True)
class LinkContext:
    """Radio facts the planner AP knows when it scores candidates."""

    planner_id: int
    source_ue: int
    channel: ChannelParams = field(default_factory=ChannelParams)
    mac: MacParams = field(default_factory=MacParams)
    tx_power: Mapping[int, float] = field(default_factory=dict)
    positions: Mapping[int, Position] = field(default_factory=dict)
    bits_per_token: int = 32
    xi: FadingSample = NO_FADING

    def leg(self, src: int, dst: int, tokens: int) -> float:
        """Expected TF-scheduled transfer time of ``tokens`` from src to dst."""
        if src == dst:
            return 0.0
        d = distance(self.positions[src], self.positions[dst])
        return self._leg(d, self.tx_power[src], tokens)

    def _leg(self, d: float, power: float, tokens: int) -> float:
        if d == 0:
            return 0.0
        return tf_exchange_delay(tokens * self.bits_per_token, d, power, self.xi, self.channel, self.mac)


def estimate_cmp_latency(sub: Subtask, node: NodeSnapshot) -> float:
    out = scaled_tokens(sub.est_output_tokens, node.output_scale)
    return inference_latency(InferenceJob(sub.prompt_tokens, out), node.compute)


def estimate_correctness(
    sub: Subtask,
    node: NodeSnapshot,
    noise: float,
    rng: np.random.Generator | None,
    curve: CurveParams,
    capability_bonus: float = 0.0,
) -> float:
    cap = min(1.0, node.capability_score + capability_bonus)
    est = curve(cap, sub.est_difficulty)
    if noise > 0:
        est += rng.normal(0.0, noise)
    return min(1.0, max(0.0, est))


def estimate_total_latency(sub: Subtask, node: NodeSnapshot, ctx: LinkContext) -> float:
    """Dispatch leg from the planner AP + queue backlog + computation."""
    power = ctx.tx_power.get(ctx.planner_id, AP_TX_POWER)
    tx = ctx._leg(node.distance_from_planner, power, sub.prompt_tokens)
    return tx + node.queue_backlog + estimate_cmp_latency(sub, node)


def score(accuracy: float, latency: float, weights: ScoreWeights) -> float:
    return weights.w_accuracy * accuracy - weights.w_delay * latency


def score_subtask(
    sub: Subtask,
    node: NodeSnapshot,
    weights: ScoreWeights,
    ctx: LinkContext,
    rng: np.random.Generator | None,
    curve: CurveParams,
    noise: float = 0.0,
    capability_bonus: float = 0.0,
) -> float:
    acc = estimate_correctness(sub, node, noise, rng, curve, capability_bonus)
    return score(acc, estimate_total_latency(sub, node, ctx), weights)


def pick_best(scores: Mapping[int, float]) -> int:
    """Argmax with ties resolved to the lowest node id."""
    return min(scores, key=lambda nid: (-scores[nid], nid))


def assign(
    plan: Plan,
    snapshots: Sequence[NodeSnapshot],
    weights: ScoreWeights,
    ctx: LinkContext,
    rng: np.random.Generator | None,
    curve: CurveParams,
    noise: float = 0.0,
    capability_bonus: float = 0.0,
    params: PlanningParams = PlanningParams(),
    agg_difficulty_scale: float = 0.3,
) -> Plan:
    """Greedy placement: each subtask goes to the best-scoring node, whose
    backlog is then inflated by the estimated service time before the next
    subtask is scored.  Returns the plan with nodes and aggregator filled in.
    """
    if not snapshots:
        raise ConfigurationError("no candidate nodes to assign to")
    bonus = capability_bonus if plan.k > 1 else 0.0
    backlog = {s.node_id: s.queue_backlog for s in snapshots}
    by_id = {s.node_id: s for s in sorted(snapshots, key=lambda s: s.node_id)}
    placed = []
    for sub in plan.subtasks:
        scores = {}
        for nid, snap in by_id.items():
            snap = replace(snap, queue_backlog=backlog[nid])
            scores[nid] = score_subtask(sub, snap, weights, ctx, rng, curve, noise, bonus)
        best = pick_best(scores)
        backlog[best] += estimate_cmp_latency(sub, by_id[best])
        placed.append(replace(sub, assigned_node=best))

    if plan.k == 1:
        agg = placed[0].assigned_node
    else:
        literal = params.aggregator_rule == "capability"
        agg = select_aggregator(
            placed, by_id, {n: 0.0 for n in backlog} if literal else backlog, weights, ctx, params,
            None if literal else curve, agg_difficulty_scale, noise, rng, plan.est_difficulty,
        )
    placed = tuple(replace(s, aggregator_node=agg) for s in placed)
    return replace(plan, subtasks=placed, aggregator=agg)


def aggregator_inputs(subs: Sequence[Subtask], out_tokens: Sequence[int], params: PlanningParams) -> list[int]:
    """Tokens the aggregator prefills per subtask: its answer plus dependency context."""
    return [o + params.dependency_tokens * len(s.dependencies) for s, o in zip(subs, out_tokens)]


def aggregator_output(out_tokens: Sequence[int], params: PlanningParams) -> int:
    """Fused answer length before the aggregator's own verbosity, from unscaled subtask answers."""
    return int(round(params.agg_output_fraction * sum(out_tokens)))


def select_aggregator(
    placed: Sequence[Subtask],
    nodes: Mapping[int, NodeSnapshot],
    backlog: Mapping[int, float],
    weights: ScoreWeights,
    ctx: LinkContext,
    params: PlanningParams,
    curve: CurveParams | None = None,
    difficulty_scale: float = 0.3,
    noise: float = 0.0,
    rng: np.random.Generator | None = None,
    task_difficulty: float | None = None,
) -> int:
    """AP maximising ``w_a*acc - w_d*(slowest inbound result + backlog + fusion time)``.

    ``acc`` is the curve evaluated at the task difficulty estimate (else the
    hardest subtask estimate) scaled by ``difficulty_scale``; without a curve the
    raw capability score stands in.  ``noise`` perturbs the curve value like
    any other accuracy estimate.
    """
    if task_difficulty is None:
        task_difficulty = max(s.est_difficulty for s in placed)
    d = min(1.0, difficulty_scale * task_difficulty)
    outs = [scaled_tokens(s.est_output_tokens, nodes[s.assigned_node].output_scale) for s in placed]
    inputs = aggregator_inputs(placed, outs, params)
    agg_out = aggregator_output([s.est_output_tokens for s in placed], params)
    scores = {}
    for nid, snap in nodes.items():
        if not snap.is_ap:
            continue
        inbound = max(ctx.leg(s.assigned_node, nid, o) for s, o in zip(placed, outs))
        fuse = aggregation_latency(inputs, scaled_tokens(agg_out, snap.output_scale), snap.compute)
        if curve is None:
            acc = snap.capability_score
        else:
            acc = curve(snap.capability_score, d)
            if noise > 0:
                acc = min(1.0, max(0.0, acc + rng.normal(0.0, noise)))
        scores[nid] = score(acc, inbound + backlog[nid] + fuse, weights)
    if not scores:
        raise ConfigurationError("no AP available as aggregator")
    return pick_best(scores)
