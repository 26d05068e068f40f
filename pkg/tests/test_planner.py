from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from offloadsim.compute import ComputeProfile
from offloadsim.errors import BackendError, ConfigurationError, DecodeError
from offloadsim.planner import (
    LinkContext, NodeSnapshot, Plan, PlannerBackend, PlanningParams, ScoreWeights, Subtask,
    SyntheticPlanner, assign, check_plan, choose_k, decompose, estimate_cmp_latency,
    estimate_correctness, estimate_total_latency, partition, pick_best, score, score_subtask,
    select_aggregator,
)
from offloadsim.scenario import Position
from offloadsim.workload import CurveParams, Source, Task

CURVE = CurveParams()
PARAMS = PlanningParams()
EDGE = ComputeProfile(7e9, 312e12, 2e12)
W = ScoreWeights()


def task(difficulty=0.5, prompt=300, out=120, tid=1):
    return Task(tid, 10, Source.DAILY, "general", prompt, out, difficulty, 0.0)


def snap(nid, cap=0.5, backlog=0.0, d_planner=0.0, cp=EDGE, is_ap=True):
    return NodeSnapshot(nid, backlog, cp, cap, d_planner, 0.0, is_ap)


def sub(i=1, prompt=1024, out=100, diff=0.4, deps=()):
    return Subtask(i, "solver", "general", prompt, out, diff, frozenset(deps))


def ctx_for(positions, planner=0, ue=99):
    return LinkContext(planner, ue, tx_power={n: 25.0 for n in positions}, positions=positions)


# decomposition ---------------------------------------------------------------

def test_easy_task_is_not_split():
    plan = SyntheticPlanner(PARAMS).plan(task(difficulty=0.2))
    assert plan.k == 1
    assert plan.subtasks[0].prompt_tokens == 300


def test_hard_task_splits_to_max():
    t = task(difficulty=0.9)
    plan = SyntheticPlanner(PARAMS).plan(t)
    assert plan.k == 3
    assert sum(s.prompt_tokens for s in plan.subtasks) == t.prompt_tokens + 3 * PARAMS.instruction_tokens
    check_plan(plan, 3)


def test_choose_k_thresholds():
    assert choose_k(PARAMS.split_threshold, PARAMS) == 1
    assert choose_k(1.0, PARAMS) == 3
    assert choose_k(0.9, replace(PARAMS, max_subtasks=1)) == 1


def test_partition_relief_and_overheads():
    t = task(difficulty=0.8, prompt=301, out=100)
    parts = partition(t, 2, PARAMS, relief=0.5)
    assert [p.prompt_tokens for p in parts] == [151 + 16, 150 + 16]
    assert all(p.difficulty == pytest.approx(0.4) for p in parts)
    assert partition(t, 1, PARAMS, relief=0.5)[0].difficulty == 0.8


class _Broken(PlannerBackend):
    def __init__(self, exc):
        super().__init__(PARAMS)
        self.exc = exc

    def plan(self, task, snapshots=()):
        raise self.exc


@pytest.mark.parametrize("exc", [BackendError("down"), DecodeError("bad", "subtasks")])
def test_backend_failure_falls_back(exc):
    backend = _Broken(exc)
    plan = decompose(task(difficulty=0.9), backend)
    assert plan.k == 1
    assert backend.failures == 1 and backend.calls == 1
    assert plan.subtasks[0].est_output_tokens == PARAMS.fallback_output_tokens


def test_synthetic_planner_deterministic():
    p = SyntheticPlanner(PARAMS, noise=0.2, seed=5)
    t = task(difficulty=0.7)
    assert p.plan(t) == p.plan(t)
    assert SyntheticPlanner(PARAMS, noise=0.2, seed=6).plan(t) != p.plan(t)


def test_oracle_planner_estimates_truth():
    t = task(difficulty=0.9)
    plan = SyntheticPlanner(PARAMS, noise=0.0).plan(t)
    truth = partition(t, plan.k, PARAMS)
    assert [s.est_output_tokens for s in plan.subtasks] == [x.output_tokens for x in truth]
    assert plan.est_difficulty == t.difficulty


# estimates -----------------------------------------------------------------

def test_cmp_estimate():
    assert estimate_cmp_latency(sub(), snap(0)) == pytest.approx(0.745949, rel=1e-6)
    s0 = sub(out=0)
    assert estimate_cmp_latency(s0, snap(0)) == pytest.approx(float(oracles.prefill(1024, 7e9, 312e12)))
    big = snap(1, cp=ComputeProfile(14e9, 312e12, 2e12))
    assert estimate_cmp_latency(sub(), big) > estimate_cmp_latency(sub(), snap(0))


def test_correctness_estimate():
    s = sub(diff=0.4)
    exact = CURVE(0.5, 0.4)
    assert estimate_correctness(s, snap(0), 0.0, None, CURVE) == exact
    rng = np.random.default_rng(3)
    mid = sub(diff=0.45)
    centre = CURVE(0.5, 0.45)
    dev = [abs(estimate_correctness(mid, snap(0), 0.1, rng, CURVE) - centre) for _ in range(10_000)]
    assert np.mean(dev) == pytest.approx(0.1 * np.sqrt(2 / np.pi), abs=0.005)
    wild = [estimate_correctness(s, snap(0), 5.0, rng, CURVE) for _ in range(1000)]
    assert min(wild) >= 0.0 and max(wild) <= 1.0


def test_total_latency_estimate():
    ctx = ctx_for({0: Position(0, 0), 1: Position(3, 4), 2: Position(10, 0)})
    s = sub()
    cmp = estimate_cmp_latency(s, snap(0))
    assert estimate_total_latency(s, snap(0), ctx) == cmp
    assert estimate_total_latency(s, snap(0, backlog=2.0), ctx) == pytest.approx(cmp + 2.0)
    # three nodes by hand: TF + 2 SIFS + ACK + bits/rate + backlog + cmp
    for nid, d, backlog in ((0, 0.0, 0.0), (1, 5.0, 1.5), (2, 10.0, 0.25)):
        tx = 0.0 if d == 0 else 100e-6 + 32e-6 + 34e-6 + 1024 * 32 / float(oracles.rate_bps(d, 25))
        want = tx + backlog + float(oracles.inference(1024, 100, 7e9, 312e12, 2e12))
        got = estimate_total_latency(s, snap(nid, backlog=backlog, d_planner=d), ctx)
        assert got == pytest.approx(want, rel=1e-9)


def test_score_examples():
    assert score(0.8, 10.0, W) == pytest.approx(0.70)
    assert score(0.8, 10.0, ScoreWeights(1.0, 0.0)) == 0.8
    assert score(0.5, 1.0, W) > score(0.5, 2.0, W)
    with pytest.raises(ConfigurationError):
        ScoreWeights(-1, 0)


# assignment ------------------------------------------------------------------

def test_argmax_pick():
    assert pick_best({3: 0.7, 1: 0.5}) == 3
    assert pick_best({3: 0.7, 1: 0.7}) == 1


def test_single_subtask_goes_to_best_node():
    ctx = ctx_for({0: Position(0, 0), 1: Position(0, 0)})
    plan = Plan(1, (sub(diff=0.3),))
    out = assign(plan, [snap(0, cap=0.8), snap(1, cap=0.3)], W, ctx, None, CURVE)
    assert out.subtasks[0].assigned_node == 0 and out.aggregator == 0


def test_queue_feedback_spreads_identical_subtasks():
    ctx = ctx_for({0: Position(0, 0), 1: Position(0, 0), 2: Position(0, 0)})
    plan = Plan(1, (sub(1), sub(2, deps=[1])))
    out = assign(plan, [snap(1), snap(2)], W, ctx, None, CURVE, params=PARAMS)
    assert [s.assigned_node for s in out.subtasks] == [1, 2]


def test_empty_snapshot_list():
    with pytest.raises(ConfigurationError):
        assign(Plan(1, (sub(),)), [], W, ctx_for({}), None, CURVE)


def _greedy_oracle(plan, snaps, ctx, weights, bonus):
    """Replays the greedy rule from first principles."""
    backlog = {s.node_id: s.queue_backlog for s in snaps}
    chosen = []
    for s in plan.subtasks:
        best, best_j = None, None
        for n in sorted(snaps, key=lambda n: n.node_id):
            acc = CURVE(min(1.0, n.capability_score + bonus), s.est_difficulty)
            cmp = float(oracles.inference(s.prompt_tokens, s.est_output_tokens, n.compute.model_params,
                                          n.compute.flops, n.compute.mem_bandwidth))
            d = n.distance_from_planner
            tx = 0.0 if d == 0 else 166e-6 + s.prompt_tokens * 32 / float(oracles.rate_bps(d, 25))
            j = weights.w_accuracy * acc - weights.w_delay * (tx + backlog[n.node_id] + cmp)
            if best_j is None or j > best_j + 1e-12:
                best, best_j = n.node_id, j
        backlog[best] += float(oracles.inference(s.prompt_tokens, s.est_output_tokens, *_cp(snaps, best)))
        chosen.append(best)
    return chosen


def _cp(snaps, nid):
    cp = next(s.compute for s in snaps if s.node_id == nid)
    return cp.model_params, cp.flops, cp.mem_bandwidth


def _random_case(seed):
    rng = np.random.default_rng(seed)
    positions = {i: Position(*rng.uniform(0, 50, 2)) for i in range(4)}
    snaps = []
    for i in range(4):
        cp = ComputeProfile(float(rng.choice([7e9, 14e9, 32e9])), rng.uniform(120e12, 312e12), rng.uniform(0.6e12, 2e12))
        d = float(np.hypot(positions[i].x - positions[0].x, positions[i].y - positions[0].y))
        snaps.append(NodeSnapshot(i, float(rng.uniform(0, 5)), cp, float(rng.uniform(0.3, 0.8)), d, 0.0))
    subs = tuple(
        Subtask(k, "solver", "g", int(rng.integers(50, 800)), int(rng.integers(10, 300)),
                float(rng.uniform(0, 1)), frozenset({1}) if k > 1 else frozenset())
        for k in range(1, 4)
    )
    return Plan(seed, subs), snaps, ctx_for(positions)


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 42])
def test_assign_matches_greedy_oracle(seed):
    plan, snaps, ctx = _random_case(seed)
    out = assign(plan, snaps, W, ctx, None, CURVE, capability_bonus=0.05)
    assert [s.assigned_node for s in out.subtasks] == _greedy_oracle(plan, snaps, ctx, W, 0.05)


def test_literal_aggregator_rule_uses_capability():
    ctx = ctx_for({0: Position(0, 0), 1: Position(0, 0)})
    placed = [replace(sub(1), assigned_node=0), replace(sub(2), assigned_node=0)]
    nodes = {0: snap(0, cap=0.4), 1: snap(1, cap=0.9)}
    assert select_aggregator(placed, nodes, {0: 0.0, 1: 0.0}, W, ctx, PARAMS) == 1
    # a UE is never an aggregator
    nodes[1] = snap(1, cap=0.9, is_ap=False)
    assert select_aggregator(placed, nodes, {0: 0.0, 1: 0.0}, W, ctx, PARAMS) == 0


def test_estimated_aggregator_rule_sees_backlog():
    ctx = ctx_for({0: Position(0, 0), 1: Position(0, 0)})
    placed = [replace(sub(1), assigned_node=0), replace(sub(2), assigned_node=0)]
    nodes = {0: snap(0, cap=0.6), 1: snap(1, cap=0.6)}
    pick = select_aggregator(placed, nodes, {0: 30.0, 1: 0.0}, W, ctx, PARAMS, CURVE)
    assert pick == 1


def test_check_plan_rejections():
    with pytest.raises(DecodeError):
        check_plan(Plan(1, ()), 3)
    with pytest.raises(DecodeError, match="max_subtasks"):
        check_plan(Plan(1, tuple(sub(i) for i in range(1, 5))), 3)
    with pytest.raises(DecodeError, match="cycle"):
        check_plan(Plan(1, (sub(1, deps=[2]), sub(2, deps=[1]))), 3)
    with pytest.raises(DecodeError, match="dependency"):
        check_plan(Plan(1, (sub(1, deps=[1]),)), 3)


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2**32), st.floats(-100, 100))
def test_argmax_invariant_under_shift(seed, c):
    rng = np.random.default_rng(seed)
    scores = {int(n): float(v) for n, v in zip(rng.permutation(8)[:5], rng.normal(size=5))}
    assert pick_best(scores) == pick_best({n: v + c for n, v in scores.items()}) or \
        len({round(v + c, 9) for v in scores.values()}) < len(scores)


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2**32), st.floats(0, 1), st.floats(0, 0.5))
def test_synthetic_plans_are_valid(seed, difficulty, noise):
    t = task(difficulty=difficulty, tid=seed % 1000)
    plan = SyntheticPlanner(PARAMS, noise=noise, seed=seed).plan(t)
    check_plan(plan, PARAMS.max_subtasks)
    assert 1 <= plan.k <= PARAMS.max_subtasks


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 0.3))
def test_assign_deterministic(seed, noise):
    plan, snaps, ctx = _random_case(seed)
    a = assign(plan, snaps, W, ctx, np.random.default_rng(seed), CURVE, noise)
    b = assign(plan, snaps, W, ctx, np.random.default_rng(seed), CURVE, noise)
    assert a == b
    assert all(s.assigned_node in range(4) for s in a.subtasks)


def test_score_subtask_composition():
    ctx = ctx_for({0: Position(0, 0)})
    s, n = sub(), snap(0, backlog=1.0)
    assert score_subtask(s, n, W, ctx, None, CURVE) == pytest.approx(
        CURVE(0.5, 0.4) - 0.01 * estimate_total_latency(s, n, ctx))
