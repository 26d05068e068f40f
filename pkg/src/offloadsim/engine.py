"""Discrete-event simulation of one episode.

Each UE runs a gated Poisson source: a task is created, travels through the
stages of the selected execution mode, and only after its final answer
reaches the UE is the next inter-arrival drawn.  Every node serves compute
jobs FIFO, one at a time.  Decomposed tasks move through synchronised
phases (dispatch all, run all, collect all) so the realised latency splits
exactly into planning, the slowest subtask, aggregation and radio time.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Any, Iterable, Sequence

import numpy as np

from .channel import NO_FADING, FadingSample, sample_fading
from .compute import ComputeProfile, InferenceJob, aggregation_latency, inference_latency
from .errors import DomainError
from .mac import simulate_backoff_round, tf_exchange_delay, uplink_delay
from .planner import (
    LinkContext,
    NodeSnapshot,
    Plan,
    PlannerBackend,
    PlanningParams,
    ScoreWeights,
    SyntheticPlanner,
    aggregator_inputs,
    aggregator_output,
    assign,
    decompose,
    estimate_cmp_latency,
    estimate_total_latency,
    partition,
)
from .scenario import NodeKind, NodeProfile, Scenario, distance, nearest_ap
from .workload import (
    ArrivalState,
    Calibration,
    Source,
    Task,
    aggregate_correctness,
    next_arrival,
    realize_correctness,
    scaled_tokens,
    synth_task,
)


class Mode(str, Enum):
    LOCAL_ONLY = "LOCAL_ONLY"
    NEAREST_EDGE = "NEAREST_EDGE"
    DECOMPOSE_PLAN = "DECOMPOSE_PLAN"


class EventKind(IntEnum):
    ARRIVAL = 0
    UL_DONE = 1
    PLAN_DONE = 2
    DISPATCH_DONE = 3
    SUBTASK_DONE = 4
    RESULT_AT_AGG = 5
    AGG_DONE = 6
    DL_DONE = 7


# events that mark the end of a radio transfer between two nodes
TX_EVENTS = frozenset({EventKind.UL_DONE, EventKind.DISPATCH_DONE,
                       EventKind.RESULT_AT_AGG, EventKind.DL_DONE})

# per-UE random stream identifiers
_ARRIVAL, _TASK, _FADING, _BACKOFF, _CORRECT, _PLANNER = range(6)


@dataclass(order=True)
class Event:
    time: float
    kind: EventKind
    seq: int
    payload: Any = field(compare=False, default=None)


@dataclass
class Job:
    seq: int
    enqueued: float
    start: float
    end: float
    est: float


@dataclass
class NodeState:
    """FIFO single-server compute queue of one node."""

    node_id: int
    busy_until: float = 0.0
    jobs: list[Job] = field(default_factory=list)
    log: list[Job] = field(default_factory=list)
    _seq: itertools.count = field(default_factory=itertools.count, repr=False)

    def enqueue(self, now: float, service: float, est: float | None = None) -> Job:
        start = max(now, self.busy_until)
        job = Job(next(self._seq), now, start, start + service, service if est is None else est)
        self.busy_until = job.end
        self.jobs.append(job)
        self.log.append(job)
        return job

    def backlog(self, now: float) -> float:
        """Estimated work still ahead of a job arriving now."""
        self.jobs = [j for j in self.jobs if j.end > now]
        total = 0.0
        for j in self.jobs:
            if j.start >= now:
                total += j.est
            else:
                total += max(0.0, j.start + j.est - now)
        return total


@dataclass(frozen=True)
class Breakdown:
    comm: float = 0.0
    queue: float = 0.0
    compute: float = 0.0
    plan: float = 0.0
    agg: float = 0.0

    @property
    def total(self) -> float:
        return self.comm + self.queue + self.compute + self.plan + self.agg


@dataclass(frozen=True)
class SubtaskRecord:
    index: int
    node: int
    p2e: float
    queue: float
    compute: float
    e2a: float
    est_total: float
    correct: bool | None = None


@dataclass(frozen=True)
class TaskRecord:
    task_id: int
    mode: Mode
    source: Source
    source_ue: int
    created_at: float
    completed_at: float
    latency_total: float
    breakdown: Breakdown
    correct: bool
    k: int = 1
    subtasks: tuple[SubtaskRecord, ...] = ()


@dataclass
class EpisodeMetrics:
    mode: Mode
    records: list[TaskRecord]
    arrived: dict[int, int]
    in_flight: dict[int, int]
    planner_failures: int = 0
    planner_calls: int = 0
    trace: list[tuple[float, str, int]] = field(default_factory=list)
    service_log: dict[int, list[Job]] = field(default_factory=dict)
    weights: ScoreWeights = field(default_factory=ScoreWeights)

    @property
    def mean_latency(self) -> float:
        if not self.records:
            return 0.0
        return sum(r.latency_total for r in self.records) / len(self.records)

    @property
    def accuracy(self) -> float:
        if not self.records:
            return 0.0
        return sum(r.correct for r in self.records) / len(self.records)

    @property
    def reward(self) -> float:
        return objective(self.records, self.weights)

    @property
    def per_source_accuracy(self) -> dict[str, float]:
        out = {}
        for s in Source:
            rs = [r for r in self.records if r.source is s]
            if rs:
                out[s.value] = sum(r.correct for r in rs) / len(rs)
        return out


def single_mode_latency(cmp: float, comm: float, que: float) -> float:
    return cmp + comm + que


def decomposed_latency(
    plan_cmp: float, per_subtask: Sequence[tuple[float, float]], agg: float, comm: float
) -> float:
    """Planning + slowest (compute + queue) subtask + aggregation + radio."""
    if not per_subtask:
        raise DomainError("decomposed latency needs at least one subtask")
    return plan_cmp + max(c + q for c, q in per_subtask) + agg + comm


def objective(records: Iterable[TaskRecord], weights: ScoreWeights) -> float:
    """Mean of ``w_a * correct - w_d * latency`` over completed tasks (0 if none)."""
    vals = [weights.w_accuracy * r.correct - weights.w_delay * r.latency_total for r in records]
    return sum(vals) / len(vals) if vals else 0.0


@dataclass
class EngineConfig:
    calibration: Calibration = field(default_factory=Calibration.load)
    weights: ScoreWeights = field(default_factory=ScoreWeights)
    planning: PlanningParams = field(default_factory=PlanningParams)
    planner_noise: float = 0.0
    fading: bool = True
    backend: PlannerBackend | None = None
    trace: bool = False


@dataclass
class _Sub:
    plan_index: int
    node: int
    prompt: int
    out: int  # realised answer tokens (node verbosity applied)
    base_out: int  # answer tokens before verbosity
    est_service: float
    est_total: float
    p2e: float = 0.0
    job: Job | None = None
    e2a: float = 0.0
    correct: bool | None = None


@dataclass
class _Flow:
    task: Task
    ue: int
    ap: int  # nearest AP (upload target / planner host)
    ul: float = 0.0
    plan: Plan | None = None
    plan_wait: float = 0.0
    plan_cmp: float = 0.0
    tf: float = 0.0
    subs: list[_Sub] = field(default_factory=list)
    done_subs: int = 0
    agg_node: int | None = None
    agg_job: Job | None = None
    agg_out: int = 0
    dl: float = 0.0


class Simulation:
    """State of one episode; use :func:`run_episode` for the public entry point."""

    def __init__(self, scenario: Scenario, mode: Mode, duration: float, seed: int, cfg: EngineConfig):
        if not duration > 0:
            raise DomainError("duration must be > 0")
        self.s = scenario
        self.mode = Mode(mode)
        self.duration = duration
        self.cfg = cfg
        self.calib = cfg.calibration
        self.params = cfg.planning
        self.nodes = {n.node_id: n for n in scenario.nodes}
        self.state = {nid: NodeState(nid) for nid in self.nodes}
        self.planner_busy = {ap.node_id: 0.0 for ap in scenario.aps}
        self.arrivals = {ue.node_id: ArrivalState() for ue in scenario.ues}
        self.arrived = {ue.node_id: 0 for ue in scenario.ues}
        self.ul_busy = {ue.node_id: (0.0, 0.0) for ue in scenario.ues}
        self.nearest = {ue.node_id: nearest_ap(scenario, ue.node_id) for ue in scenario.ues}
        self.rngs = {
            ue.node_id: [np.random.default_rng([seed, ue.node_id, k]) for k in range(6)]
            for ue in scenario.ues
        }
        relief = {src: prof.split_relief for src, prof in self.calib.sources.items()}
        self.backend = cfg.backend or SyntheticPlanner(self.params, cfg.planner_noise, seed, relief)
        self._failures_before = self.backend.failures
        self._calls_before = self.backend.calls
        self.queue: list[Event] = []
        self._seq = itertools.count()
        self._task_ids = itertools.count()
        self.records: list[TaskRecord] = []
        self.trace: list[tuple[float, str, int]] = []
        self.now = 0.0

    # helpers -------------------------------------------------------------

    def push(self, time: float, kind: EventKind, payload) -> None:
        heapq.heappush(self.queue, Event(time, kind, next(self._seq), payload))

    def relief(self, task: Task) -> float:
        return self.calib.sources[task.source].split_relief

    def scale(self, nid: int) -> float:
        return self.calib.length.scale(self.nodes[nid].capability_score)

    def xi(self, ue: int) -> FadingSample:
        if not self.cfg.fading:
            return NO_FADING
        return sample_fading(self.rngs[ue][_FADING])

    def leg(self, src: int, dst: int, tokens: int, ue: int) -> float:
        """Realised TF-scheduled transfer; zero when nothing crosses the air."""
        if src == dst:
            return 0.0
        a, b = self.nodes[src], self.nodes[dst]
        d = distance(a.position, b.position)
        if d == 0:
            return 0.0
        bits = tokens * self.params.bits_per_token
        return tf_exchange_delay(bits, d, a.tx_power, self.xi(ue), self.s.channel, self.s.mac)

    def uplink(self, flow: _Flow) -> float:
        ue, ap = self.nodes[flow.ue], self.nodes[flow.ap]
        busy = [u for u, (a, b) in self.ul_busy.items() if u != flow.ue and a <= self.now < b]
        rng = self.rngs[flow.ue][_BACKOFF]
        t_cont = simulate_backoff_round([flow.ue, *busy], rng, self.s.mac).elapsed
        bits = flow.task.prompt_tokens * self.params.bits_per_token
        d = distance(ue.position, ap.position)
        ul = uplink_delay(bits, d, ue.tx_power, self.xi(flow.ue), self.s.channel, self.s.mac, t_cont=t_cont)
        self.ul_busy[flow.ue] = (self.now, self.now + ul)
        return ul

    def run_job(self, nid: int, prompt: int, out: int, est: float | None = None) -> Job:
        cp = self.nodes[nid].compute
        return self.state[nid].enqueue(self.now, inference_latency(InferenceJob(prompt, out), cp), est)

    def snapshot(self, node: NodeProfile, flow: _Flow) -> NodeSnapshot:
        planner = self.nodes[flow.ap].position
        ue = self.nodes[flow.ue].position
        return NodeSnapshot(
            node_id=node.node_id,
            queue_backlog=self.state[node.node_id].backlog(self.now),
            compute=node.compute,
            capability_score=node.capability_score,
            distance_from_planner=distance(planner, node.position),
            distance_from_ue=distance(ue, node.position),
            is_ap=node.kind is NodeKind.AP,
            output_scale=self.scale(node.node_id),
        )

    def candidates(self, flow: _Flow) -> list[NodeSnapshot]:
        nodes = [self.nodes[flow.ue], *self.s.aps]
        return [self.snapshot(n, flow) for n in nodes]

    def link_context(self, flow: _Flow) -> LinkContext:
        return LinkContext(
            planner_id=flow.ap,
            source_ue=flow.ue,
            channel=self.s.channel,
            mac=self.s.mac,
            tx_power={n.node_id: n.tx_power for n in self.s.nodes},
            positions={n.node_id: n.position for n in self.s.nodes},
            bits_per_token=self.params.bits_per_token,
        )

    # event handlers --------------------------------------------------------

    def arrival(self, ue: int) -> int:
        rngs = self.rngs[ue]
        source = list(Source)[int(rngs[_TASK].integers(len(Source)))]
        task = synth_task(rngs[_TASK], source, self.now, self.calib, next(self._task_ids), ue)
        self.arrivals[ue].in_flight = True
        self.arrived[ue] += 1
        flow = _Flow(task, ue, self.nearest[ue])
        if self.mode is Mode.LOCAL_ONLY:
            out = scaled_tokens(task.true_output_tokens, self.scale(ue))
            job = self.run_job(ue, task.prompt_tokens, out)
            flow.subs = [_Sub(1, ue, task.prompt_tokens, out, task.true_output_tokens, job.end - job.start, 0.0, job=job)]
            self.push(job.end, EventKind.SUBTASK_DONE, (flow, 0))
        else:
            flow.ul = self.uplink(flow)
            self.push(self.now + flow.ul, EventKind.UL_DONE, flow)
        return task.id

    def ul_done(self, flow: _Flow) -> None:
        task = flow.task
        if self.mode is Mode.NEAREST_EDGE:
            out = scaled_tokens(task.true_output_tokens, self.scale(flow.ap))
            job = self.run_job(flow.ap, task.prompt_tokens, out)
            flow.subs = [_Sub(1, flow.ap, task.prompt_tokens, out, task.true_output_tokens, job.end - job.start, 0.0, job=job)]
            self.push(job.end, EventKind.SUBTASK_DONE, (flow, 0))
            return
        snaps = self.candidates(flow)
        flow.plan = decompose(task, self.backend, snaps)
        ap = self.nodes[flow.ap].compute
        planner_cp = ComputeProfile(self.params.planner_model_params, ap.flops, ap.mem_bandwidth,
                                    ap.bytes_per_param)
        job = InferenceJob(flow.plan.planner_prompt_tokens, flow.plan.planner_output_tokens)
        start = max(self.now, self.planner_busy[flow.ap])
        flow.plan_wait = start - self.now
        flow.plan_cmp = inference_latency(job, planner_cp)
        self.planner_busy[flow.ap] = start + flow.plan_cmp
        flow.tf = self.s.mac.t_tf  # TF broadcast collecting node status
        self.push(start + flow.plan_cmp + flow.tf, EventKind.PLAN_DONE, flow)

    def plan_done(self, flow: _Flow) -> None:
        task = flow.task
        snaps = self.candidates(flow)
        bonus = self.calib.sources[task.source].decomposition_bonus
        plan = assign(
            flow.plan, snaps, self.cfg.weights, self.link_context(flow), self.rngs[flow.ue][_PLANNER],
            self.calib.correctness.base_curve, self.cfg.planner_noise, bonus, self.params,
            self.calib.model_for(task.source).aggregation_difficulty_scale,
        )
        flow.plan = plan
        flow.agg_node = plan.aggregator
        by_id = {s.node_id: s for s in snaps}
        ctx = self.link_context(flow)
        truths = partition(task, plan.k, self.params, self.relief(task))
        for sub, truth in zip(plan.subtasks, truths):
            nid = sub.assigned_node
            snap = by_id[nid]
            flow.subs.append(_Sub(
                plan_index=sub.index,
                node=nid,
                prompt=sub.prompt_tokens,
                out=scaled_tokens(truth.output_tokens, self.scale(nid)),
                base_out=truth.output_tokens,
                est_service=estimate_cmp_latency(sub, snap),
                est_total=estimate_total_latency(sub, snap, ctx),
                p2e=self.leg(flow.ap, nid, sub.prompt_tokens, flow.ue),
            ))
        self.push(self.now + max(s.p2e for s in flow.subs), EventKind.DISPATCH_DONE, flow)

    def dispatch_done(self, flow: _Flow) -> None:
        for i, sub in enumerate(flow.subs):
            sub.job = self.run_job(sub.node, sub.prompt, sub.out, sub.est_service)
            self.push(sub.job.end, EventKind.SUBTASK_DONE, (flow, i))

    def subtask_done(self, flow: _Flow, i: int) -> None:
        flow.done_subs += 1
        if flow.done_subs < len(flow.subs):
            return
        if self.mode is Mode.LOCAL_ONLY:
            self.finish(flow)
            return
        if len(flow.subs) == 1:
            sub = flow.subs[0]
            flow.dl = self.leg(sub.node, flow.ue, sub.out, flow.ue)
            self.push(self.now + flow.dl, EventKind.DL_DONE, flow)
            return
        for sub in flow.subs:
            sub.e2a = self.leg(sub.node, flow.agg_node, sub.out, flow.ue)
        self.push(self.now + max(s.e2a for s in flow.subs), EventKind.RESULT_AT_AGG, flow)

    def result_at_agg(self, flow: _Flow) -> None:
        nid = flow.agg_node
        plan_subs = flow.plan.subtasks
        outs = [s.out for s in flow.subs]
        inputs = aggregator_inputs(plan_subs, outs, self.params)
        base = [s.base_out for s in flow.subs]
        flow.agg_out = scaled_tokens(aggregator_output(base, self.params), self.scale(nid))
        cp = self.nodes[nid].compute
        est_outs = [scaled_tokens(s.est_output_tokens, self.scale(x.node)) for s, x in zip(plan_subs, flow.subs)]
        est_base = [s.est_output_tokens for s in plan_subs]
        est = aggregation_latency(
            aggregator_inputs(plan_subs, est_outs, self.params),
            scaled_tokens(aggregator_output(est_base, self.params), self.scale(nid)), cp,
        )
        flow.agg_job = self.state[nid].enqueue(self.now, aggregation_latency(inputs, flow.agg_out, cp), est)
        self.push(flow.agg_job.end, EventKind.AGG_DONE, flow)

    def agg_done(self, flow: _Flow) -> None:
        flow.dl = self.leg(flow.agg_node, flow.ue, flow.agg_out, flow.ue)
        self.push(self.now + flow.dl, EventKind.DL_DONE, flow)

    # completion ------------------------------------------------------------

    def judge(self, flow: _Flow) -> bool:
        task = flow.task
        rng = self.rngs[flow.ue][_CORRECT]
        model = self.calib.model_for(task.source)
        if len(flow.subs) == 1:
            cap = self.nodes[flow.subs[0].node].capability_score
            ok = realize_correctness(cap, task.difficulty, model, rng)
            flow.subs[0].correct = ok
            return ok
        truths = partition(task, len(flow.subs), self.params, self.relief(task))
        for sub, truth in zip(flow.subs, truths):
            cap = min(1.0, self.nodes[sub.node].capability_score + model.decomposition_bonus)
            sub.correct = realize_correctness(cap, truth.difficulty, model, rng)
        agg_p = model.aggregator_probability(self.nodes[flow.agg_node].capability_score, task.difficulty)
        return aggregate_correctness([s.correct for s in flow.subs], agg_p, model.aggregation_rule, rng)

    def breakdown(self, flow: _Flow) -> Breakdown:
        if self.mode is not Mode.DECOMPOSE_PLAN:
            job = flow.subs[0].job
            return Breakdown(
                comm=flow.ul + flow.dl,
                queue=job.start - job.enqueued,
                compute=job.end - job.start,
            )
        crit = max(flow.subs, key=lambda s: s.job.end)
        comm = flow.ul + flow.tf + max(s.p2e for s in flow.subs) + flow.dl
        queue = flow.plan_wait + crit.job.start - crit.job.enqueued
        agg = 0.0
        if flow.agg_job is not None:
            comm += max(s.e2a for s in flow.subs)
            queue += flow.agg_job.start - flow.agg_job.enqueued
            agg = flow.agg_job.end - flow.agg_job.start
        return Breakdown(comm, queue, crit.job.end - crit.job.start, flow.plan_cmp, agg)

    def finish(self, flow: _Flow) -> None:
        task = flow.task
        correct = self.judge(flow)
        subs = tuple(
            SubtaskRecord(s.plan_index, s.node, s.p2e, s.job.start - s.job.enqueued,
                          s.job.end - s.job.start, s.e2a, s.est_total, s.correct)
            for s in flow.subs
        )
        self.records.append(TaskRecord(
            task_id=task.id,
            mode=self.mode,
            source=task.source,
            source_ue=flow.ue,
            created_at=task.created_at,
            completed_at=self.now,
            latency_total=self.now - task.created_at,
            breakdown=self.breakdown(flow),
            correct=correct,
            k=len(flow.subs),
            subtasks=subs,
        ))
        gate = self.arrivals[flow.ue]
        gate.in_flight = False
        gate.last_completion = self.now
        self.schedule_arrival(flow.ue)

    def schedule_arrival(self, ue: int) -> None:
        rate = self.nodes[ue].arrival_rate
        t = self.now + next_arrival(self.arrivals[ue], self.rngs[ue][_ARRIVAL], rate)
        if t <= self.duration:
            self.push(t, EventKind.ARRIVAL, ue)

    # main loop -------------------------------------------------------------

    def run(self) -> EpisodeMetrics:
        for ue in self.s.ues:
            self.schedule_arrival(ue.node_id)
        handlers = {
            EventKind.UL_DONE: self.ul_done,
            EventKind.PLAN_DONE: self.plan_done,
            EventKind.DISPATCH_DONE: self.dispatch_done,
            EventKind.RESULT_AT_AGG: self.result_at_agg,
            EventKind.AGG_DONE: self.agg_done,
            EventKind.DL_DONE: self.finish,
        }
        while self.queue and self.queue[0].time <= self.duration:
            ev = heapq.heappop(self.queue)
            self.now = ev.time
            if ev.kind is EventKind.ARRIVAL:
                task_id = self.arrival(ev.payload)
            elif ev.kind is EventKind.SUBTASK_DONE:
                flow, i = ev.payload
                self.subtask_done(flow, i)
                task_id = flow.task.id
            else:
                handlers[ev.kind](ev.payload)
                task_id = ev.payload.task.id
            if self.cfg.trace:
                self.trace.append((ev.time, ev.kind.name, task_id))

        in_flight = {ue: int(st.in_flight) for ue, st in self.arrivals.items()}
        return EpisodeMetrics(
            mode=self.mode,
            records=self.records,
            arrived=self.arrived,
            in_flight=in_flight,
            planner_failures=self.backend.failures - self._failures_before,
            planner_calls=self.backend.calls - self._calls_before,
            trace=self.trace,
            service_log={nid: st.log for nid, st in self.state.items()} if self.cfg.trace else {},
            weights=self.cfg.weights,
        )


def run_episode(
    scenario: Scenario,
    mode: Mode,
    duration: float = 600.0,
    seed: int = 0,
    config: EngineConfig | None = None,
) -> EpisodeMetrics:
    """Simulate one episode; a pure function of its arguments."""
    return Simulation(scenario, mode, duration, seed, config or EngineConfig()).run()
