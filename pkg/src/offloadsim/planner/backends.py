"""Planner backends: the built-in synthetic planner and the HTTP client."""

from __future__ import annotations

import json
import logging
import math
import socket
import urllib.error
import urllib.request
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from ..errors import BackendError, DecodeError
from ..workload import Source, Task
from .core import NodeSnapshot, Plan, PlanningParams, Subtask, check_plan
from .wire import decode_plan_response, encode_plan_request

log = logging.getLogger(__name__)

ROLES = ("solver", "analyst", "verifier", "reviewer", "summarizer")


@dataclass(frozen=True)
class SubtaskTruth:
    prompt_tokens: int
    output_tokens: int
    difficulty: float


def _split(total: int, k: int) -> list[int]:
    base, extra = divmod(total, k)
    return [base + (1 if i < extra else 0) for i in range(k)]


def partition(task: Task, k: int, params: PlanningParams, relief: float = 0.0) -> list[SubtaskTruth]:
    """Ground-truth shares of a task split ``k`` ways.

    Prompt and answer tokens are divided as evenly as integers allow; every
    share of a real split (``k > 1``) carries a fixed instruction and answer
    overhead and has difficulty ``parent * (1 - relief)``.
    """
    if k == 1:
        return [SubtaskTruth(task.prompt_tokens, task.true_output_tokens, task.difficulty)]
    prompts = _split(task.prompt_tokens, k)
    outputs = _split(task.true_output_tokens, k)
    d = task.difficulty * (1.0 - relief)
    return [
        SubtaskTruth(p + params.instruction_tokens, o + params.output_overhead_tokens, d)
        for p, o in zip(prompts, outputs)
    ]


def choose_k(difficulty: float, params: PlanningParams) -> int:
    thr = params.split_threshold
    if difficulty <= thr or params.max_subtasks == 1:
        return 1
    k = 1 + math.ceil((difficulty - thr) / (1.0 - thr) * (params.max_subtasks - 1))
    return min(params.max_subtasks, k)


def single_plan(task: Task, est_output: int, est_difficulty: float, params: PlanningParams) -> Plan:
    sub = Subtask(1, ROLES[0], task.category, task.prompt_tokens, est_output, est_difficulty)
    pp, po = params.planner_tokens(task.prompt_tokens, 1)
    return Plan(task.id, (sub,), None, pp, po, est_difficulty)


class PlannerBackend(ABC):
    """Produces an unassigned :class:`Plan` for a task."""

    def __init__(self, params: PlanningParams = PlanningParams()):
        self.params = params
        self.calls = 0
        self.failures = 0

    @abstractmethod
    def plan(self, task: Task, snapshots: Sequence[NodeSnapshot] = ()) -> Plan:
        ...

    def fallback(self, task: Task) -> Plan:
        p = self.params
        return single_plan(task, p.fallback_output_tokens, p.fallback_difficulty, p)


class SyntheticPlanner(PlannerBackend):
    """Deterministic stand-in for an LLM planner.

    Estimates are the ground truth perturbed by ``noise``: output lengths by a
    log-normal factor, difficulties additively (clipped to [0, 1]).  With
    ``noise=0`` it is an oracle planner.
    """

    def __init__(
        self,
        params: PlanningParams = PlanningParams(),
        noise: float = 0.0,
        seed: int = 0,
        relief: Mapping[Source, float] | None = None,
    ):
        super().__init__(params)
        self.noise = noise
        self.seed = seed
        self.relief = dict(relief or {})

    def _rng(self, task: Task) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, task.source_ue, task.id]))

    def plan(self, task: Task, snapshots: Sequence[NodeSnapshot] = ()) -> Plan:
        rng = self._rng(task)
        noisy = self.noise > 0

        def est_difficulty(d: float) -> float:
            if noisy:
                d += rng.normal(0.0, self.noise)
            return min(1.0, max(0.0, d))

        def est_tokens(n: int) -> int:
            if noisy:
                n = n * math.exp(rng.normal(0.0, self.noise))
            return max(1, int(round(n)))

        d_hat = est_difficulty(task.difficulty)
        k = choose_k(d_hat, self.params)
        subs = []
        relief = self.relief.get(task.source, 0.0)
        for i, truth in enumerate(partition(task, k, self.params, relief), start=1):
            subs.append(Subtask(
                index=i,
                role=ROLES[(i - 1) % len(ROLES)],
                task_type=task.category,
                prompt_tokens=truth.prompt_tokens,
                est_output_tokens=est_tokens(truth.output_tokens),
                est_difficulty=est_difficulty(truth.difficulty),
                dependencies=frozenset({1}) if i > 1 else frozenset(),
            ))
        pp, po = self.params.planner_tokens(task.prompt_tokens, k)
        plan = Plan(task.id, tuple(subs), None, pp, po, d_hat)
        check_plan(plan, self.params.max_subtasks)
        return plan


class HttpPlanner(PlannerBackend):
    """Client for an external planner speaking the JSON wire protocol over HTTP POST."""

    def __init__(
        self,
        endpoint: str,
        params: PlanningParams = PlanningParams(),
        timeout: float = 5.0,
        retries: int = 1,
    ):
        super().__init__(params)
        self.endpoint = endpoint
        self.timeout = timeout
        self.retries = retries

    def _post(self, doc: dict) -> dict:
        body = json.dumps(doc).encode()
        req = urllib.request.Request(
            self.endpoint, data=body, headers={"Content-Type": "application/json"}, method="POST"
        )
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            raw = resp.read()
        try:
            return json.loads(raw)
        except ValueError as exc:
            raise DecodeError(f"response is not JSON: {exc}") from exc

    def plan(self, task: Task, snapshots: Sequence[NodeSnapshot] = ()) -> Plan:
        request = encode_plan_request(task, self.params.max_subtasks, snapshots)
        last: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                reply = self._post(request)
                plan = decode_plan_response(reply, task.id, self.params.max_subtasks)
            except (urllib.error.URLError, socket.timeout, TimeoutError, ConnectionError, DecodeError) as exc:
                last = exc
                continue
            if "planner_output_tokens" not in reply:
                pp, po = self.params.planner_tokens(task.prompt_tokens, plan.k)
                plan = replace(plan, planner_prompt_tokens=pp, planner_output_tokens=po)
            return plan
        raise BackendError(f"planner at {self.endpoint} failed: {last}")


def decompose(task: Task, backend: PlannerBackend, snapshots: Sequence[NodeSnapshot] = ()) -> Plan:
    """Ask the backend for a plan; on any backend failure fall back to K=1."""
    backend.calls += 1
    try:
        return backend.plan(task, snapshots)
    except (BackendError, DecodeError) as exc:
        backend.failures += 1
        log.warning("planner failure for task %s, running undecomposed: %s", task.id, exc)
        return backend.fallback(task)
