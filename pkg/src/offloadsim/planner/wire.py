"""JSON wire format for the external planner (schema version 1).

Request and response layouts are defined by ``plan_request.schema.json`` and
``plan_response.schema.json``.  Decoding runs the schema first, then the
semantic checks the schema cannot express (subtask bound, dependency
targets, cycles).  Every failure is a :class:`DecodeError` whose ``path``
names the offending field.
"""

from __future__ import annotations

from typing import Sequence

from .. import schemas
from ..errors import DecodeError
from ..workload import Task
from .core import NodeSnapshot, Plan, Subtask, check_plan

SCHEMA_VERSION = 1


def encode_plan_request(task: Task, max_subtasks: int, snapshots: Sequence[NodeSnapshot] = ()) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "task_id": task.id,
        "source_ue": task.source_ue,
        "source": task.source.value,
        "category": task.category,
        "prompt_tokens": task.prompt_tokens,
        "difficulty_hint": task.difficulty,
        "max_subtasks": max_subtasks,
        "node_snapshots": [
            {
                "node_id": s.node_id,
                "is_ap": s.is_ap,
                "queue_backlog": s.queue_backlog,
                "model_params": s.compute.model_params,
                "flops": s.compute.flops,
                "mem_bandwidth": s.compute.mem_bandwidth,
                "capability_score": s.capability_score,
                "distance_from_planner": s.distance_from_planner,
                "distance_from_ue": s.distance_from_ue,
            }
            for s in snapshots
        ],
    }


def decode_plan_request(doc) -> dict:
    _check_schema(doc, "plan_request")
    return doc


def encode_plan_response(plan: Plan) -> dict:
    subs = []
    for s in plan.subtasks:
        entry = {
            "role": s.role,
            "task_type": s.task_type,
            "prompt_tokens": s.prompt_tokens,
            "est_output_tokens": s.est_output_tokens,
            "est_difficulty": s.est_difficulty,
            "dependencies": sorted(s.dependencies),
        }
        if s.assigned_node is not None:
            entry["assigned_node"] = s.assigned_node
        if s.aggregator_node is not None:
            entry["aggregator_node"] = s.aggregator_node
        subs.append(entry)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "task_id": plan.task_id,
        "subtasks": subs,
        "aggregator_hint": plan.aggregator,
        "planner_prompt_tokens": plan.planner_prompt_tokens,
        "planner_output_tokens": plan.planner_output_tokens,
    }
    if plan.est_difficulty is not None:
        doc["est_difficulty"] = plan.est_difficulty
    return doc


def decode_plan_response(doc, task_id: int, max_subtasks: int) -> Plan:
    _check_schema(doc, "plan_response")
    if "task_id" in doc and doc["task_id"] != task_id:
        raise DecodeError(f"reply is for task {doc['task_id']}, expected {task_id}", "task_id")
    subs = []
    for i, s in enumerate(doc["subtasks"], start=1):
        subs.append(Subtask(
            index=i,
            role=s["role"],
            task_type=s["task_type"],
            prompt_tokens=s["prompt_tokens"],
            est_output_tokens=s["est_output_tokens"],
            est_difficulty=float(s["est_difficulty"]),
            dependencies=frozenset(s["dependencies"]),
            assigned_node=s.get("assigned_node"),
            aggregator_node=s.get("aggregator_node"),
        ))
    plan = Plan(
        task_id=task_id,
        subtasks=tuple(subs),
        aggregator=doc.get("aggregator_hint"),
        planner_prompt_tokens=doc.get("planner_prompt_tokens", 0),
        planner_output_tokens=doc.get("planner_output_tokens", 0),
        est_difficulty=doc.get("est_difficulty"),
    )
    check_plan(plan, max_subtasks)
    return plan


def _check_schema(doc, name: str) -> None:
    errs = schemas.errors(doc, name)
    if errs:
        first = errs[0]
        raise DecodeError(first.message, schemas.error_path(first) or "<root>")
