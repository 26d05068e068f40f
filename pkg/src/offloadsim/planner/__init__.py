from .backends import (
    HttpPlanner,
    PlannerBackend,
    SubtaskTruth,
    SyntheticPlanner,
    choose_k,
    decompose,
    partition,
    single_plan,
)
from .core import (
    LinkContext,
    NodeSnapshot,
    Plan,
    PlanningParams,
    ScoreWeights,
    Subtask,
    aggregator_inputs,
    aggregator_output,
    assign,
    check_plan,
    estimate_cmp_latency,
    estimate_correctness,
    estimate_total_latency,
    pick_best,
    score,
    score_subtask,
    select_aggregator,
)
from .wire import (
    decode_plan_request,
    decode_plan_response,
    encode_plan_request,
    encode_plan_response,
)
