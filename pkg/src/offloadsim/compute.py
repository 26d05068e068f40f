"""Roofline latency model for LLM inference.

Prefill is compute bound (``2*b*s*P / F``); each decoded token re-reads the
weights, so decode is bandwidth bound (``bytes_per_param * P / A_bm``).
KV-cache traffic is ignored.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

from .errors import ConfigurationError, DomainError


@dataclass(frozen=True)
class ComputeProfile:
    model_params: float  # parameter count
    flops: float  # FLOP/s
    mem_bandwidth: float  # bytes/s
    bytes_per_param: float = 2.0

    def __post_init__(self):
        for name in ("model_params", "flops", "mem_bandwidth"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be > 0")
        if self.bytes_per_param < 0:
            raise ConfigurationError("bytes_per_param must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ComputeProfile":
        return cls(**d)


@dataclass(frozen=True)
class InferenceJob:
    prompt_tokens: int
    output_tokens: int
    batch: int = 1

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.output_tokens < 0:
            raise DomainError("token counts must be >= 0")
        if self.batch < 1:
            raise DomainError("batch must be >= 1")


def prefill_latency(job: InferenceJob, cp: ComputeProfile) -> float:
    if not cp.flops > 0:
        raise ConfigurationError("flops must be > 0")
    return 2.0 * job.batch * job.prompt_tokens * cp.model_params / cp.flops


def decode_latency_per_token(cp: ComputeProfile) -> float:
    if not cp.mem_bandwidth > 0:
        raise ConfigurationError("mem_bandwidth must be > 0")
    return cp.bytes_per_param * cp.model_params / cp.mem_bandwidth


def inference_latency(job: InferenceJob, cp: ComputeProfile) -> float:
    return prefill_latency(job, cp) + job.output_tokens * decode_latency_per_token(cp)


def aggregation_latency(
    sub_prompt_tokens: Sequence[int], agg_output_tokens: int, cp: ComputeProfile
) -> float:
    """Prefill every subtask result separately, then decode the fused answer."""
    if len(sub_prompt_tokens) == 0:
        raise DomainError("aggregation needs at least one subtask")
    prefill = sum(prefill_latency(InferenceJob(s, 0), cp) for s in sub_prompt_tokens)
    return prefill + agg_output_tokens * decode_latency_per_token(cp)
