"""CSMA/CA frame-exchange timing and the four communication legs.

Contention is modelled as rounds: every contender draws a uniform backoff
in ``[0, CW-1]``; a unique minimum wins after ``DIFS + slot * min``, a tie
collides and every contender retries with a doubled window (saturating at
stage ``cutoff``).  :func:`expected_contention_delay` is the exact mean of
that process; :func:`simulate_backoff_round` samples it.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Hashable, Iterable, NamedTuple, Sequence

import numpy as np

from .channel import ChannelParams, FadingSample, tx_delay
from .errors import ConfigurationError, DomainError


@dataclass(frozen=True)
class MacParams:
    t_difs: float = 34e-6
    t_sifs: float = 16e-6
    t_rts: float = 43e-6
    t_cts: float = 34e-6
    t_ack: float = 34e-6
    t_tf: float = 100e-6
    slot: float = 9e-6
    cw_min: int = 16
    cutoff: int = 6
    background_contention: float = 0.0  # s, constant add-on for non-LLM traffic

    def __post_init__(self):
        durations = ("t_difs", "t_sifs", "t_rts", "t_cts", "t_ack", "t_tf", "slot",
                     "background_contention")
        for name in durations:
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        cw = self.cw_min
        if cw < 2 or cw & (cw - 1):
            raise ConfigurationError("cw_min must be a power of two >= 2")
        if self.cutoff < 0:
            raise ConfigurationError("cutoff must be >= 0")

    def window(self, stage: int) -> int:
        return self.cw_min << min(stage, self.cutoff)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MacParams":
        return cls(**d)


@dataclass(frozen=True)
class CommBreakdown:
    ul: float
    p2e_max: float
    e2a_max: float
    dl: float

    @property
    def total(self) -> float:
        return self.ul + self.p2e_max + self.e2a_max + self.dl


class BackoffOutcome(NamedTuple):
    winner: Hashable
    elapsed: float
    collisions: int


def _min_stats(n: int, w: int) -> tuple[float, float]:
    """Mean of the minimum of ``n`` uniforms on {0..w-1} and P(min is shared)."""
    k = np.arange(w, dtype=float)
    survive = ((w - k) / w) ** n  # P(min >= k)
    e_min = float(survive[1:].sum())
    p_unique = float((n / w * ((w - 1 - k) / w) ** (n - 1)).sum())
    return e_min, max(0.0, 1.0 - p_unique)


def expected_contention_delay(n_contenders: int, mp: MacParams) -> float:
    """Mean time from channel sense to the start of a successful transmission."""
    if n_contenders < 1:
        raise DomainError("need at least one contender")
    stats = [_min_stats(n_contenders, mp.window(i)) for i in range(mp.cutoff + 1)]
    e_min, p_tie = stats[-1]
    # saturated stage repeats itself: E = c + p*E
    expected = (mp.t_difs + mp.slot * e_min) / (1.0 - p_tie)
    for e_min, p_tie in reversed(stats[:-1]):
        expected = mp.t_difs + mp.slot * e_min + p_tie * expected
    return expected + mp.background_contention


def simulate_backoff_round(
    contenders: Iterable[Hashable], rng: np.random.Generator, mp: MacParams
) -> BackoffOutcome:
    nodes = sorted(contenders)
    if not nodes:
        raise DomainError("need at least one contender")
    elapsed = mp.background_contention
    stage = 0
    collisions = 0
    while True:
        draws = rng.integers(0, mp.window(stage), size=len(nodes))
        low = draws.min()
        elapsed += mp.t_difs + mp.slot * float(low)
        winners = np.flatnonzero(draws == low)
        if len(winners) == 1:
            return BackoffOutcome(nodes[int(winners[0])], elapsed, collisions)
        collisions += 1
        stage = min(stage + 1, mp.cutoff)


def handshake_overhead(mp: MacParams) -> float:
    """RTS/CTS/ACK and the three SIFS gaps of an uplink exchange."""
    return mp.t_rts + mp.t_cts + mp.t_ack + 3 * mp.t_sifs


def uplink_delay(
    bits: float,
    d: float,
    tx_power: float,
    xi: FadingSample,
    cp: ChannelParams,
    mp: MacParams,
    n_contenders: int = 1,
    t_cont: float | None = None,
) -> float:
    """UE-to-AP upload: contention, RTS/CTS handshake, payload, ACK.

    ``t_cont`` overrides the expected contention term with a realised one.
    """
    if t_cont is None:
        t_cont = expected_contention_delay(n_contenders, mp)
    return t_cont + handshake_overhead(mp) + tx_delay(bits, d, tx_power, xi, cp)


def tf_exchange_delay(
    bits: float,
    d: float,
    tx_power: float,
    xi: FadingSample,
    cp: ChannelParams,
    mp: MacParams,
) -> float:
    """Trigger-frame scheduled transfer: TF, SIFS, payload, SIFS, ACK."""
    return mp.t_tf + 2 * mp.t_sifs + tx_delay(bits, d, tx_power, xi, cp) + mp.t_ack


def total_comm_latency(
    ul: float, p2e: Sequence[float], e2a: Sequence[float], dl: float
) -> CommBreakdown:
    return CommBreakdown(ul, max(p2e, default=0.0), max(e2a, default=0.0), dl)
