"""Fit the per-source calibration constants to target accuracies.

Two stages per source:

1. ``difficulty_beta`` is solved so that the expected accuracy of the local
   model and of a uniformly drawn edge model match the LOCAL_ONLY and
   NEAREST_EDGE targets.  The expectation is a quadrature over the Beta
   density; a few simulation passes then shift the analytic targets by the
   observed residual (completed tasks over-represent fast nodes).
2. ``fusion_scale`` is bisected against simulated DECOMPOSE_PLAN accuracy,
   which falls as the fusion step gets harder.  ``split_relief`` stays as
   configured: it sets how much easier each share is, and so how much the
   planner gains by spreading shares over nodes.

Run ``python -m offloadsim.calibrate OUT.json`` to regenerate the shipped file.
"""

from __future__ import annotations

import argparse
import logging
import math
from dataclasses import replace
from typing import Mapping, Sequence

import numpy as np
from scipy import integrate, optimize, stats

from .engine import Mode
from .experiment import RunSpec, run_mode
from .scenario import DEFAULT_AP_RANGES, DEFAULT_UE_RANGES, default_capability
from .workload import Calibration, CurveParams, Source

log = logging.getLogger(__name__)

_KAPPA = (2.0, 400.0)  # Beta concentration bounds
FUSION_MAX = 2.0
LOCAL_WEIGHT = 0.25  # local targets sit near the curve floor; let nearest dominate


def expected_accuracy(curve: CurveParams, capability: float, alpha: float, beta: float) -> float:
    """E[curve(capability, d)] for d ~ Beta(alpha, beta)."""
    dist = stats.beta(alpha, beta)
    val, _ = integrate.quad(lambda d: curve(capability, d) * dist.pdf(d), 0.0, 1.0, limit=200)
    return val


def _beta_from(x: Sequence[float]) -> tuple[float, float]:
    m = 1.0 / (1.0 + math.exp(-x[0]))
    k = math.exp(x[1])
    return m * k, (1.0 - m) * k


def fit_difficulty(
    curve: CurveParams,
    local_capability: float,
    edge_capabilities: Sequence[float],
    target_local: float,
    target_nearest: float,
    start: tuple[float, float] = (8.0, 4.0),
) -> tuple[float, float]:
    """Beta parameters whose local / mean-edge expected accuracies hit the targets (least squares)."""

    def residual(x):
        a, b = _beta_from(x)
        edge = np.mean([expected_accuracy(curve, c, a, b) for c in edge_capabilities])
        local = expected_accuracy(curve, local_capability, a, b)
        return [LOCAL_WEIGHT * (local - target_local), edge - target_nearest]

    a0, b0 = start
    x0 = [math.log(a0 / b0), math.log(a0 + b0)]
    lo = [-6.0, math.log(_KAPPA[0])]
    hi = [6.0, math.log(_KAPPA[1])]
    x0 = np.clip(x0, lo, hi)
    res = optimize.least_squares(residual, x0, bounds=(lo, hi), xtol=1e-10)
    return _beta_from(res.x)


def simulated_accuracy(spec: RunSpec, mode: Mode) -> dict[Source, tuple[float, int]]:
    """Pooled per-source accuracy and task count of one mode."""
    hits: dict[Source, list[int]] = {s: [] for s in Source}
    for m in run_mode(spec, mode):
        for r in m.records:
            hits[r.source].append(int(r.correct))
    return {s: (float(np.mean(v)) if v else float("nan"), len(v)) for s, v in hits.items()}


def _with_sources(calib: Calibration, **per_source: Mapping[Source, object]) -> Calibration:
    sources = dict(calib.sources)
    for fld, values in per_source.items():
        for s, v in values.items():
            sources[s] = replace(sources[s], **{fld: v})
    return replace(calib, sources=sources)


def calibrate(
    calib: Calibration,
    episodes: int = 60,
    master_seed: int = 20240601,
    refine: int = 3,
    bisect: int = 10,
) -> Calibration:
    """Return ``calib`` with ``difficulty_beta`` and ``fusion_scale`` refitted to its targets."""
    curve = calib.correctness.base_curve
    local_c = default_capability(DEFAULT_UE_RANGES.model_params[0])
    edge_c = [default_capability(p) for p in DEFAULT_AP_RANGES.model_choices]
    targets = {s: calib.targets[s] for s in Source}
    spec = RunSpec(episodes=episodes, master_seed=master_seed, calibration=calib)

    aim = {s: [t["LOCAL_ONLY"], t["NEAREST_EDGE"]] for s, t in targets.items()}
    for it in range(refine + 1):
        betas = {
            s: fit_difficulty(curve, local_c, edge_c, *aim[s], start=calib.sources[s].difficulty)
            for s in Source
        }
        calib = _with_sources(calib, difficulty=betas)
        if it == refine:
            break
        spec = replace(spec, calibration=calib)
        sim_l = simulated_accuracy(spec, Mode.LOCAL_ONLY)
        sim_n = simulated_accuracy(spec, Mode.NEAREST_EDGE)
        for s in Source:
            t = targets[s]
            aim[s][0] = float(np.clip(aim[s][0] + t["LOCAL_ONLY"] - sim_l[s][0], 0.0, 1.0))
            aim[s][1] = float(np.clip(aim[s][1] + t["NEAREST_EDGE"] - sim_n[s][0], 0.0, 1.0))
            log.info("refine %d %s: local %.3f nearest %.3f", it, s.value, sim_l[s][0], sim_n[s][0])

    scale = _bisect(spec, calib, targets, "fusion_scale", steps=bisect)
    return _with_sources(calib, fusion_scale=scale)


def _bisect(
    spec: RunSpec,
    calib: Calibration,
    targets: Mapping[Source, Mapping[str, float]],
    fld: str,
    steps: int,
    hi: float = FUSION_MAX,
) -> dict[Source, float]:
    """Per-source bisection on [0, hi] of a knob that lowers DECOMPOSE_PLAN accuracy as it grows."""
    lo_ = {s: 0.0 for s in targets}
    hi_ = {s: hi for s in targets}
    for _ in range(steps):
        mid = {s: (lo_[s] + hi_[s]) / 2 for s in targets}
        sim = simulated_accuracy(replace(spec, calibration=_with_sources(calib, **{fld: mid})), Mode.DECOMPOSE_PLAN)
        for s in targets:
            if sim[s][0] > targets[s]["DECOMPOSE_PLAN"]:
                lo_[s] = mid[s]
            else:
                hi_[s] = mid[s]
            log.info("%s %s=%.4f -> %.3f", s.value, fld, mid[s], sim[s][0])
    return {s: round((lo_[s] + hi_[s]) / 2, 4) for s in targets}


def _round_betas(calib: Calibration) -> Calibration:
    return _with_sources(calib, difficulty={
        s: tuple(round(v, 4) for v in p.difficulty) for s, p in calib.sources.items()
    })


def main(argv: Sequence[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="python -m offloadsim.calibrate", description=__doc__.splitlines()[0])
    ap.add_argument("out", help="where to write the fitted calibration file")
    ap.add_argument("--calibration", help="starting calibration (default: the shipped file)")
    ap.add_argument("--episodes", type=int, default=60)
    ap.add_argument("--seed", type=int, default=20240601)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    calib = calibrate(Calibration.load(args.calibration), episodes=args.episodes, master_seed=args.seed)
    _round_betas(calib).dump(args.out)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
