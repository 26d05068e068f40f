"""Acceptance suite: one verdict per criterion, printed in the terminal summary.

Each test records its verdict before asserting, so a red criterion still gets
its line.  Run alone with ``pytest tests/test_acceptance.py``.
"""

import copy
import json
import re
import statistics
import subprocess
import sys
import time
import urllib.error
import urllib.request
from dataclasses import replace
from pathlib import Path

import numpy as np

import oracles
from builders import ap, scenario, ue
from conftest import ACCEPTANCE
from mock_planner_server import MockPlanner
from test_engine import CALIB, _hand_nearest, fixed_tokens
from test_wire import _mutations, _valid, seeded_plan
from offloadsim import cli
from offloadsim.channel import NO_FADING, ChannelParams, path_loss_db, rate_bps
from offloadsim.compute import (
    ComputeProfile, InferenceJob, aggregation_latency, decode_latency_per_token, inference_latency,
    prefill_latency,
)
from offloadsim.engine import EngineConfig, Mode, run_episode
from offloadsim.errors import BackendError
from offloadsim.experiment import RunSpec, rows_for, run_mode, summarize
from offloadsim.mac import MacParams, expected_contention_delay, simulate_backoff_round
from offloadsim.planner import HttpPlanner, PlanningParams
from offloadsim.planner.wire import encode_plan_response
from offloadsim.workload import Source, Task

TESTS = Path(__file__).parent


def record(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def _summary(spec: RunSpec, mode: Mode) -> dict:
    return summarize(rows_for(run_mode(spec, mode)), spec.weights, mode, spec.episodes, spec.master_seed)


# 1 -------------------------------------------------------------------------------

E7 = ComputeProfile(7e9, 312e12, 2e12)
E14 = ComputeProfile(14e9, 200e12, 1.2e12)
E32 = ComputeProfile(32e9, 120e12, 0.6e12)
U15 = ComputeProfile(1.5e9, 20e12, 0.2e12)
U15F = ComputeProfile(1.5e9, 48e12, 0.4e12)


def _fidelity_cases():
    """(operation, got, want) at five points per operation."""
    cp = ChannelParams()
    for d in (1, 10, 20, 3.7, 45):
        yield "path_loss_db", path_loss_db(d, cp), oracles.path_loss_db(d)
    for d, tx in ((10, 17), (1, 25), (20, 17), (5, 25), (48, 17)):
        yield "rate_bps", rate_bps(d, tx, NO_FADING, cp), oracles.rate_bps(d, tx)
    for s, p in ((1024, E7), (512, U15), (1, E32), (4096, E14), (300, U15F)):
        yield "prefill", prefill_latency(InferenceJob(s, 0), p), oracles.prefill(s, p.model_params, p.flops)
    for p in (E7, U15, E14, E32, U15F):
        yield "decode", decode_latency_per_token(p), oracles.decode_step(p.model_params, p.mem_bandwidth)
    for s, o, p in ((1024, 100, E7), (512, 64, U15), (2000, 1, E32), (1, 900, E14), (333, 77, U15F)):
        yield "inference", inference_latency(InferenceJob(s, o), p), \
            oracles.inference(s, o, p.model_params, p.flops, p.mem_bandwidth)
    for prompts, o, p in (([512, 512], 50, E7), ([100, 200, 300], 0, E14), ([1], 1, E32),
                          ([900, 40], 120, E7), ([256] * 3, 10, E32)):
        yield "aggregation", aggregation_latency(prompts, o, p), \
            oracles.aggregation(prompts, o, p.model_params, p.flops, p.mem_bandwidth)


def test_criterion_1_analytic_fidelity():
    t0 = time.perf_counter()
    worst = {}
    for op, got, want in _fidelity_cases():
        worst[op] = max(worst.get(op, 0.0), oracles.rel_err(got, want))
    elapsed = time.perf_counter() - t0
    bad = [op for op, e in worst.items() if e >= 1e-6]
    record(1, not bad and len(worst) == 6 and elapsed < 1.0,
           f"max rel err {max(worst.values()):.1e} over 30 points ({elapsed:.2f}s)")


# 2 -------------------------------------------------------------------------------

def test_criterion_2_contention_matches_monte_carlo():
    mp = MacParams()
    t0 = time.perf_counter()
    errs = {}
    for n in (1, 2, 3, 5, 10):
        rng = np.random.default_rng(1000 + n)
        nodes = list(range(n))
        mean = sum(simulate_backoff_round(nodes, rng, mp).elapsed for _ in range(100_000)) / 100_000
        errs[n] = abs(mean / expected_contention_delay(n, mp) - 1)
    elapsed = time.perf_counter() - t0
    detail = " ".join(f"n={n}:{e:.2%}" for n, e in errs.items())
    record(2, max(errs.values()) < 0.05 and elapsed < 30, f"{detail} ({elapsed:.1f}s)")


# 3 -------------------------------------------------------------------------------

def test_criterion_3_end_to_end_hand_check():
    mp = MacParams(slot=0.0)  # backoff slots vanish, contention is exactly DIFS
    s = scenario([ap(0, 0, 0)], [ue(1, 12, 5)], mac=mp)
    cfg = EngineConfig(calibration=fixed_tokens(CALIB, 500, 100), fading=False)
    first = run_episode(s, Mode.NEAREST_EDGE, 300.0, 3, cfg).records[0]
    err = abs(first.latency_total - _hand_nearest(500, 100, 13.0, mp))
    record(3, err < 1e-6, f"|simulated - hand| = {err:.1e} s")


# 4 -------------------------------------------------------------------------------

def test_criterion_4_ordering():
    spec = RunSpec(episodes=10, duration=600.0, master_seed=0)
    s = {m: _summary(spec, m) for m in Mode}
    L, N, D = s[Mode.LOCAL_ONLY], s[Mode.NEAREST_EDGE], s[Mode.DECOMPOSE_PLAN]
    reduction = 1 - D["mean_latency"] / N["mean_latency"]
    ok = (D["reward"] > N["reward"] > L["reward"]
          and D["mean_latency"] < N["mean_latency"] < L["mean_latency"]
          and reduction >= 0.10)
    record(4, ok, "reward D/N/L {:.3f}/{:.3f}/{:.3f}, latency {:.2f}/{:.2f}/{:.2f}s, reduction {:.1%} "
           "(master seed 0)".format(D["reward"], N["reward"], L["reward"],
                                    D["mean_latency"], N["mean_latency"], L["mean_latency"], reduction))


# 5 -------------------------------------------------------------------------------

NOISE = (0.0, 0.1, 0.2, 0.3)


def test_criterion_5_planner_noise_degrades_reward():
    rewards = {nz: [] for nz in NOISE}
    for seed in range(10):
        base = RunSpec(episodes=3, duration=600.0, master_seed=seed)
        for nz in NOISE:
            rewards[nz].append(_summary(replace(base, planner_noise=nz), Mode.DECOMPOSE_PLAN)["reward"])

    def step(a, b):
        diffs = [y - x for x, y in zip(rewards[a], rewards[b])]
        return statistics.mean(diffs), statistics.stdev(diffs) / len(diffs) ** 0.5

    steps = [step(a, b) for a, b in zip(NOISE, NOISE[1:])]
    total, se = step(NOISE[0], NOISE[-1])
    ok = all(m <= 2 * s for m, s in steps) and total < -2 * se
    means = "/".join(f"{statistics.mean(rewards[nz]):.3f}" for nz in NOISE)
    record(5, ok, f"mean reward at noise 0/0.1/0.2/0.3 = {means}; 0 to 0.3 change {total:+.3f} (se {se:.3f})")


# 6 -------------------------------------------------------------------------------

def _cli_outputs(tmp: Path, tag: str, argv: list[str]) -> dict[str, bytes]:
    out = tmp / tag
    assert cli.main([*argv, "--out", str(out)]) == cli.EXIT_OK
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())}


def test_criterion_6_determinism(tmp_path):
    t0 = time.perf_counter()
    common = ["--episodes", "2", "--duration", "150", "--seed", "11"]
    runs = [
        ["run", "--mode", "DECOMPOSE_PLAN", "--planner-noise", "0.2", *common],
        ["compare", *common],
    ]
    same = []
    for i, argv in enumerate(runs):
        a = _cli_outputs(tmp_path, f"{i}a", argv)
        b = _cli_outputs(tmp_path, f"{i}b", argv)
        same.append(a == b and len(a) >= 2)
    elapsed = time.perf_counter() - t0
    record(6, all(same) and elapsed < 60, f"run and compare outputs byte-identical on repeat ({elapsed:.1f}s)")


# 7 -------------------------------------------------------------------------------

def test_criterion_7_invariant_suites():
    t0 = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", str(TESTS),
         "--ignore", str(TESTS / "test_acceptance.py")],
        capture_output=True, text=True, cwd=TESTS.parent,
    )
    elapsed = time.perf_counter() - t0
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    counts = dict((k, int(v)) for v, k in re.findall(r"(\d+) (passed|failed|xfailed|xpassed|error)", tail))
    ok = proc.returncode == 0 and counts.get("passed", 0) > 0 and elapsed < 300
    note = ""
    if counts.get("xfailed"):
        note = "; the xfails are the two contention-monotonicity claims that contradict the Monte-Carlo backoff"
    record(7, ok, f"{tail.strip('= ')} ({elapsed:.0f}s){note}")


# 8 -------------------------------------------------------------------------------

def _post_raw(url: str, body: bytes) -> int:
    req = urllib.request.Request(url, data=body, headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=2.0) as resp:
            return resp.status
    except urllib.error.HTTPError as exc:
        return exc.code


def test_criterion_8_wire_protocol():
    t0 = time.perf_counter()
    params = PlanningParams()
    with MockPlanner() as mock:
        client = HttpPlanner(mock.url, params, timeout=2.0, retries=0)
        trips = 0
        for seed in range(100):
            plan = seeded_plan(seed)
            mock.canned.append(encode_plan_response(plan))
            trips += client.plan(Task(seed, 5, Source.DAILY, "coding", 300, 50, 0.5, 0.0)) == plan
        rejected = 0
        mutations = _mutations()
        for name in sorted(mutations):
            doc = copy.deepcopy(_valid())
            mutations[name](doc)
            mock.canned.append(doc)
            try:
                client.plan(Task(7, 5, Source.MATH, "algebra", 300, 50, 0.5, 0.0))
            except BackendError:
                rejected += 1
        bad_requests = [b"not json", b"{}", json.dumps({"schema_version": 1, "task_id": -1}).encode()]
        refused = sum(_post_raw(mock.url, body) == 400 for body in bad_requests)
    elapsed = time.perf_counter() - t0
    ok = trips == 100 and rejected == len(mutations) and refused == len(bad_requests) and elapsed < 30
    record(8, ok, f"{trips}/100 round trips, {rejected}/{len(mutations)} malformed replies rejected, "
                  f"{refused}/{len(bad_requests)} malformed requests refused by the mock ({elapsed:.1f}s)")
