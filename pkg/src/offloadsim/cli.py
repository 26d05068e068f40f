"""Command-line front end: ``offloadsim {generate,run,compare,sweep}``.

Outputs written under ``--out``:

* ``generate``: the scenario document itself (``--out`` is a file path).
* ``run``: ``tasks.csv`` and ``summary.json``.
* ``compare``: ``tasks.csv`` for all modes, ``summary_<MODE>.json`` per mode
  and ``ranking.csv``; the ranking is also printed.
* ``sweep``: ``sweep.csv`` with one summary row per parameter value.

Exit codes: 0 success, 2 usage or configuration error, 3 file IO error,
4 planner backend error (the external planner answered no request; outputs
are still written with every task run undecomposed).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .engine import Mode
from .errors import BackendError, ConfigurationError, DecodeError, DomainError
from .experiment import CSV_COLUMNS, RunSpec, ranking, rows_for, run_mode, summarize
from .planner import ScoreWeights
from .scenario import Scenario, ScenarioConfig, generate_scenario
from .schemas import validate
from .workload import Calibration

log = logging.getLogger("offloadsim")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_BACKEND = 4

ENDPOINT_ENV = "OFFLOADSIM_PLANNER_ENDPOINT"
SWEEP_PARAMS = ("w_delay", "arrival_rate", "planner_noise")
SWEEP_COLUMNS = (
    "param", "value", "mode", "tasks", "mean_latency", "accuracy", "reward",
    "comm", "queue", "compute", "plan", "agg",
)


class UsageError(ConfigurationError):
    pass


def _read_json(path: str | Path):
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except ValueError as exc:
        raise ConfigurationError(f"{path}: not valid JSON ({exc})") from exc


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, columns: Sequence[str], rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def load_scenario_file(path: str) -> Scenario | ScenarioConfig:
    """A fixed scenario document, or a config to draw one topology per episode."""
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: expected a JSON object")
    if "aps" in doc or "ues" in doc:
        return Scenario.from_dict(doc)
    return ScenarioConfig.from_dict(doc)


def parse_weights(text: str) -> ScoreWeights:
    parts = text.split(",")
    if len(parts) != 2:
        raise UsageError(f"--weights: expected 'w_accuracy,w_delay', got {text!r}")
    try:
        wa, wd = (float(p) for p in parts)
    except ValueError as exc:
        raise UsageError(f"--weights: {exc}") from exc
    return ScoreWeights(wa, wd)


def parse_values(text: str) -> list[float]:
    items = [t for t in text.split(",") if t.strip()]
    if not items:
        raise UsageError("--values: at least one value required")
    try:
        return [float(t) for t in items]
    except ValueError as exc:
        raise UsageError(f"--values: {exc}") from exc


def build_spec(args) -> RunSpec:
    kw = dict(
        episodes=args.episodes,
        duration=args.duration,
        master_seed=args.seed,
        weights=parse_weights(args.weights),
        planner_noise=args.planner_noise,
        fading=not args.no_fading,
        calibration=Calibration.load(args.calibration),
        planner_endpoint=args.planner_endpoint or None,
        workers=args.workers,
    )
    if args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    if not args.duration > 0:
        raise UsageError("--duration must be > 0")
    if not 0.0 <= args.planner_noise <= 1.0:
        raise UsageError("--planner-noise must lie in [0, 1]")
    if args.scenario:
        sc = load_scenario_file(args.scenario)
        if isinstance(sc, Scenario):
            kw["scenario"] = sc
        else:
            kw["scenario_config"] = sc
    return RunSpec(**kw)


def _run(spec: RunSpec, mode: Mode) -> tuple[list[dict], dict, bool]:
    metrics = run_mode(spec, mode)
    rows = rows_for(metrics)
    summary = summarize(rows, spec.weights, mode, spec.episodes, spec.master_seed)
    validate(summary, "summary", exc=RuntimeError)
    calls = sum(m.planner_calls for m in metrics)
    dead = bool(spec.planner_endpoint) and calls > 0 and sum(m.planner_failures for m in metrics) == calls
    return rows, summary, dead


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args) -> int:
    cfg = ScenarioConfig.from_dict(_read_json(args.config)) if args.config else ScenarioConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    text = generate_scenario(cfg).to_json()
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    return EXIT_OK


def cmd_run(args) -> int:
    spec = build_spec(args)
    rows, summary, dead = _run(spec, Mode(args.mode))
    out = _out_dir(args.out)
    _write_csv(out / "tasks.csv", CSV_COLUMNS, rows)
    _write_json(out / "summary.json", summary)
    print(f"{summary['mode']}: tasks={summary['tasks']} latency={summary['mean_latency']:.3f}s "
          f"accuracy={summary['accuracy']:.3f} reward={summary['reward']:.4f}")
    return EXIT_BACKEND if dead else EXIT_OK


def format_ranking(table: Sequence[dict]) -> str:
    lines = [f"{'rank':>4}  {'mode':<15} {'reward':>9} {'latency_s':>10} {'accuracy':>9}"]
    for r in table:
        lines.append(f"{r['rank']:>4}  {r['mode']:<15} {r['reward']:>9.4f} "
                     f"{r['mean_latency']:>10.3f} {r['accuracy']:>9.3f}")
    return "\n".join(lines)


def cmd_compare(args) -> int:
    spec = build_spec(args)
    out = _out_dir(args.out)
    all_rows, summaries, any_dead = [], [], False
    for mode in Mode:
        rows, summary, dead = _run(spec, mode)
        all_rows += rows
        summaries.append(summary)
        any_dead |= dead
        _write_json(out / f"summary_{mode.value}.json", summary)
    table = ranking(summaries)
    _write_csv(out / "tasks.csv", CSV_COLUMNS, all_rows)
    _write_csv(out / "ranking.csv", ("rank", "mode", "reward", "mean_latency", "accuracy"), table)
    print(format_ranking(table))
    return EXIT_BACKEND if any_dead else EXIT_OK


def _with_param(spec: RunSpec, param: str, value: float) -> RunSpec:
    if param == "w_delay":
        return replace(spec, weights=ScoreWeights(spec.weights.w_accuracy, value))
    if param == "planner_noise":
        if not 0.0 <= value <= 1.0:
            raise UsageError("planner_noise values must lie in [0, 1]")
        return replace(spec, planner_noise=value)
    if not value > 0:
        raise UsageError("arrival_rate values must be > 0")
    if spec.scenario is not None:
        ues = tuple(replace(u, arrival_rate=value) for u in spec.scenario.ues)
        return replace(spec, scenario=replace(spec.scenario, ues=ues))
    return replace(spec, scenario_config=replace(spec.scenario_config, arrival_rate=value))


def cmd_sweep(args) -> int:
    if args.param not in SWEEP_PARAMS:
        raise UsageError(f"unknown sweep parameter {args.param!r}; choose from {', '.join(SWEEP_PARAMS)}")
    values = parse_values(args.values)
    spec = build_spec(args)
    mode = Mode(args.mode)
    table, any_dead = [], False
    for v in values:
        _, s, dead = _run(_with_param(spec, args.param, v), mode)
        any_dead |= dead
        table.append({
            "param": args.param, "value": v, "mode": mode.value, "tasks": s["tasks"],
            "mean_latency": s["mean_latency"], "accuracy": s["accuracy"], "reward": s["reward"],
            **s["mean_breakdown"],
        })
        print(f"{args.param}={v:g}: reward={s['reward']:.4f} latency={s['mean_latency']:.3f}s "
              f"queue={s['mean_breakdown']['queue']:.3f}s")
    out = _out_dir(args.out)
    _write_csv(out / "sweep.csv", SWEEP_COLUMNS, table)
    return EXIT_BACKEND if any_dead else EXIT_OK


def _add_run_flags(p: argparse.ArgumentParser, mode: bool) -> None:
    p.add_argument("--scenario", help="scenario document (fixed topology) or scenario config (one topology per episode)")
    if mode:
        p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.DECOMPOSE_PLAN.value)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--duration", type=float, default=600.0, help="simulated seconds per episode")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--weights", default="1.0,0.01", help="w_accuracy,w_delay (default 1.0,0.01)")
    p.add_argument("--planner-endpoint", default=os.environ.get(ENDPOINT_ENV),
                   help=f"external planner URL (default ${ENDPOINT_ENV}; unset = built-in planner)")
    p.add_argument("--planner-noise", type=float, default=0.0)
    p.add_argument("--no-fading", action="store_true", help="pin the fading gain to 1")
    p.add_argument("--calibration", help="calibration file (default: the shipped one)")
    p.add_argument("--workers", type=int, default=1, help="episodes simulated in parallel")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="offloadsim", description="LLM inference offloading simulator")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="draw a scenario from a config")
    g.add_argument("config", nargs="?", help="scenario config (default: built-in ranges)")
    g.add_argument("--seed", type=int, help="override the config seed")
    g.add_argument("--out", help="scenario file to write (default stdout)")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run episodes of one mode")
    _add_run_flags(r, mode=True)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="run all modes on the same seeds and rank them")
    _add_run_flags(c, mode=False)
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("sweep", help="one summary row per parameter value")
    _add_run_flags(s, mode=True)
    s.add_argument("--param", required=True, help=f"one of {', '.join(SWEEP_PARAMS)}")
    s.add_argument("--values", required=True, help="comma-separated values")
    s.set_defaults(func=cmd_sweep)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (ConfigurationError, DecodeError, DomainError) as exc:
        print(f"offloadsim: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendError as exc:
        print(f"offloadsim: planner backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except OSError as exc:
        print(f"offloadsim: IO error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
