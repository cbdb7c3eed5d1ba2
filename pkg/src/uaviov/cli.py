"""Command line: ``uaviov <generate|select|train|eval|bench|plotdata|ledger-replay>``.

Outputs go to ``--out`` or ``$UAVIOV_OUT`` (default ``./uaviov-out``).
Exit codes: 0 success, 2 configuration error, 3 runtime or data error.
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
from typing import List, Optional

from .core import ConfigError
from .ledger import Ledger, NoModelError
from .pipeline import (curve_to_csv, environment_info, evaluate_registered, selection_sweep,
                       train_and_register)
from .scenario import (ScenarioConfig, generate_population, population_seed, population_to_json)
from .selection import MECHANISMS, metrics_to_csv
from .store import ModelStore

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
OUT_ENV = "UAVIOV_OUT"
LEDGER_LOG = "ledger/events.ndjson"

log = logging.getLogger("uaviov")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(d: dict, overrides: List[str]) -> dict:
    """Apply ``a.b.c=value`` overrides (values parsed as JSON when possible)."""
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        node = d
        parts = key.split(".")
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise ConfigError(f"unknown config section {p!r} in {key!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = _parse_value(value)
    return d


def load_config(args) -> ScenarioConfig:
    base = ScenarioConfig().to_dict()
    if args.config:
        try:
            user = json.loads(Path(args.config).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {args.config}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        base = _deep_merge(base, user)
    if getattr(args, "seed", None) is not None:
        base["seed"] = args.seed
    base = apply_overrides(base, args.set)
    return ScenarioConfig.from_dict(base)


def _deep_merge(base: dict, user: dict) -> dict:
    out = dict(base)
    for k, v in user.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            if k not in out:
                raise ConfigError(f"unknown config key {k!r}")
            out[k] = v
    return out


def out_dir(args) -> Path:
    path = Path(args.out or os.environ.get(OUT_ENV, "uaviov-out"))
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_manifest(path: Path, command: str, cfg: ScenarioConfig, outputs: dict, extra: Optional[dict] = None) -> Path:
    manifest = {"version": 1, "command": command, "config": cfg.to_dict(), "outputs": outputs,
                "environment": environment_info()}
    manifest.update(extra or {})
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def _ledger_for(out: Path) -> Ledger:
    store = ModelStore(out / "models")
    log_path = out / LEDGER_LOG
    if log_path.exists():
        return Ledger.replay(Ledger.read_log(log_path), store=store)
    return Ledger(store=store)


def _save_ledger(ledger: Ledger, out: Path) -> Path:
    path = out / LEDGER_LOG
    path.parent.mkdir(parents=True, exist_ok=True)
    return ledger.save_log(path)


def cmd_generate(args) -> int:
    cfg = load_config(args)
    out = out_dir(args) / "populations"
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for num_uavs in cfg.uav_sweep:
        for it in range(cfg.iterations):
            vehicles, uavs = generate_population(cfg, num_uavs, population_seed(cfg.seed, num_uavs, it))
            path = out / f"population_u{num_uavs}_i{it}.json"
            path.write_text(population_to_json(vehicles, uavs, {"seed": cfg.seed, "num_uavs": num_uavs,
                                                                "iteration": it}))
            files.append(str(path))
    write_manifest(out / "manifest.json", "generate", cfg, {"populations": files})
    print(f"wrote {len(files)} populations to {out}")
    return EXIT_OK


def cmd_select(args) -> int:
    cfg = load_config(args)
    mechanisms = list(MECHANISMS) if args.mechanism == "both" else [args.mechanism]
    out = out_dir(args) / "select"
    logs = out / "ledger_logs"
    logs.mkdir(parents=True, exist_ok=True)
    rows, outcomes = selection_sweep(cfg, mechanisms, log_dir=logs)
    metrics_path = out / "metrics.csv"
    metrics_path.write_text(metrics_to_csv(rows))
    outcome_path = out / "outcomes.json"
    outcome_path.write_text(json.dumps({k: json.loads(o.to_json()) for k, o in outcomes.items()}))
    write_manifest(out / "manifest.json", "select", cfg,
                   {"metrics": str(metrics_path), "outcomes": str(outcome_path), "ledger_logs": str(logs)},
                   {"mechanisms": mechanisms})
    print(f"wrote {len(rows)} metric rows to {metrics_path}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args)
    if args.steps is not None:
        cfg.hp = replace(cfg.hp, total_steps=args.steps)
        cfg.validate()
    out = out_dir(args)
    ledger = _ledger_for(out)
    model_id = args.model_id or f"model-{len(ledger.state.models) + 1:04d}"
    agents = tuple(args.agents_range) if args.agents_range else None
    vehicles = tuple(args.vehicles_range) if args.vehicles_range else None

    def progress(step, diag):
        log.info("step %d train reward %s", step, diag.get("train_episode_reward"))

    coord, entry, manifest = train_and_register(cfg, ledger, ledger.store, model_id, agents, vehicles, progress)
    _save_ledger(ledger, out)
    run_dir = out / "runs" / model_id
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "curve.csv").write_text(curve_to_csv(coord.curve_))
    manifest["outputs"] = {"curve": str(run_dir / "curve.csv"), "ledger_log": str(out / LEDGER_LOG),
                           "model_store": str(out / "models")}
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    print(f"registered {model_id} ({entry.content_hash[:12]}) params={coord.policy_.param_count()}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args)
    out = out_dir(args)
    ledger = _ledger_for(out)
    model_id = args.model_id or ledger.determine_mdrl_model(cfg.env.num_agents, cfg.env.num_vehicles)
    seed, steps = args.eval_seed, args.steps or cfg.hp.eval_steps
    manifest_path = out / "runs" / model_id / "manifest.json"
    if seed is None and manifest_path.exists():
        # default: reproduce the final point of the recorded learning curve
        seed = json.loads(manifest_path.read_text()).get("curve_tail_seed")
    seed = 0 if seed is None else seed
    model_id, metrics = evaluate_registered(ledger, cfg, steps, seed, model_id)
    result = {"model_id": model_id, "seed": seed, "num_steps": steps, **metrics.to_dict()}
    path = out / "runs" / model_id / f"eval_seed{seed}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(result, indent=2))
    if args.trajectory:
        from .env import write_trajectory
        from .nn import deserialize
        from .ppo import greedy_actor, record_episode

        policy = deserialize(ledger.load_model(model_id))
        write_trajectory(args.trajectory, record_episode(cfg.env, greedy_actor(policy), seed))
        result["trajectory"] = str(args.trajectory)
    print(json.dumps(result))
    return EXIT_OK


def cmd_bench(args) -> int:
    from .benchmarks import Scenario, bench_plot_data, bench_to_csv, benchmark_suite

    cfg = load_config(args)
    out = out_dir(args) / "bench"
    out.mkdir(parents=True, exist_ok=True)
    scenarios = [Scenario(name=f"N{cfg.env.num_agents}_V{cfg.env.num_vehicles}", env=cfg.env,
                          train_steps=args.train_steps, eval_steps=args.eval_steps, seed=cfg.seed)]
    rows = benchmark_suite(scenarios, cfg.hp)
    (out / "comparison.csv").write_text(bench_to_csv(rows))
    (out / "plot_data.json").write_text(json.dumps(bench_plot_data(rows), indent=2))
    write_manifest(out / "manifest.json", "bench", cfg,
                   {"comparison": str(out / "comparison.csv"), "plot_data": str(out / "plot_data.json")},
                   {"train_steps": args.train_steps, "eval_steps": args.eval_steps})
    print(bench_to_csv(rows), end="")
    return EXIT_OK


def csv_to_series(path: Path) -> dict:
    """Turn one of the exported metric CSVs into labelled, x-sorted series."""
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path} has no rows")
    cols = rows[0].keys()
    if "mechanism" in cols:
        x_key, group_key = "num_uavs", "mechanism"
        y_keys = ["vehicles_per_uav", "pct_uavs_selected", "mean_qou", "mean_qov"]
    elif "method" in cols:
        x_key, group_key = "scenario", "method"
        y_keys = ["coverage", "connectivity", "reward"]
    elif "step" in cols:
        x_key, group_key = "step", None
        y_keys = ["reward", "coverage", "connectivity"]
    else:
        raise ValueError(f"{path}: unrecognised metrics file")
    series = []
    groups = {}
    for r in rows:
        groups.setdefault(r[group_key] if group_key else path.stem, []).append(r)
    for label, grp in groups.items():
        for y in y_keys:
            acc = {}
            for r in grp:
                x = r[x_key]
                try:
                    x = float(x)
                except ValueError:
                    pass
                acc.setdefault(x, []).append(float(r[y]))
            points = [{"x": x, "y": sum(v) / len(v), "n": len(v)} for x, v in acc.items()]
            if all(isinstance(p["x"], float) for p in points):
                points.sort(key=lambda p: p["x"])
            series.append({"label": f"{label}:{y}", "group": label, "metric": y, "points": points})
    return {"source": str(path), "x_axis": {"label": x_key}, "series": series}


def cmd_plotdata(args) -> int:
    out = out_dir(args)
    payload = {"version": 1, "figures": [csv_to_series(Path(p)) for p in args.inputs]}
    path = Path(args.output) if args.output else out / "plot_data.json"
    path.write_text(json.dumps(payload, indent=2))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_ledger_replay(args) -> int:
    records = Ledger.read_log(args.log)
    ledger = Ledger.replay(records, initial_reputation=None if args.keep_reputation else 50.0)
    if ledger.state.event_log != records:
        print("replayed log differs from input", file=sys.stderr)
        return EXIT_RUNTIME
    summary = {"transactions": len(records), "state_digest": ledger.state.digest(),
               "vehicles": len(ledger.state.vehicle_list), "uavs": len(ledger.state.uav_list),
               "zones": len(ledger.state.zones),
               "selected": {str(z): v for z, v in sorted(ledger.state.selected_uavs.items())}}
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uaviov", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="scenario JSON file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value, e.g. env.num_agents=2 (repeatable)")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./uaviov-out)")
        if seed:
            p.add_argument("--seed", type=int)

    p = sub.add_parser("generate", help="sample vehicle/UAV populations")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("select", help="run relay selection over the UAV sweep")
    common(p)
    p.add_argument("--mechanism", choices=MECHANISMS + ("both",), default="both")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("train", help="train and register a coordination policy")
    common(p)
    p.add_argument("--steps", type=int, help="total training steps")
    p.add_argument("--model-id")
    p.add_argument("--agents-range", type=int, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--vehicles-range", type=int, nargs=2, metavar=("LO", "HI"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy evaluation of a registered policy")
    common(p)
    p.add_argument("--model-id")
    p.add_argument("--eval-seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--trajectory", type=Path, help="also dump the first episode as gzip JSON lines")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="compare decentralized, centralized, static and random")
    common(p)
    p.add_argument("--train-steps", type=int, default=40_000)
    p.add_argument("--eval-steps", type=int, default=1_000)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("plotdata", help="convert metric CSVs into plot-ready series JSON")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--output")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plotdata)

    p = sub.add_parser("ledger-replay", help="replay an event log and print the state digest")
    p.add_argument("log")
    p.add_argument("--keep-reputation", action="store_true",
                   help="replay with submitted reputations (as written by `select`)")
    p.set_defaults(func=cmd_ledger_replay)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, KeyError, NoModelError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
