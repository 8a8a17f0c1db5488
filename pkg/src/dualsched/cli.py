"""Command-line entry point: ``dualsched {run,bench,ablate,stress,latency,repo}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .core import GeneratorParams, generate_instance, parse_disturbances, parse_fjs
from .deliberative import RemoteProposer, TrajectoryLog, ValidationThresholds
from .harness import (
    VARIANTS,
    BenchConfig,
    StressScenario,
    default_stress_scenario,
    run_ablation,
    run_benchmark,
    run_latency,
    run_policy,
    run_stress,
)
from .repository import MetaFeatures, RetrievalConfig, RuleRepository
from .repository import load as load_repository
from .rules import validate_rule

log = logging.getLogger("dualsched")


def _parse_suite(text: str) -> dict:
    """``gen:JxM[:s0,s1,...]``, ``stress`` or a directory of ``.fjs`` files."""
    if text == "stress":
        return {"kind": "stress"}
    if text.startswith("gen:"):
        parts = text.split(":")
        jobs, machines = (int(x) for x in parts[1].lower().split("x"))
        seeds = [int(s) for s in parts[2].split(",")] if len(parts) > 2 else [0, 1, 2, 3, 4]
        return {"kind": "generated", "seeds": seeds, "params": [
            {"n_jobs": jobs, "n_machines": machines, "ops_per_job": [1, 3], "flex": [1, 2], "time_range": [1, 9]}]}
    path = Path(text)
    if not path.is_dir():
        raise SystemExit(f"suite {text!r} is neither 'stress', 'gen:JxM[:seeds]' nor a directory")
    dist = path / "disturbances"
    return {"kind": "fjs", "path": str(path), "disturbances": str(dist) if dist.is_dir() else None}


def _parse_thresholds(text: str) -> dict:
    """``eps_rel,d_min,t_alpha[,n]`` or a JSON object / file."""
    if Path(text).is_file():
        text = Path(text).read_text()
    if text.lstrip().startswith("{"):
        return asdict(ValidationThresholds(**json.loads(text)))
    vals = [v.strip() for v in text.split(",")]
    if len(vals) not in (3, 4):
        raise SystemExit("--thresholds expects eps_rel,d_min,t_alpha[,n]")
    kw = dict(eps_rel=float(vals[0]), d_min=float(vals[1]), t_alpha=float(vals[2]))
    if len(vals) == 4:
        kw["n"] = int(vals[3])
    return asdict(ValidationThresholds(**kw))


def _config(args) -> BenchConfig:
    cfg = BenchConfig.load(args.config) if getattr(args, "config", None) else BenchConfig()
    if getattr(args, "suite", None):
        cfg.suite = _parse_suite(args.suite)
    if getattr(args, "policy", None):
        cfg.policies = list(args.policy)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.trigger_k is not None:
        cfg.trigger["trigger_period"] = args.trigger_k
    if args.trigger_l is not None:
        cfg.trigger["history_len"] = args.trigger_l
    if args.epsilon is not None:
        cfg.trigger["epsilon"] = args.epsilon
    if args.thresholds:
        cfg.thresholds = _parse_thresholds(args.thresholds)
    if args.repo_path:
        cfg.repo_path = args.repo_path
    if args.serialized is not None:
        cfg.serialized = args.serialized
    if args.backend:
        cfg.backend = args.backend
    if getattr(args, "episodes", None):
        cfg.episodes = args.episodes
    if getattr(args, "initial_rule", None):
        cfg.initial_rule = args.initial_rule
    return cfg


def _out_dir(args):
    if not args.out:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_instance(args):
    if args.instance:
        path = Path(args.instance)
        inst = parse_fjs(path.read_text(encoding="utf-8"), name=path.stem)
        dist = None
        if args.disturbances:
            dist = parse_disturbances(Path(args.disturbances).read_text(encoding="utf-8"), inst.n_machines)
        return inst, dist
    if args.suite == "stress" or not args.suite:
        sc = default_stress_scenario(args.seed or 0)
        return sc.instance, sc.disturbances
    suite = _parse_suite(args.suite)
    if suite["kind"] != "generated":
        raise SystemExit("run takes --instance FILE or --suite gen:JxM[:seed]")
    p = suite["params"][0]
    params = GeneratorParams(p["n_jobs"], p["n_machines"], tuple(p["ops_per_job"]), tuple(p["flex"]),
                             tuple(p["time_range"]))
    return generate_instance(params, suite["seeds"][0]), None


def cmd_run(args) -> int:
    cfg = _config(args)
    inst, dist = _load_instance(args)
    repo = load_repository(cfg.repo_path).repository if cfg.repo_path and Path(cfg.repo_path).exists() else (
        RuleRepository())
    traj = TrajectoryLog(str(_out_dir(args) / "trajectory.jsonl") if args.out else None)
    policy = args.policy[0] if args.policy else "full"
    makespans = []
    for ep in range(max(1, cfg.episodes)):
        value, sched = run_policy(policy, inst, dist, cfg, ep, repo, traj)
        makespans.append(value)
        msg = f"episode {ep + 1}: makespan {value:g}"
        if sched is not None:
            statuses = [o.status for o in sched.outcomes]
            msg += f"  cycles {len(statuses)}  accepted {statuses.count('accepted')}  final rule: " \
                   f"{sched.handle.rule.source}"
        print(msg)
    if cfg.repo_path and policy in VARIANTS and VARIANTS[policy]["use_repository"]:
        repo.persist(cfg.repo_path)
    return 0


def cmd_bench(args, ablate: bool = False) -> int:
    cfg = _config(args)
    result = run_ablation(cfg) if ablate else run_benchmark(cfg)
    print(result.table())
    out = _out_dir(args)
    if out is not None:
        name = "ablation" if ablate else "benchmark"
        (out / f"{name}.csv").write_text(result.to_csv())
        (out / f"{name}.txt").write_text(result.table() + "\n")
        cfg.save(out / "config.json")
    return 0 if any(not r.error for r in result.rows) else 1


def cmd_stress(args) -> int:
    seed = args.seed or 0
    sc = default_stress_scenario(seed)
    if args.instance:
        inst, _ = _load_instance(args)
        base = default_stress_scenario(seed)
        sc = StressScenario(inst, args.t_fail if args.t_fail is not None else base.t_fail, args.machine or 0,
                            args.duration or base.duration, base.window)
    elif args.t_fail is not None:
        sc = StressScenario(sc.instance, args.t_fail, sc.machine if args.machine is None else args.machine,
                            args.duration or sc.duration, sc.window)
    backend = RemoteProposer() if args.backend == "remote" else None
    res = run_stress(sc, seed=seed, backend=backend)
    print(f"failure: machine {sc.machine + 1} at t={sc.t_fail:g} for {sc.duration:g}")
    for p, m in res.makespan.items():
        print(f"{p:10s} makespan {m:g}  swaps at {res.swap_times[p]}")
    out = _out_dir(args)
    if out is not None:
        (out / "stress.csv").write_text(res.to_csv())
    else:
        sys.stdout.write(res.to_csv())
    return 0


def cmd_latency(args) -> int:
    inst = _load_instance(args)[0] if args.instance else None
    rep = run_latency(inst, episodes=args.episodes or 20, seed=args.seed or 0)
    print(rep.table())
    out = _out_dir(args)
    if out is not None:
        (out / "latency.json").write_text(json.dumps(rep.to_dict(), indent=2))
    return 0


def cmd_repo(args) -> int:
    if not args.repo_path:
        raise SystemExit("repo needs --repo-path")
    path = Path(args.repo_path)
    loaded = load_repository(path) if path.exists() else None
    repo = loaded.repository if loaded else RuleRepository()
    if loaded and loaded.skipped:
        print(f"skipped {loaded.skipped} unreadable record(s)", file=sys.stderr)
    if args.action == "show":
        for e in repo.entries:
            print(f"{e.meta.n_jobs}x{e.meta.n_machines}  v={e.value:.4f}  C={e.complexity}  {e.rule_source}")
        print(f"{len(repo)} entries")
    elif args.action == "query":
        meta = MetaFeatures(args.jobs, args.machines)
        for e in repo.retrieve(meta, RetrievalConfig(k=args.k)):
            print(f"{e.meta.n_jobs}x{e.meta.n_machines}  v={e.value:.4f}  {e.rule_source}")
    elif args.action == "add":
        rule = validate_rule(args.rule)
        repo.insert(MetaFeatures(args.jobs, args.machines), rule, args.value, args.benchmark or "")
        repo.persist(path)
        print(f"added; {len(repo)} entries")
    elif args.action == "compact":
        repo.persist(path)
        print(f"rewrote {len(repo)} entries")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--instance", help="instance file in .fjs format")
    common.add_argument("--disturbances", help="disturbance script for --instance")
    common.add_argument("--suite", help="'stress', 'gen:JxM[:seeds]' or a directory of .fjs files")
    common.add_argument("--policy", action="append",
                        help="builtin rule name, rule text, or adaptive variant (full, no_loop, no_repo, no_both);"
                             " repeatable")
    common.add_argument("--initial-rule", help="starting rule of adaptive policies")
    common.add_argument("--seed", type=int)
    common.add_argument("--episodes", type=int)
    common.add_argument("--trigger-k", type=int, help="periodic trigger interval in epochs")
    common.add_argument("--trigger-l", type=int, help="metric history length")
    common.add_argument("--epsilon", type=float, help="relative metric drop that triggers a cycle")
    common.add_argument("--thresholds", help="eps_rel,d_min,t_alpha[,n] or JSON")
    common.add_argument("--repo-path")
    common.add_argument("--serialized", dest="serialized", action="store_true", default=None)
    common.add_argument("--async", dest="serialized", action="store_false")
    common.add_argument("--backend", choices=("mock", "remote"))
    common.add_argument("--out", help="output directory")
    common.add_argument("--config", help="BenchConfig JSON file")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dualsched", description="Adaptive dispatching-rule scheduler")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="single episode").set_defaults(fn=cmd_run)
    sub.add_parser("bench", parents=[common], help="benchmark table").set_defaults(fn=cmd_bench)
    sub.add_parser("ablate", parents=[common], help="four-variant ablation").set_defaults(
        fn=lambda a: cmd_bench(a, ablate=True))
    st = sub.add_parser("stress", parents=[common], help="machine-failure stress test")
    st.add_argument("--t-fail", type=float)
    st.add_argument("--machine", type=int, help="0-based machine index")
    st.add_argument("--duration", type=float)
    st.set_defaults(fn=cmd_stress)
    sub.add_parser("latency", parents=[common], help="dispatch and deliberation latency").set_defaults(
        fn=cmd_latency)
    rp = sub.add_parser("repo", parents=[common], help="inspect or edit a rule repository")
    rp.add_argument("action", choices=("show", "query", "add", "compact"))
    rp.add_argument("--jobs", type=int, default=10)
    rp.add_argument("--machines", type=int, default=5)
    rp.add_argument("--k", type=int, default=3)
    rp.add_argument("--rule")
    rp.add_argument("--value", type=float, default=0.0)
    rp.add_argument("--benchmark")
    rp.set_defaults(fn=cmd_repo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except SystemExit:
        raise
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
