"""Benchmark suites, ablations, the machine-failure stress test and latency runs."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .core import (
    CapExceeded,
    DisturbanceScript,
    GeneratorParams,
    Instance,
    InstanceError,
    brute_force_best,
    failure,
    generate_instance,
    parse_disturbances,
    parse_fjs,
    run_episode,
    script,
)
from .deliberative import (
    AdaptiveConfig,
    AdaptiveScheduler,
    MockProposer,
    RemoteProposer,
    TrajectoryLog,
    TriggerConfig,
    ValidationThresholds,
    build_eval_pool,
    deliberation_cycle,
)
from .reactive import ActiveRuleHandle, ObservationWindow, ReactiveDispatcher, StaticPolicy
from .repository import RetrievalConfig, RuleRepository
from .repository import load as load_repository
from .rules import BUILTIN_SOURCES, validate_rule

log = logging.getLogger(__name__)

VARIANTS = {
    "full": {"max_iters": None, "use_repository": True},
    "no_loop": {"max_iters": 1, "use_repository": True},
    "no_repo": {"max_iters": None, "use_repository": False},
    "no_both": {"max_iters": 1, "use_repository": False},
}
VARIANT_LABELS = {"full": "Full", "no_loop": "w/o Loop", "no_repo": "w/o Repo", "no_both": "w/o Both"}


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def rpd(value: float, best: float) -> float:
    """Relative percent deviation from ``best``."""
    if not best > 0:
        raise ValueError(f"best value must be positive, got {best}")
    return 100.0 * (value - best) / best


def mid_ranks(values: Sequence[float]) -> list:
    """Ranks 1..P (lower value = better), ties share the average rank."""
    return [float(r) for r in rankdata(values, method="average")]


@dataclass
class MetricsRow:
    instance: str
    makespan: dict = field(default_factory=dict)
    rpd: dict = field(default_factory=dict)
    rank: dict = field(default_factory=dict)
    best: Optional[float] = None
    best_source: str = ""
    error: str = ""


@dataclass
class BenchResult:
    policies: list
    rows: list
    mean_rpd: dict
    mean_rank: dict
    extras: dict = field(default_factory=dict)

    def table(self) -> str:
        return format_table(self)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["instance", "policy", "makespan", "rpd", "rank", "best", "best_source", "error"])
        for row in self.rows:
            if row.error:
                w.writerow([row.instance, "", "", "", "", "", "", row.error])
                continue
            for p in self.policies:
                w.writerow([row.instance, p, row.makespan[p], f"{row.rpd[p]:.6f}", row.rank[p], row.best,
                            row.best_source, ""])
        return buf.getvalue()


def format_table(result: BenchResult) -> str:
    names = result.policies
    width = max(15, *(len(n) + 2 for n in names))
    lines = ["instance".ljust(24) + "".join(n.rjust(width) for n in names)]
    for row in result.rows:
        if row.error:
            lines.append(row.instance[:23].ljust(24) + f"  error: {row.error}")
            continue
        cells = "".join(f"{row.makespan[n]:.1f} ({row.rpd[n]:.1f}%)".rjust(width) for n in names)
        lines.append(row.instance[:23].ljust(24) + cells)
    lines.append("mean RPD (%)".ljust(24) + "".join(f"{result.mean_rpd[n]:.2f}".rjust(width) for n in names))
    lines.append("mean rank".ljust(24) + "".join(f"{result.mean_rank[n]:.2f}".rjust(width) for n in names))
    return "\n".join(lines)


def score_rows(rows: list, policies: list) -> BenchResult:
    good = [r for r in rows if not r.error]
    for row in good:
        values = [row.makespan[p] for p in policies]
        if row.best is None:
            row.best = min(values)
            row.best_source = "row_min"
        row.rpd = {p: rpd(row.makespan[p], row.best) for p in policies}
        row.rank = dict(zip(policies, mid_ranks(values)))
    mean_rpd = {p: float(np.mean([r.rpd[p] for r in good])) if good else math.nan for p in policies}
    mean_rank = {p: float(np.mean([r.rank[p] for r in good])) if good else math.nan for p in policies}
    return BenchResult(list(policies), rows, mean_rpd, mean_rank)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class BenchConfig:
    """Everything needed to reproduce a benchmark or ablation run.

    ``suite`` is one of ``{"kind": "generated", "params": [...], "seeds": [...]}``,
    ``{"kind": "fjs", "path": "dir", "disturbances": "dir or null"}`` or
    ``{"kind": "stress"}``.
    """

    suite: dict = field(default_factory=lambda: {"kind": "generated", "params": [
        {"n_jobs": 6, "n_machines": 3, "ops_per_job": [1, 3], "flex": [1, 2], "time_range": [1, 9]}],
        "seeds": [0, 1, 2]})
    policies: list = field(default_factory=lambda: ["SPT", "FIFO", "full"])
    seed: int = 0
    initial_rule: str = "FIFO"
    trigger: dict = field(default_factory=lambda: asdict(TriggerConfig(trigger_period=10, history_len=5, epsilon=0.1)))
    thresholds: dict = field(default_factory=lambda: asdict(ValidationThresholds()))
    retrieval: dict = field(default_factory=lambda: asdict(RetrievalConfig()))
    max_iters: int = 3
    serialized: bool = True
    warm_start: bool = True
    pool_jitter: float = 0.1
    failure_rate: float = 0.0  # random failures per instance when generating disturbances
    repo_path: Optional[str] = None
    brute_force_cap: int = 8
    backend: str = "mock"
    episodes: int = 1

    def __post_init__(self):
        if not self.policies:
            raise ValueError("at least one policy is required")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BenchConfig":
        return cls(**json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "BenchConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def adaptive_config(self, variant: str = "full", serialized: Optional[bool] = None) -> AdaptiveConfig:
        flags = VARIANTS[variant]
        return AdaptiveConfig(
            trigger=TriggerConfig(**self.trigger),
            thresholds=ValidationThresholds(**self.thresholds),
            retrieval=RetrievalConfig(**self.retrieval),
            max_iters=flags["max_iters"] or self.max_iters,
            use_repository=flags["use_repository"],
            serialized=self.serialized if serialized is None else serialized,
            warm_start=self.warm_start,
            pool_jitter=self.pool_jitter,
            seed=self.seed,
        )


def load_suite(config: BenchConfig) -> list:
    """``[(name, instance or None, disturbances, error)]`` for the configured suite."""
    suite = config.suite
    kind = suite.get("kind", "generated")
    out = []
    if kind == "generated":
        for p in suite["params"]:
            params = GeneratorParams(p["n_jobs"], p["n_machines"], tuple(p.get("ops_per_job", (1, 5))),
                                     tuple(p.get("flex", (1, 3))), tuple(p.get("time_range", (1, 10))))
            for s in suite.get("seeds", [0]):
                inst = generate_instance(params, s)
                out.append((inst.name, inst, random_failures(inst, config.failure_rate, s), ""))
    elif kind == "fjs":
        root = Path(suite["path"])
        dist_dir = Path(suite["disturbances"]) if suite.get("disturbances") else None
        for path in sorted(root.glob("*.fjs")):
            try:
                inst = parse_fjs(path.read_text(encoding="utf-8"), name=path.stem)
                dist = None
                if dist_dir is not None and (dist_dir / f"{path.stem}.dist").exists():
                    dist = parse_disturbances((dist_dir / f"{path.stem}.dist").read_text(), inst.n_machines)
                out.append((path.stem, inst, dist, ""))
            except (OSError, InstanceError) as exc:
                out.append((path.stem, None, None, str(exc)))
    elif kind == "stress":
        sc = default_stress_scenario(config.seed)
        out.append((sc.instance.name, sc.instance, sc.disturbances, ""))
    else:
        raise ValueError(f"unknown suite kind {kind!r}")
    return out


def random_failures(instance: Instance, rate: float, seed: int) -> Optional[DisturbanceScript]:
    """Seeded failures (Poisson count with mean ``rate``) spread over a rough horizon."""
    if rate <= 0:
        return None
    rng = np.random.default_rng(seed + 7919)
    horizon = sum(job.operations[0].min_time for job in instance.jobs) + max(
        sum(op.min_time for op in job.operations) for job in instance.jobs)
    count = rng.poisson(rate)
    events = [failure(float(round(rng.uniform(0, horizon))), int(rng.integers(instance.n_machines)),
                      float(max(1, round(rng.uniform(1, horizon / 4))))) for _ in range(count)]
    return script(events)


def make_backend(kind: str, seed: int):
    if kind == "mock":
        return MockProposer(seed)
    if kind == "remote":
        return RemoteProposer()
    raise ValueError(f"unknown backend {kind!r}")


def initial_repository(config: BenchConfig) -> RuleRepository:
    if config.repo_path and os.path.exists(config.repo_path):
        return load_repository(config.repo_path).repository
    return RuleRepository()


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------


def run_policy(policy: str, instance: Instance, disturbances, config: BenchConfig, index: int,
               repository: Optional[RuleRepository] = None, trajectory: Optional[TrajectoryLog] = None,
               gate=None):
    """Makespan of one policy on one instance (plus the scheduler, if adaptive)."""
    if policy in BUILTIN_SOURCES:
        return run_episode(instance, disturbances, StaticPolicy(validate_rule(BUILTIN_SOURCES[policy]))).makespan, None
    variant = "full" if policy == "adaptive" else policy
    if variant not in VARIANTS:
        try:
            rule = validate_rule(policy)
        except ValueError:
            raise ValueError(f"unknown policy {policy!r}") from None
        return run_episode(instance, disturbances, StaticPolicy(rule)).makespan, None
    initial = BUILTIN_SOURCES.get(config.initial_rule, config.initial_rule)
    sched = AdaptiveScheduler(initial, make_backend(config.backend, config.seed + index), repository,
                              config.adaptive_config(variant), trajectory=trajectory, benchmark=instance.name,
                              gate=gate)
    return sched.run(instance, disturbances).makespan, sched


def run_benchmark(config: BenchConfig, gate=None) -> BenchResult:
    """Per-instance makespans, RPD against the oracle (or row best) and ranks.

    Adaptive policies share a repository across the suite (in suite order),
    each policy starting from its own copy of the initial repository.
    """
    suite = load_suite(config)
    repos = {p: (initial_repository(config) if VARIANTS.get("full" if p == "adaptive" else p, {}).get(
        "use_repository") else None) for p in config.policies}
    trajectories = {p: TrajectoryLog() for p in config.policies}
    rows = []
    cycles = {p: [] for p in config.policies}
    for idx, (name, inst, dist, err) in enumerate(suite):
        row = MetricsRow(name, error=err)
        if inst is None:
            rows.append(row)
            continue
        try:
            for p in config.policies:
                value, sched = run_policy(p, inst, dist, config, idx, repos[p], trajectories[p], gate)
                row.makespan[p] = value
                if sched is not None:
                    cycles[p].append([o.status for o in sched.outcomes])
            try:
                row.best = brute_force_best(inst, dist, config.brute_force_cap)
                row.best_source = "oracle"
            except CapExceeded:
                row.best = None
        except Exception as exc:
            log.exception("instance %s failed", name)
            row.error = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    result = score_rows(rows, config.policies)
    result.extras = {"cycles": cycles, "repositories": repos, "trajectories": trajectories}
    return result


def run_ablation(config: BenchConfig, variants: Sequence[str] = tuple(VARIANTS), gate=None) -> BenchResult:
    """The four structural variants on the same suite, seeds and initial repository."""
    cfg = BenchConfig(**{**asdict(config), "policies": list(variants)})
    result = run_benchmark(cfg, gate=gate)
    result.extras["labels"] = {v: VARIANT_LABELS.get(v, v) for v in variants}
    return result


# ---------------------------------------------------------------------------
# Stress test
# ---------------------------------------------------------------------------


@dataclass
class StressScenario:
    instance: Instance
    t_fail: float
    machine: int
    duration: float
    window: float = 5.0
    initial_rule: str = "SPT"

    def __post_init__(self):
        if self.t_fail < 0:
            raise ValueError("failure time must be non-negative")

    @property
    def disturbances(self) -> DisturbanceScript:
        return script([failure(self.t_fail, self.machine, self.duration)])


STRESS_PARAMS = GeneratorParams(12, 5, (3, 5), (1, 3), (1, 9))


def default_stress_scenario(seed: int = 0, initial_rule: str = "SPT", params: GeneratorParams = STRESS_PARAMS
                            ) -> StressScenario:
    """Seeded instance; the busiest machine under the static rule fails mid-episode."""
    inst = generate_instance(params, seed, name=f"stress-s{seed}")
    rule = validate_rule(BUILTIN_SOURCES.get(initial_rule, initial_rule))
    res = run_episode(inst, None, StaticPolicy(rule))
    loads = [0.0] * inst.n_machines
    for seg in res.gantt:
        loads[seg.machine] += seg.end - seg.start
    machine = int(np.argmax(loads))
    t_fail = float(round(res.makespan / 2))
    duration = float(max(1, round(res.makespan * 0.3)))
    return StressScenario(inst, t_fail, machine, duration, window=max(2.0, float(round(res.makespan / 10))),
                          initial_rule=initial_rule)


def stress_adaptive_config(scenario: StressScenario, seed: int = 0) -> AdaptiveConfig:
    # metric-drop trigger only: no periodic or warm-start cycles before the disturbance
    return AdaptiveConfig(
        trigger=TriggerConfig(trigger_period=10 ** 9, history_len=8, epsilon=0.1),
        max_iters=5, serialized=True, warm_start=False, cooldown=8, pool_jitter=0.1, seed=seed,
    )


def throughput_series(completion_times: Sequence[float], width: float) -> list:
    """Rolling throughput ``count(t - width, t] / width`` sampled at each completion."""
    times = sorted(completion_times)
    out = []
    for t in times:
        lo = t - width
        out.append((t, sum(1 for c in times if lo < c <= t) / width))
    return out


@dataclass
class StressResult:
    scenario: StressScenario
    series: dict
    makespan: dict
    swap_times: dict

    def rows(self) -> list:
        return [(t, v, p) for p, s in self.series.items() for t, v in s]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["time", "throughput", "policy"])
        w.writerows(self.rows())
        return buf.getvalue()


def run_stress(scenario: Optional[StressScenario] = None, policies: Sequence[str] = ("static", "adaptive"),
               seed: int = 0, backend=None, repository: Optional[RuleRepository] = None, gate=None) -> StressResult:
    scenario = scenario or default_stress_scenario(seed)
    inst, dist = scenario.instance, scenario.disturbances
    initial = BUILTIN_SOURCES.get(scenario.initial_rule, scenario.initial_rule)
    series, makespans, swaps = {}, {}, {}
    for p in policies:
        if p == "adaptive":
            sched = AdaptiveScheduler(initial, backend or MockProposer(seed), repository,
                                      stress_adaptive_config(scenario, seed), gate=gate)
            res = sched.run(inst, dist)
            swaps[p] = list(sched.swap_times)
        else:
            rule = validate_rule(BUILTIN_SOURCES.get(p, initial) if p != "static" else initial)
            res = run_episode(inst, dist, StaticPolicy(rule))
            swaps[p] = []
        done = sorted(t for t, *_ in _completions(res))
        series[p] = throughput_series(done, scenario.window)
        makespans[p] = res.makespan
    return StressResult(scenario, series, makespans, swaps)


def _completions(result):
    last = {}
    for seg in result.gantt:
        key = (seg.job, seg.op)
        if key not in last or seg.end > last[key][0]:
            last[key] = (seg.end, seg.job, seg.op)
    return list(last.values())


# ---------------------------------------------------------------------------
# Latency
# ---------------------------------------------------------------------------


def _pct(xs, q):
    return float(np.percentile(np.asarray(xs), q)) if xs else math.nan


@dataclass
class LatencyReport:
    reactive_median_us: float
    reactive_p99_us: float
    decisions: int
    deliberation_median_s: float
    deliberation_p99_s: float
    cycles: int
    ratio: float
    async_reactive_median_us: float = math.nan
    async_reactive_p99_us: float = math.nan

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        return "\n".join([
            f"reactive dispatch   median {self.reactive_median_us:9.1f} us   p99 {self.reactive_p99_us:9.1f} us"
            f"   ({self.decisions} decisions)",
            f"  (async cycles)    median {self.async_reactive_median_us:9.1f} us   p99 "
            f"{self.async_reactive_p99_us:9.1f} us",
            f"deliberation cycle  median {self.deliberation_median_s * 1e3:9.1f} ms   p99 "
            f"{self.deliberation_p99_s * 1e3:9.1f} ms   ({self.cycles} cycles)",
            f"ratio delib/react   {self.ratio:.3g}",
        ])


def run_latency(instance: Optional[Instance] = None, episodes: int = 20, cycles: int = 5, seed: int = 0,
                rule: str = "SPT", backend=None, thresholds: ValidationThresholds = ValidationThresholds(),
                max_iters: int = 3) -> LatencyReport:
    """Dispatch wall time per decision, deliberation wall time per cycle.

    The async figure repeats the dispatch measurement while deliberation
    cycles run on the background worker.
    """
    instance = instance or generate_instance(GeneratorParams(10, 5, (3, 6), (1, 3), (1, 10)), seed, "latency-10x5")
    src = BUILTIN_SOURCES.get(rule, rule)
    compiled = validate_rule(src)
    # warm-up
    run_episode(instance, None, StaticPolicy(compiled))
    lat = []
    for _ in range(episodes):
        d = ReactiveDispatcher(ActiveRuleHandle(compiled))
        run_episode(instance, None, d)
        lat.extend(d.latencies())
    # deliberation with the mock backend on a fixed pool
    pool = build_eval_pool(instance, None, thresholds.n, seed)
    window = ObservationWindow()
    d = ReactiveDispatcher(ActiveRuleHandle(compiled), window)
    run_episode(instance, None, d)
    backend = backend or MockProposer(seed)
    durations = []
    for _ in range(cycles):
        handle = ActiveRuleHandle(compiled)
        t0 = time.perf_counter()
        deliberation_cycle(handle, window, None, backend, thresholds, pool, max_iters=max_iters)
        durations.append(time.perf_counter() - t0)
    # dispatch while cycles run in the background
    async_lat = []
    cfg = AdaptiveConfig(trigger=TriggerConfig(trigger_period=5, history_len=5, epsilon=0.5), serialized=False,
                         warm_start=True, cooldown=1, max_iters=max_iters, thresholds=thresholds, seed=seed)
    for e in range(episodes):
        sched = AdaptiveScheduler(compiled, MockProposer(seed + e), None, cfg)
        sched.run(instance)
        async_lat.extend(sched.dispatcher.latencies())
    med = statistics.median(lat)
    dmed = statistics.median(durations)
    return LatencyReport(
        reactive_median_us=med * 1e6,
        reactive_p99_us=_pct(lat, 99) * 1e6,
        decisions=len(lat),
        deliberation_median_s=dmed,
        deliberation_p99_s=_pct(durations, 99),
        cycles=len(durations),
        ratio=dmed / med,
        async_reactive_median_us=statistics.median(async_lat) * 1e6,
        async_reactive_p99_us=_pct(async_lat, 99) * 1e6,
    )
