"""The hot path: argmax dispatch under the active rule.

The active rule lives in an :class:`ActiveRuleHandle`. A dispatch reads the
handle's slot exactly once, so it evaluates every candidate with a single rule
version even if a swap lands mid-decision. Swaps may come from any thread.
"""

from __future__ import annotations

import json
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Optional

from .core import Action, SimState, feasible_actions
from .rules import CompiledRule, candidate_features


class _Slot(tuple):
    """(version, rule) pair installed as one object."""

    __slots__ = ()

    @property
    def version(self) -> int:
        return self[0]

    @property
    def rule(self) -> CompiledRule:
        return self[1]


class ActiveRuleHandle:
    """Indivisibly replaceable reference to the deployed rule.

    Deployment versions start at 1 and increase by one per swap, even when
    the same rule text is redeployed. ``history`` keeps one entry per
    deployment ``(version, source, report)`` for auditing.
    """

    def __init__(self, rule: CompiledRule):
        self._slot = _Slot((1, rule))
        self._lock = threading.Lock()
        self.history = [(1, rule.source, None)]
        self.listeners = []

    def snapshot(self) -> _Slot:
        return self._slot

    @property
    def version(self) -> int:
        return self._slot[0]

    @property
    def rule(self) -> CompiledRule:
        return self._slot[1]

    def swap(self, rule: CompiledRule, report=None) -> int:
        with self._lock:
            prev = self._slot[0]
            for listener in self.listeners:
                listener(rule, report)
            self._slot = _Slot((prev + 1, rule))
            self.history.append((prev + 1, rule.source, report))
        return prev


def swap_rule(handle: ActiveRuleHandle, new_rule: CompiledRule, report=None) -> int:
    """Install ``new_rule``; returns the version it replaced."""
    return handle.swap(new_rule, report)


def select_action(rule: CompiledRule, state: SimState, actions: list) -> Optional[Action]:
    """Argmax of the rule over ``actions``; earliest canonical action wins ties."""
    if not actions:
        return None
    fn = rule.fn
    best = None
    best_score = 0.0
    for action, feats in zip(actions, candidate_features(state, actions)):
        s = fn(feats)
        if best is None or s > best_score:
            best, best_score = action, s
    return best


def dispatch(handle: ActiveRuleHandle, state: SimState, instance=None) -> Optional[Action]:
    return select_action(handle.snapshot()[1], state, feasible_actions(state))


@dataclass
class DecisionRecord:
    epoch: int
    clock: float
    action: Optional[tuple]
    candidates: int
    version: int
    latency: float  # seconds

    def to_json(self) -> str:
        d = asdict(self)
        d["action"] = list(self.action) if self.action is not None else None
        d["latency_us"] = d.pop("latency") * 1e6
        return json.dumps(d)


def write_decision_log(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


@dataclass
class ShopSnapshot:
    clock: float = 0.0
    workloads: list = field(default_factory=list)
    queue_lengths: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    mean_wait: float = 0.0


def rolling_throughput(completion_times, now: float, start: float) -> float:
    """Completions in ``[start, now]`` per time unit (0 on an empty span)."""
    span = now - start
    if span <= 0:
        return 0.0
    return sum(1 for t in completion_times if start <= t <= now) / span


class ObservationWindow:
    """Last ``size`` decisions plus completions, and the metric history.

    The monitored metric is rolling throughput: completed operations per
    time unit over the span covered by the retained decision records.
    """

    def __init__(self, size: int = 50, history: int = 10):
        self.size = size
        self.records = deque(maxlen=size)
        self.completions = deque(maxlen=4 * size)
        self.metric_history = deque(maxlen=history)
        self.snapshot = ShopSnapshot()
        self.rule_source = ""
        self._lock = threading.Lock()

    def observe(self, record: DecisionRecord, state: SimState, new_completions=()) -> float:
        with self._lock:
            self.records.append(record)
            self.completions.extend(new_completions)
            ready = state.ready_jobs()
            queue = [0] * state.n_machines
            for i in ready:
                for k in state.jobs[i].operations[state.cur[i]].machines:
                    queue[k] += 1
            self.snapshot = ShopSnapshot(
                clock=state.clock,
                workloads=[state.machine_workload(k) for k in range(state.n_machines)],
                queue_lengths=queue,
                failures=state.active_failures(),
                mean_wait=(sum(state.clock - state.ready_since[i] for i in ready) / len(ready)) if ready else 0.0,
            )
            m = self._throughput()
            self.metric_history.append(m)
            return m

    def _throughput(self) -> float:
        if not self.records:
            return 0.0
        start = self.records[0].clock
        now = self.snapshot.clock
        return rolling_throughput([c[0] for c in self.completions], now, start)

    def throughput(self) -> float:
        with self._lock:
            return self._throughput()

    def copy(self) -> "ObservationWindow":
        with self._lock:
            new = ObservationWindow(self.size, self.metric_history.maxlen)
            new.records.extend(self.records)
            new.completions.extend(self.completions)
            new.metric_history.extend(self.metric_history)
            new.snapshot = self.snapshot
            new.rule_source = self.rule_source
            return new


@dataclass
class SummaryProfile:
    window_length: int
    mean_utilization: float
    max_utilization: float
    queue_lengths: list
    bottleneck: Optional[int]
    mean_wait: float
    throughput: float
    metric_history: list
    rule_source: str
    active_failures: list
    objective: str = "minimize makespan"

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(window: ObservationWindow) -> SummaryProfile:
    w = window.copy()
    snap = w.snapshot
    if not w.records:
        return SummaryProfile(0, 0.0, 0.0, list(snap.queue_lengths), None, 0.0, 0.0, [], w.rule_source, [])
    loads = snap.workloads
    total = sum(loads)
    util = [x / snap.clock for x in loads] if snap.clock > 0 else [0.0] * len(loads)
    bottleneck = max(range(len(loads)), key=lambda k: loads[k]) if total > 0 else None
    return SummaryProfile(
        window_length=len(w.records),
        mean_utilization=sum(util) / len(util) if util else 0.0,
        max_utilization=max(util) if util else 0.0,
        queue_lengths=list(snap.queue_lengths),
        bottleneck=bottleneck,
        mean_wait=snap.mean_wait,
        throughput=w._throughput(),
        metric_history=list(w.metric_history),
        rule_source=w.rule_source,
        active_failures=list(snap.failures),
    )


class ReactiveDispatcher:
    """Policy callable for :func:`run_episode` that records every decision.

    ``on_decision(epoch, metric, state)`` is invoked after each decision is
    recorded; the adaptive scheduler hangs its trigger check there.
    """

    def __init__(self, handle: ActiveRuleHandle, window: Optional[ObservationWindow] = None,
                 on_decision=None, keep_log: bool = True):
        self.handle = handle
        self.window = window if window is not None else ObservationWindow()
        self.on_decision = on_decision
        self.keep_log = keep_log
        self.log = []
        self.epoch = 0
        self._seen_completions = 0

    def __call__(self, state: SimState) -> Optional[Action]:
        t0 = time.perf_counter()
        version, rule = self.handle.snapshot()
        actions = feasible_actions(state)
        choice = select_action(rule, state, actions)
        latency = time.perf_counter() - t0
        self.epoch += 1
        rec = DecisionRecord(self.epoch, state.clock, choice, len(actions), version, latency)
        if self.keep_log:
            self.log.append(rec)
        log = state.completed_log
        fresh = log[self._seen_completions:]
        self._seen_completions = len(log)
        self.window.rule_source = rule.source
        metric = self.window.observe(rec, state, fresh)
        if self.on_decision is not None:
            self.on_decision(self.epoch, metric, state)
        return choice

    def reset(self) -> None:
        self.epoch = 0
        self._seen_completions = 0

    def latencies(self) -> list:
        return [r.latency for r in self.log]


class StaticPolicy:
    """Argmax policy over a fixed rule, without logging."""

    def __init__(self, rule: CompiledRule):
        self.rule = rule

    def __call__(self, state: SimState) -> Optional[Action]:
        return select_action(self.rule, state, feasible_actions(state))
