"""Discrete-event simulation of the dynamic flexible job shop.

Jobs are ordered chains of operations; each operation may run on any machine
in its eligible set. The simulator advances from event to event (operation
completions, scripted machine failures/recoveries and job arrivals) and opens
a decision epoch whenever a dispatch is possible. A failure on a busy machine
suspends the running operation, which keeps its progress and returns to the
ready set (preempt-resume).
"""

from __future__ import annotations

import heapq
import itertools
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Optional, Sequence


class InstanceError(ValueError):
    """Malformed instance text or parameters."""


class SimulationError(RuntimeError):
    """Raised on infeasible actions or inconsistent event scripts."""


class LivelockError(SimulationError):
    pass


# ---------------------------------------------------------------------------
# Problem data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Operation:
    job_id: int
    op_index: int
    alternatives: dict  # machine id -> processing time

    def __post_init__(self):
        if not self.alternatives:
            raise InstanceError(f"operation {self.job_id}.{self.op_index} has no eligible machine")
        for k, p in self.alternatives.items():
            if not (math.isfinite(p) and p > 0):
                raise InstanceError(
                    f"operation {self.job_id}.{self.op_index}: bad processing time {p!r} on machine {k}"
                )
        object.__setattr__(self, "machines", tuple(sorted(self.alternatives)))

    @property
    def min_time(self) -> float:
        return min(self.alternatives.values())


@dataclass(frozen=True)
class Job:
    id: int
    operations: tuple
    arrival_time: float = 0.0

    def __post_init__(self):
        if not self.operations:
            raise InstanceError(f"job {self.id} has no operations")
        # suffix sums of min-alternative times, used by remaining-work features
        acc = 0.0
        suffix = []
        for op in reversed(self.operations):
            acc += op.min_time
            suffix.append(acc)
        object.__setattr__(self, "suffix_work", tuple(reversed(suffix)) + (0.0,))

    @property
    def n_ops(self) -> int:
        return len(self.operations)


def make_job(job_id: int, ops: Sequence[dict], arrival_time: float = 0.0) -> Job:
    """Build a job from a list of ``{machine: time}`` dicts."""
    operations = tuple(
        Operation(job_id, j, {int(k): float(p) for k, p in alts.items()}) for j, alts in enumerate(ops)
    )
    return Job(job_id, operations, float(arrival_time))


@dataclass(frozen=True)
class Instance:
    jobs: tuple
    n_machines: int
    name: str = "instance"

    def __post_init__(self):
        if self.n_machines < 1:
            raise InstanceError("instance needs at least one machine")
        for i, job in enumerate(self.jobs):
            if job.id != i:
                raise InstanceError(f"job ids must be 0..n-1 in order, got {job.id} at position {i}")
            for op in job.operations:
                for k in op.alternatives:
                    if not 0 <= k < self.n_machines:
                        raise InstanceError(f"job {i} op {op.op_index}: machine {k} out of range")

    @property
    def n_jobs(self) -> int:
        return len(self.jobs)

    @property
    def n_ops(self) -> int:
        return sum(job.n_ops for job in self.jobs)


def instance_from_lists(jobs: Sequence[Sequence[dict]], n_machines: int, name: str = "instance") -> Instance:
    return Instance(tuple(make_job(i, ops) for i, ops in enumerate(jobs)), n_machines, name)


# ---------------------------------------------------------------------------
# Text formats
# ---------------------------------------------------------------------------


def _parse_job_tokens(tokens: list, pos: int, n_machines: int, job_id: int, where: str):
    """Decode one job spec starting at ``tokens[pos]``; returns (ops, next_pos)."""

    def take():
        nonlocal pos
        if pos >= len(tokens):
            raise InstanceError(f"{where}: truncated job specification")
        tok = tokens[pos]
        pos += 1
        return tok

    try:
        n_ops = int(take())
        if n_ops < 1:
            raise InstanceError(f"{where}: job must have at least one operation")
        ops = []
        for j in range(n_ops):
            n_alts = int(take())
            if n_alts < 1:
                raise InstanceError(f"{where}: operation {j + 1} has zero alternatives")
            alts = {}
            for _ in range(n_alts):
                machine = int(take())
                ptime = float(take())
                if not 1 <= machine <= n_machines:
                    raise InstanceError(f"{where}: machine index {machine} out of range 1..{n_machines}")
                if not (math.isfinite(ptime) and ptime > 0):
                    raise InstanceError(f"{where}: non-positive processing time {ptime}")
                alts[machine - 1] = ptime
            ops.append(alts)
    except ValueError as exc:
        if isinstance(exc, InstanceError):
            raise
        raise InstanceError(f"{where}: {exc}") from exc
    return ops, pos


def _data_lines(text: str) -> list:
    out = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            out.append(line)
    return out


def parse_fjs(text: str, name: str = "instance") -> Instance:
    """Parse the flexible job shop text format.

    Header ``n_jobs n_machines [avg_flex]``, then one line per job:
    ``n_ops`` followed, for every operation, by ``n_alts`` and that many
    ``machine time`` pairs. Machine ids are 1-based in the file and 0-based
    in the returned :class:`Instance`.
    """
    lines = _data_lines(text)
    if not lines:
        raise InstanceError("empty instance text")
    header = lines[0].split()
    if len(header) < 2:
        raise InstanceError(f"malformed header: {lines[0]!r}")
    try:
        n_jobs, n_machines = int(header[0]), int(float(header[1]))
    except ValueError as exc:
        raise InstanceError(f"malformed header: {lines[0]!r}") from exc
    if n_jobs < 1 or n_machines < 1:
        raise InstanceError(f"malformed header: {lines[0]!r}")
    if len(lines) - 1 < n_jobs:
        raise InstanceError(f"expected {n_jobs} job lines, found {len(lines) - 1}")
    jobs = []
    for i in range(n_jobs):
        tokens = lines[1 + i].split()
        ops, end = _parse_job_tokens(tokens, 0, n_machines, i, f"job line {i + 1}")
        if end != len(tokens):
            raise InstanceError(f"job line {i + 1}: trailing tokens")
        jobs.append(make_job(i, ops))
    return Instance(tuple(jobs), n_machines, name)


def _fmt_num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def _format_job(job: Job) -> str:
    parts = [str(job.n_ops)]
    for op in job.operations:
        parts.append(str(len(op.alternatives)))
        for k in op.machines:
            parts += [str(k + 1), _fmt_num(op.alternatives[k])]
    return " ".join(parts)


def format_fjs(instance: Instance) -> str:
    flex = sum(len(op.alternatives) for job in instance.jobs for op in job.operations) / max(instance.n_ops, 1)
    lines = [f"{instance.n_jobs} {instance.n_machines} {flex:g}"]
    lines += [_format_job(job) for job in instance.jobs]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Disturbances
# ---------------------------------------------------------------------------

# same-timestamp processing order
RECOVERY, COMPLETION, FAILURE, ARRIVAL = 0, 1, 2, 3


@dataclass(frozen=True)
class Disturbance:
    time: float
    kind: str  # "arrival" | "fail" | "recover"
    machine: int = -1
    duration: float = 0.0
    ops: tuple = ()  # arrival only: tuple of {machine: time} dicts

    def __post_init__(self):
        if self.kind not in ("arrival", "fail", "recover"):
            raise InstanceError(f"unknown disturbance kind {self.kind!r}")
        if not math.isfinite(self.time) or self.time < 0:
            raise InstanceError(f"bad disturbance time {self.time!r}")
        if self.kind == "fail" and not (math.isfinite(self.duration) and self.duration > 0):
            raise InstanceError(f"failure duration must be positive, got {self.duration!r}")
        if self.kind == "arrival" and not self.ops:
            raise InstanceError("arrival without operations")


@dataclass(frozen=True)
class DisturbanceScript:
    events: tuple = ()

    def __post_init__(self):
        times = [e.time for e in self.events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise InstanceError("disturbance times must be non-decreasing")

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def validate_for(self, instance: Instance) -> None:
        for e in self.events:
            if e.kind in ("fail", "recover") and not 0 <= e.machine < instance.n_machines:
                raise InstanceError(f"disturbance references machine {e.machine + 1} outside the instance")
            if e.kind == "arrival":
                for alts in e.ops:
                    for k in alts:
                        if not 0 <= k < instance.n_machines:
                            raise InstanceError(f"arrival references machine {k + 1} outside the instance")


def failure(time: float, machine: int, duration: float) -> Disturbance:
    return Disturbance(float(time), "fail", machine, float(duration))


def recovery(time: float, machine: int) -> Disturbance:
    return Disturbance(float(time), "recover", machine)


def arrival(time: float, ops: Sequence[dict]) -> Disturbance:
    return Disturbance(float(time), "arrival", ops=tuple({int(k): float(p) for k, p in a.items()} for a in ops))


def script(events: Iterable[Disturbance]) -> DisturbanceScript:
    return DisturbanceScript(tuple(sorted(events, key=lambda e: e.time)))


def parse_disturbances(text: str, n_machines: int) -> DisturbanceScript:
    """Parse ``arrival``/``fail``/``recover`` records, one per line (1-based machines)."""
    events = []
    for lineno, line in enumerate(_data_lines(text), 1):
        tokens = line.split()
        kind = tokens[0].lower()
        try:
            t = float(tokens[1])
            if kind == "arrival":
                ops, end = _parse_job_tokens(tokens, 2, n_machines, -1, f"disturbance line {lineno}")
                if end != len(tokens):
                    raise InstanceError(f"disturbance line {lineno}: trailing tokens")
                events.append(arrival(t, ops))
            elif kind == "fail":
                if len(tokens) != 4:
                    raise InstanceError(f"disturbance line {lineno}: expected 'fail <time> <machine> <duration>'")
                k = int(tokens[2])
                if not 1 <= k <= n_machines:
                    raise InstanceError(f"disturbance line {lineno}: machine {k} out of range")
                events.append(failure(t, k - 1, float(tokens[3])))
            elif kind == "recover":
                if len(tokens) != 3:
                    raise InstanceError(f"disturbance line {lineno}: expected 'recover <time> <machine>'")
                k = int(tokens[2])
                if not 1 <= k <= n_machines:
                    raise InstanceError(f"disturbance line {lineno}: machine {k} out of range")
                events.append(recovery(t, k - 1))
            else:
                raise InstanceError(f"disturbance line {lineno}: unknown record {kind!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, InstanceError):
                raise
            raise InstanceError(f"disturbance line {lineno}: {exc}") from exc
    return DisturbanceScript(tuple(events))


def format_disturbances(dist: DisturbanceScript) -> str:
    lines = []
    for e in dist:
        if e.kind == "fail":
            lines.append(f"fail {_fmt_num(e.time)} {e.machine + 1} {_fmt_num(e.duration)}")
        elif e.kind == "recover":
            lines.append(f"recover {_fmt_num(e.time)} {e.machine + 1}")
        else:
            job = make_job(0, e.ops)
            lines.append(f"arrival {_fmt_num(e.time)} {_format_job(job)}")
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# Generator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeneratorParams:
    n_jobs: int
    n_machines: int
    ops_per_job: tuple = (1, 5)
    flex: tuple = (1, 3)
    time_range: tuple = (1, 10)


def generate_instance(params: GeneratorParams, seed: int, name: Optional[str] = None) -> Instance:
    """Random instance with integer processing times; deterministic in (params, seed)."""
    lo_ops, hi_ops = params.ops_per_job
    lo_flex, hi_flex = params.flex
    lo_t, hi_t = params.time_range
    if params.n_jobs < 1 or params.n_machines < 1:
        raise InstanceError("need at least one job and one machine")
    if not (1 <= lo_ops <= hi_ops and 1 <= lo_flex <= hi_flex and 0 < lo_t <= hi_t):
        raise InstanceError(f"empty or invalid range in {params}")
    if hi_flex > params.n_machines:
        raise InstanceError(f"flex upper bound {hi_flex} exceeds machine count {params.n_machines}")
    rng = random.Random(seed)
    jobs = []
    for i in range(params.n_jobs):
        ops = []
        for _ in range(rng.randint(lo_ops, hi_ops)):
            machines = rng.sample(range(params.n_machines), rng.randint(lo_flex, hi_flex))
            ops.append({k: rng.randint(lo_t, hi_t) for k in sorted(machines)})
        jobs.append(make_job(i, ops))
    return Instance(tuple(jobs), params.n_machines, name or f"gen-{params.n_jobs}x{params.n_machines}-s{seed}")


# ---------------------------------------------------------------------------
# Simulation state
# ---------------------------------------------------------------------------


class Action(NamedTuple):
    job_id: int
    op_index: int
    machine_id: int


class Segment(NamedTuple):
    machine: int
    job: int
    op: int
    start: float
    end: float


_NONE = -1
_seq = itertools.count()


class SimState:
    """Mutable shop-floor state.

    Per job only the current (first unfinished) operation carries progress;
    earlier operations are complete and later ones unreleased. Use
    :meth:`copy` before branching.
    """

    __slots__ = (
        "clock", "jobs", "arrived", "cur", "running_on", "rem_time", "rem_machine", "ready_since",
        "completion", "m_job", "m_start", "m_end", "m_failed_until", "m_workload", "m_idle_since",
        "events", "gantt", "completed_log", "decision_count",
    )

    def __init__(self, instance: Instance, disturbances: Optional[DisturbanceScript] = None):
        m = instance.n_machines
        self.clock = 0.0
        self.jobs = list(instance.jobs)
        n = len(self.jobs)
        self.arrived = [False] * n
        self.cur = [0] * n
        self.running_on = [_NONE] * n
        # remaining time of the current op measured on rem_machine; -1 machine = fresh
        self.rem_time = [0.0] * n
        self.rem_machine = [_NONE] * n
        self.ready_since = [0.0] * n
        self.completion = [None] * n
        self.m_job = [_NONE] * m
        self.m_start = [0.0] * m
        self.m_end = [0.0] * m
        self.m_failed_until = [None] * m
        self.m_workload = [0.0] * m
        self.m_idle_since = [0.0] * m
        self.events = []
        self.gantt = []
        self.completed_log = []
        self.decision_count = 0
        if disturbances is not None:
            disturbances.validate_for(instance)
            for e in disturbances:
                prio = {"recover": RECOVERY, "fail": FAILURE, "arrival": ARRIVAL}[e.kind]
                heapq.heappush(self.events, (e.time, prio, next(_seq), e))
        for job in self.jobs:
            if job.arrival_time > 0:
                heapq.heappush(self.events, (job.arrival_time, ARRIVAL, next(_seq), job.id))
            else:
                self.arrived[job.id] = True
        # scripted events before the start are impossible to honour
        if self.events and self.events[0][0] < 0:
            raise SimulationError("disturbance scheduled before time 0")
        self._apply_events_at(0.0, completions=False)

    @property
    def n_machines(self) -> int:
        return len(self.m_job)

    def copy(self) -> "SimState":
        new = SimState.__new__(SimState)
        new.clock = self.clock
        new.jobs = list(self.jobs)
        new.arrived = list(self.arrived)
        new.cur = list(self.cur)
        new.running_on = list(self.running_on)
        new.rem_time = list(self.rem_time)
        new.rem_machine = list(self.rem_machine)
        new.ready_since = list(self.ready_since)
        new.completion = list(self.completion)
        new.m_job = list(self.m_job)
        new.m_start = list(self.m_start)
        new.m_end = list(self.m_end)
        new.m_failed_until = list(self.m_failed_until)
        new.m_workload = list(self.m_workload)
        new.m_idle_since = list(self.m_idle_since)
        new.events = list(self.events)
        new.gantt = list(self.gantt)
        new.completed_log = list(self.completed_log)
        new.decision_count = self.decision_count
        return new

    # -- queries ---------------------------------------------------------

    def is_ready(self, i: int) -> bool:
        return self.arrived[i] and self.running_on[i] == _NONE and self.cur[i] < self.jobs[i].n_ops

    def ready_jobs(self) -> list:
        return [i for i in range(len(self.jobs)) if self.is_ready(i)]

    def is_failed(self, k: int) -> bool:
        return self.m_failed_until[k] is not None

    def is_idle(self, k: int) -> bool:
        return self.m_job[k] == _NONE and self.m_failed_until[k] is None

    def remaining_on(self, i: int, k: int) -> float:
        """Remaining processing time of job i's current op if run on machine k."""
        op = self.jobs[i].operations[self.cur[i]]
        p = op.alternatives[k]
        rm = self.rem_machine[i]
        if rm == _NONE:
            return p
        if rm == k:
            return self.rem_time[i]
        return self.rem_time[i] * p / op.alternatives[rm]

    def remaining_fraction(self, i: int) -> float:
        rm = self.rem_machine[i]
        if rm == _NONE:
            return 1.0
        return self.rem_time[i] / self.jobs[i].operations[self.cur[i]].alternatives[rm]

    def is_done(self) -> bool:
        if any(e[1] == ARRIVAL for e in self.events):
            return False
        return all(c is not None for c in self.completion)

    def next_event_time(self) -> Optional[float]:
        t = None
        for k, j in enumerate(self.m_job):
            if j != _NONE and (t is None or self.m_end[k] < t):
                t = self.m_end[k]
        if self.events and (t is None or self.events[0][0] < t):
            t = self.events[0][0]
        return t

    def pending_event_count(self) -> int:
        return len(self.events) + sum(1 for j in self.m_job if j != _NONE)

    def active_failures(self) -> list:
        return [k for k, u in enumerate(self.m_failed_until) if u is not None]

    def machine_workload(self, k: int) -> float:
        """Processed time on machine k so far, including a running segment."""
        w = self.m_workload[k]
        if self.m_job[k] != _NONE:
            w += self.clock - self.m_start[k]
        return w

    def signature(self) -> tuple:
        """Hashable summary of everything that influences the future."""
        return (
            self.clock, tuple(self.arrived), tuple(self.cur), tuple(self.running_on), tuple(self.rem_time),
            tuple(self.rem_machine), tuple(self.m_job), tuple(self.m_end), tuple(self.m_failed_until),
            tuple(e[2] for e in self.events),
        )

    # -- transitions -----------------------------------------------------

    def start(self, action: Action) -> None:
        i, j, k = action
        if not (0 <= i < len(self.jobs)) or not self.is_ready(i) or self.cur[i] != j:
            raise SimulationError(f"infeasible action {action}: operation not ready")
        op = self.jobs[i].operations[j]
        if k not in op.alternatives:
            raise SimulationError(f"infeasible action {action}: machine not eligible")
        if not self.is_idle(k):
            raise SimulationError(f"infeasible action {action}: machine busy or failed")
        dur = self.remaining_on(i, k)
        self.m_job[k] = i
        self.m_start[k] = self.clock
        self.m_end[k] = self.clock + dur
        self.running_on[i] = k
        self.decision_count += 1

    def advance(self) -> float:
        """Move the clock to the next event and apply everything due then."""
        t = self.next_event_time()
        if t is None:
            raise SimulationError("wait requested but no future event exists")
        if t < self.clock:
            raise SimulationError(f"clock would move backward ({self.clock} -> {t})")
        elapsed = t - self.clock
        self.clock = t
        self._apply_events_at(t)
        return elapsed

    def _pop_due(self, t: float, prio: int) -> list:
        out = []
        while self.events and self.events[0][0] == t and self.events[0][1] == prio:
            out.append(heapq.heappop(self.events))
        return out

    def _apply_events_at(self, t: float, completions: bool = True) -> None:
        if self.events and self.events[0][0] < t:
            raise SimulationError(f"clock would move backward past scripted event at {self.events[0][0]}")
        for _, _, _, e in self._pop_due(t, RECOVERY):
            self._recover(e, t)
        if completions:
            for k in range(self.n_machines):
                if self.m_job[k] != _NONE and self.m_end[k] == t:
                    self._complete(k, t)
        for _, _, _, e in self._pop_due(t, FAILURE):
            self._fail(e.machine, t, e.duration)
        for _, _, _, e in self._pop_due(t, ARRIVAL):
            self._arrive(e, t)

    def _recover(self, e, t: float) -> None:
        # auto-recoveries carry ("auto", machine); only honour the latest failure window
        if isinstance(e, tuple):
            _, k = e
            if self.m_failed_until[k] == t:
                self.m_failed_until[k] = None
                self.m_idle_since[k] = t
        else:
            k = e.machine
            if self.m_failed_until[k] is not None:
                self.m_failed_until[k] = None
                self.m_idle_since[k] = t

    def _close_segment(self, k: int, t: float) -> int:
        i = self.m_job[k]
        if t > self.m_start[k]:
            self.gantt.append(Segment(k, i, self.cur[i], self.m_start[k], t))
            self.m_workload[k] += t - self.m_start[k]
        self.m_job[k] = _NONE
        self.running_on[i] = _NONE
        return i

    def _complete(self, k: int, t: float) -> None:
        i = self._close_segment(k, t)
        self.m_idle_since[k] = t
        self.completed_log.append((t, i, self.cur[i], k))
        self.cur[i] += 1
        self.rem_machine[i] = _NONE
        self.rem_time[i] = 0.0
        if self.cur[i] >= self.jobs[i].n_ops:
            self.completion[i] = t
        else:
            self.ready_since[i] = t

    def _fail(self, k: int, t: float, duration: float) -> None:
        until = t + duration
        prev = self.m_failed_until[k]
        if prev is not None and prev >= until:
            return
        self.m_failed_until[k] = until
        heapq.heappush(self.events, (until, RECOVERY, next(_seq), ("auto", k)))
        if self.m_job[k] != _NONE:
            remaining = self.m_end[k] - t
            i = self._close_segment(k, t)
            self.rem_time[i] = remaining
            self.rem_machine[i] = k
            self.ready_since[i] = t

    def _arrive(self, e, t: float) -> None:
        if isinstance(e, int):
            self.arrived[e] = True
            self.ready_since[e] = t
            return
        i = len(self.jobs)
        self.jobs.append(make_job(i, e.ops, arrival_time=t))
        self.arrived.append(True)
        self.cur.append(0)
        self.running_on.append(_NONE)
        self.rem_time.append(0.0)
        self.rem_machine.append(_NONE)
        self.ready_since.append(t)
        self.completion.append(None)


def initial_state(instance: Instance, disturbances: Optional[DisturbanceScript] = None) -> SimState:
    return SimState(instance, disturbances)


def feasible_actions(state: SimState, instance: Optional[Instance] = None) -> list:
    """All (ready op, idle eligible machine) pairs in canonical order."""
    idle = [state.m_job[k] == _NONE and state.m_failed_until[k] is None for k in range(len(state.m_job))]
    if not any(idle):
        return []
    out = []
    jobs = state.jobs
    for i in range(len(jobs)):
        if not state.arrived[i] or state.running_on[i] != _NONE:
            continue
        j = state.cur[i]
        if j >= jobs[i].n_ops:
            continue
        for k in jobs[i].operations[j].machines:
            if idle[k]:
                out.append(Action(i, j, k))
    return out


def step(state: SimState, action: Optional[Action]) -> tuple:
    """Apply an action (start now) or a wait (``None``: jump to next event).

    Mutates ``state`` in place and returns ``(state, elapsed)``.
    """
    if action is None:
        return state, state.advance()
    state.start(action)
    return state, 0.0


# ---------------------------------------------------------------------------
# Episodes
# ---------------------------------------------------------------------------


@dataclass
class ScheduleResult:
    completion_times: list
    makespan: float
    gantt: list
    decision_count: int
    jobs: list = field(default_factory=list, repr=False)

    def processed(self) -> dict:
        """(job, op) -> list of (machine, duration) segments."""
        out: dict = {}
        for seg in self.gantt:
            out.setdefault((seg.job, seg.op), []).append((seg.machine, seg.end - seg.start))
        return out


def result_of(state: SimState) -> ScheduleResult:
    comps = list(state.completion)
    return ScheduleResult(
        completion_times=comps,
        makespan=max(comps) if comps else 0.0,
        gantt=list(state.gantt),
        decision_count=state.decision_count,
        jobs=list(state.jobs),
    )


Policy = Callable[[SimState], Optional[Action]]
Hook = Callable[[SimState, Optional[Action], float], None]


def run_episode(
    instance: Instance,
    disturbances: Optional[DisturbanceScript] = None,
    policy: Optional[Policy] = None,
    hooks: Sequence[Hook] = (),
    state: Optional[SimState] = None,
    clock=None,
) -> ScheduleResult:
    """Simulate until every (initial and arrived) job is complete.

    ``policy(state)`` returns an :class:`Action` from
    :func:`feasible_actions` or ``None`` to wait. Each hook is called with
    ``(state, action, latency_seconds)`` after every policy decision.
    Passing ``state`` continues from a snapshot (it is mutated).
    """
    import time

    if policy is None:
        raise ValueError("a policy is required")
    timer = clock or time.perf_counter
    if state is None:
        state = SimState(instance, disturbances)
    idle_waits = 0
    budget = None
    while not state.is_done():
        actions = feasible_actions(state)
        if not actions:
            if state.next_event_time() is None:
                raise SimulationError("deadlock: unfinished work but no feasible action or future event")
            state.advance()
            idle_waits = 0
            continue
        t0 = timer()
        choice = policy(state)
        latency = timer() - t0
        for hook in hooks:
            hook(state, choice, latency)
        if choice is None:
            if budget is None:
                budget = 2 * state.pending_event_count()
            idle_waits += 1
            if idle_waits > budget or state.next_event_time() is None:
                raise LivelockError(
                    f"policy kept waiting at t={state.clock} with {len(actions)} feasible actions"
                )
            state.advance()
            continue
        if choice not in actions:
            raise SimulationError(f"policy returned infeasible action {choice}")
        state.start(choice)
        idle_waits = 0
        budget = None
    return result_of(state)


# ---------------------------------------------------------------------------
# Checks and the desk-scale oracle
# ---------------------------------------------------------------------------


def check_schedule(result: ScheduleResult, tol: float = 1e-9) -> None:
    """Assert the conservation, overlap and precedence invariants."""
    comps = result.completion_times
    assert all(c is not None for c in comps), "unfinished jobs"
    assert result.makespan == max(comps)
    by_machine: dict = {}
    for seg in result.gantt:
        assert seg.end > seg.start, f"empty segment {seg}"
        by_machine.setdefault(seg.machine, []).append(seg)
    for segs in by_machine.values():
        segs.sort(key=lambda s: s.start)
        for a, b in zip(segs, segs[1:]):
            assert b.start >= a.end - tol, f"overlap on machine {a.machine}: {a} / {b}"
    processed = result.processed()
    for job in result.jobs:
        last_end = -math.inf
        for op in job.operations:
            parts = processed.get((job.id, op.op_index))
            assert parts, f"operation {job.id}.{op.op_index} never processed"
            work = sum(d / op.alternatives[k] for k, d in parts)
            assert abs(work - 1.0) <= tol, f"operation {job.id}.{op.op_index} processed fraction {work}"
            segs = [s for s in result.gantt if s.job == job.id and s.op == op.op_index]
            assert min(s.start for s in segs) >= last_end - tol, f"precedence violated in job {job.id}"
            assert min(s.start for s in segs) >= job.arrival_time - tol
            last_end = max(s.end for s in segs)
        assert abs(last_end - comps[job.id]) <= tol


class CapExceeded(ValueError):
    pass


def brute_force_search(
    instance: Instance, disturbances: Optional[DisturbanceScript] = None, cap: int = 8
) -> tuple:
    """Exhaustive search over dispatch sequences; returns ``(makespan, decisions)``.

    Every epoch branches over all feasible actions plus waiting for the next
    event, so the result is the best event-driven schedule. ``decisions`` is a
    list of actions/``None`` that replays to the optimum.
    """
    total = instance.n_ops + sum(len(e.ops) for e in (disturbances or ()) if e.kind == "arrival")
    if total > cap:
        raise CapExceeded(f"{total} operations exceed the brute-force cap of {cap}")
    memo: dict = {}

    def solve(state: SimState):
        while True:
            if state.is_done():
                return max(state.completion) if state.completion else 0.0, []
            actions = feasible_actions(state)
            if actions:
                break
            state.advance()
        key = state.signature()
        hit = memo.get(key)
        if hit is not None:
            return hit
        best = (math.inf, None)
        branches = list(actions)
        if state.next_event_time() is not None:
            branches.append(None)
        for a in branches:
            child = state.copy()
            if a is None:
                child.advance()
            else:
                child.start(a)
            value, tail = solve(child)
            if value < best[0]:
                best = (value, [a] + tail)
        memo[key] = best
        return best

    value, seq = solve(SimState(instance, disturbances))
    return value, seq


def brute_force_best(instance: Instance, disturbances: Optional[DisturbanceScript] = None, cap: int = 8) -> float:
    return brute_force_search(instance, disturbances, cap)[0]


def replay_policy(decisions: Sequence[Optional[Action]]) -> Policy:
    """Policy that plays back a fixed decision list (e.g. from the oracle)."""
    it = iter(decisions)

    def policy(state):
        return next(it)

    return policy
