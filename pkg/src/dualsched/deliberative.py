"""Background rule evolution: trigger, propose, sandbox-screen, swap.

A deliberation cycle summarizes the observation window, retrieves similar
rules from the repository, asks a proposer backend for a directive and a
candidate rule, validates the candidate syntactically, replays it against the
incumbent on a shared evaluation pool, and lets the backend's reflector decide
whether to try again. Only candidates whose sandbox statistics clear every
threshold may be deployed, and only through :func:`swap_rule`.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import logging
import math
import os
import random
import socket
import statistics
import threading
import urllib.error
import urllib.request
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional, Sequence

from .core import (
    DisturbanceScript,
    GeneratorParams,
    Instance,
    Job,
    Operation,
    SimState,
    generate_instance,
    run_episode,
)
from .reactive import (
    ActiveRuleHandle,
    ObservationWindow,
    ReactiveDispatcher,
    StaticPolicy,
    SummaryProfile,
    summarize,
    swap_rule,
)
from .repository import MetaFeatures, RetrievalConfig, RuleRepository
from .rules import (
    BUILTIN_SOURCES,
    FEATURES,
    BinOp,
    Call,
    CompiledRule,
    Expr,
    Feature,
    Neg,
    Num,
    RuleCompiler,
    RuleError,
    parse_rule,
    to_source,
    validate_rule,
    walk,
)

log = logging.getLogger(__name__)

OBJECTIVE = "minimize makespan"


# ---------------------------------------------------------------------------
# Triggers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TriggerConfig:
    trigger_period: int = 50
    history_len: int = 10
    epsilon: float = 0.05

    def __post_init__(self):
        if self.trigger_period < 1 or self.history_len < 1 or not self.epsilon > 0:
            raise ValueError(f"invalid trigger config {self}")


class TriggerResult(NamedTuple):
    periodic: bool
    perf: bool

    @property
    def fired(self) -> bool:
        return self.periodic or self.perf


def check_trigger(t: int, metric_history: Sequence[float], config: TriggerConfig = TriggerConfig()) -> TriggerResult:
    """Periodic (every ``trigger_period`` epochs) or relative-drop trigger.

    The drop is measured against the best of the last ``history_len``
    samples; a best value within 1e-9 of zero uses denominator 1.
    """
    if not metric_history:
        raise ValueError("metric history needs at least one sample")
    periodic = t % config.trigger_period == 0
    recent = list(metric_history)[-config.history_len:]
    best = max(recent)
    current = recent[-1]
    denom = abs(best) if abs(best) > 1e-9 else 1.0
    perf = (best - current) / denom >= config.epsilon
    return TriggerResult(periodic, perf)


# ---------------------------------------------------------------------------
# Sandbox statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ValidationThresholds:
    eps_rel: float = 0.01
    d_min: float = 0.2
    t_alpha: float = 1.645
    n: int = 5

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least two episodes per arm")
        if not all(math.isfinite(x) for x in (self.eps_rel, self.d_min, self.t_alpha)):
            raise ValueError("thresholds must be finite")


@dataclass
class ValidationReport:
    mean_old: float
    mean_cand: float
    r: float
    d_t: float
    var_old: float
    var_cand: float
    pooled_var: float
    d_eff: float
    t_stat: float
    n: int
    accepted: bool
    feasibility_failures: int = 0
    y_old: list = field(default_factory=list)
    y_cand: list = field(default_factory=list)
    fingerprint_old: str = ""
    fingerprint_cand: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


DEGENERATE_VAR = 1e-12


def compare_samples(y_old: Sequence[float], y_cand: Sequence[float],
                    thresholds: ValidationThresholds = ValidationThresholds(),
                    feasibility_failures: int = 0) -> ValidationReport:
    """Screening statistics for a minimization objective.

    Relative improvement of the candidate mean over the incumbent mean,
    pooled-variance effect size and the equal-n two-sample t statistic.
    With (near) zero pooled variance, effect size and t are +inf when the
    candidate is strictly better and 0 otherwise.
    """
    n = len(y_old)
    if n != len(y_cand):
        raise ValueError("both arms must have the same number of episodes")
    if n < 2:
        raise ValueError("need at least two episodes per arm")
    mu_old = statistics.fmean(y_old)
    mu_cand = statistics.fmean(y_cand)
    d_t = abs(mu_old) if abs(mu_old) > 1e-9 else 1.0
    r = (mu_old - mu_cand) / d_t
    var_old = statistics.variance(y_old)
    var_cand = statistics.variance(y_cand)
    pooled = ((n - 1) * var_old + (n - 1) * var_cand) / (2 * n - 2)
    diff = mu_old - mu_cand
    if pooled < DEGENERATE_VAR:
        d_eff = t_stat = math.inf if mu_old > mu_cand else 0.0
    else:
        d_eff = diff / math.sqrt(pooled)
        t_stat = diff / math.sqrt(var_old / n + var_cand / n)
    accepted = (
        feasibility_failures == 0
        and r >= thresholds.eps_rel
        and d_eff >= thresholds.d_min
        and t_stat >= thresholds.t_alpha
    )
    return ValidationReport(mu_old, mu_cand, r, d_t, var_old, var_cand, pooled, d_eff, t_stat, n,
                            accepted, feasibility_failures, list(y_old), list(y_cand))


# ---------------------------------------------------------------------------
# Evaluation pools
# ---------------------------------------------------------------------------


class SandboxError(RuntimeError):
    """The incumbent failed in the sandbox; it is assumed to be sound."""


@dataclass(frozen=True, eq=False)
class EvalCase:
    instance: Instance
    disturbances: Optional[DisturbanceScript]
    seed: int
    state: Optional[SimState] = None

    def fingerprint(self) -> str:
        from .core import format_disturbances, format_fjs

        h = hashlib.sha256()
        h.update(format_fjs(self.instance).encode())
        if self.disturbances is not None:
            h.update(format_disturbances(self.disturbances).encode())
        h.update(str(self.seed).encode())
        if self.state is not None:
            h.update(repr(self.state.signature()).encode())
        return h.hexdigest()[:16]

    def run(self, rule: CompiledRule) -> float:
        state = self.state.copy() if self.state is not None else None
        return run_episode(self.instance, self.disturbances, StaticPolicy(rule), state=state).makespan


def pool_fingerprint(pool: Sequence[EvalCase]) -> str:
    h = hashlib.sha256()
    for case in pool:
        h.update(case.fingerprint().encode())
    return h.hexdigest()[:16]


def _jitter_op(op: Operation, rng: random.Random, amount: float) -> Operation:
    alts = {k: p * rng.uniform(1.0 - amount, 1.0 + amount) for k, p in sorted(op.alternatives.items())}
    return Operation(op.job_id, op.op_index, alts)


def jitter_instance(instance: Instance, rng: random.Random, amount: float) -> Instance:
    jobs = tuple(
        Job(job.id, tuple(_jitter_op(op, rng, amount) for op in job.operations), job.arrival_time)
        for job in instance.jobs
    )
    return Instance(jobs, instance.n_machines, instance.name)


def build_eval_pool(instance: Instance, disturbances: Optional[DisturbanceScript], n: int, seed: int = 0,
                    mode: str = "jitter", jitter: float = 0.1) -> list:
    """``n`` seeded replay cases around ``instance``.

    ``mode="jitter"``: the instance itself first, then copies whose processing
    times are perturbed by up to ``jitter`` (relative). ``mode="generate"``:
    fresh instances with the same job/machine counts and ranges.
    """
    cases = []
    if mode == "jitter":
        for s in range(n):
            inst = instance if s == 0 or jitter == 0 else jitter_instance(instance, random.Random(seed * 1000 + s), jitter)
            cases.append(EvalCase(inst, disturbances, seed * 1000 + s))
    elif mode == "generate":
        ops = [job.n_ops for job in instance.jobs]
        flex = [len(op.alternatives) for job in instance.jobs for op in job.operations]
        times = [p for job in instance.jobs for op in job.operations for p in op.alternatives.values()]
        params = GeneratorParams(
            instance.n_jobs, instance.n_machines, (min(ops), max(ops)), (min(flex), max(flex)),
            (max(1, int(min(times))), max(1, int(math.ceil(max(times))))),
        )
        for s in range(n):
            cases.append(EvalCase(generate_instance(params, seed * 1000 + s), disturbances, seed * 1000 + s))
    else:
        raise ValueError(f"unknown pool mode {mode!r}")
    return cases


def _forget_future(state: SimState) -> SimState:
    """Drop scripted events that have not happened yet (the sandbox cannot know them).

    Repairs of machines that are already down and planned releases of
    instance jobs stay, since both are known at the decision time.
    """
    kept = [e for e in state.events if isinstance(e[3], (tuple, int))]
    heapq.heapify(kept)
    state.events = kept
    return state


def continuation_pool(state: SimState, instance: Instance, n: int, seed: int = 0, jitter: float = 0.1) -> list:
    """Replay cases that continue from a live snapshot.

    Case 0 is the snapshot itself; the others perturb the processing times of
    operations that have not started yet.
    """
    base = _forget_future(state.copy())
    cases = [EvalCase(instance, None, seed * 1000, base)]
    for s in range(1, n):
        rng = random.Random(seed * 1000 + s)
        snap = base.copy()
        if jitter > 0:
            for i, job in enumerate(snap.jobs):
                fixed = snap.cur[i] + (1 if (snap.running_on[i] != -1 or snap.rem_machine[i] != -1) else 0)
                ops = tuple(op if j < fixed else _jitter_op(op, rng, jitter) for j, op in enumerate(job.operations))
                snap.jobs[i] = Job(job.id, ops, job.arrival_time)
        cases.append(EvalCase(instance, None, seed * 1000 + s, snap))
    return cases


def validate_candidate(rule_old: CompiledRule, rule_cand: CompiledRule, eval_pool: Sequence[EvalCase],
                       thresholds: ValidationThresholds = ValidationThresholds()) -> ValidationReport:
    """Replay both rules on the same cases and screen the candidate."""
    y_old, y_cand = [], []
    failures = 0
    for case in eval_pool:
        try:
            y_old.append(case.run(rule_old))
        except Exception as exc:
            raise SandboxError(f"incumbent failed on case {case.seed}: {exc}") from exc
        try:
            value = case.run(rule_cand)
            if not math.isfinite(value):
                raise ValueError("non-finite objective")
            y_cand.append(value)
        except Exception as exc:
            log.info("candidate failed on case %s: %s", case.seed, exc)
            failures += 1
            y_cand.append(y_old[-1])
    report = compare_samples(y_old, y_cand, thresholds, failures)
    fp = pool_fingerprint(eval_pool)
    report.fingerprint_old = fp
    report.fingerprint_cand = fp
    return report


# ---------------------------------------------------------------------------
# Proposer backends
# ---------------------------------------------------------------------------


class BackendError(RuntimeError):
    pass


class ProtocolError(BackendError):
    pass


@dataclass
class Directive:
    text: str
    target_features: list = field(default_factory=list)
    bottleneck: Optional[int] = None

    def __post_init__(self):
        if not self.text:
            raise ValueError("directive must be non-empty")


@dataclass
class ReflectorNote:
    text: str
    cont: bool
    report: Optional[ValidationReport] = None


class ProposerBackend:
    """Interface for the planner / coder / reflector trio."""

    def plan(self, profile: SummaryProfile, objective: str = OBJECTIVE) -> Directive:
        raise NotImplementedError

    def synthesize(self, directive: Directive, current_rule: str, retrieved: Sequence = ()) -> str:
        raise NotImplementedError

    def reflect(self, report: ValidationReport, candidate: str) -> ReflectorNote:
        raise NotImplementedError


def _verdict_text(report: ValidationReport, candidate: str) -> str:
    verdict = "accepted" if report.accepted else "rejected"
    return (f"{verdict} {candidate!r}: mean {report.mean_old:.3f} -> {report.mean_cand:.3f}, "
            f"r={report.r:.4f}, d_eff={report.d_eff:.3f}, T={report.t_stat:.3f}, "
            f"failures={report.feasibility_failures}")


def _replace_at(node: Expr, target: int, new: Expr, counter=None) -> Expr:
    """Copy of ``node`` with its ``target``-th pre-order subtree replaced."""
    if counter is None:
        counter = [0]
    idx = counter[0]
    counter[0] += 1
    if idx == target:
        return new
    if isinstance(node, Neg):
        return Neg(_replace_at(node.operand, target, new, counter))
    if isinstance(node, BinOp):
        left = _replace_at(node.left, target, new, counter)
        return BinOp(node.op, left, _replace_at(node.right, target, new, counter))
    if isinstance(node, Call):
        return Call(node.func, tuple(_replace_at(a, target, new, counter) for a in node.args))
    if hasattr(node, "left"):
        left = _replace_at(node.left, target, new, counter)
        return type(node)(node.op, left, _replace_at(node.right, target, new, counter))
    return node


class MockProposer(ProposerBackend):
    """Deterministic offline stand-in for a language-model proposer.

    ``synthesize`` first offers retrieved rules verbatim (warm start), then
    applies seeded structural mutations to the incumbent: swap a feature,
    wrap in min/max with another feature, negate a subterm, add a weighted
    feature term, splice a fragment from a retrieved rule, or jump to a
    classical rule.
    """

    MUTATIONS = ("swap_feature", "wrap_minmax", "negate", "add_term", "splice", "classic")

    def __init__(self, seed: int = 0, mutations: Sequence[str] = MUTATIONS, use_retrieved_first: bool = True):
        self.rng = random.Random(seed)
        self.mutations = tuple(mutations)
        self.use_retrieved_first = use_retrieved_first
        self._offered = set()
        self.calls = {"plan": 0, "synthesize": 0, "reflect": 0}

    def plan(self, profile, objective=OBJECTIVE):
        self.calls["plan"] += 1
        b = getattr(profile, "bottleneck", None)
        target = self.rng.choice(FEATURES)
        where = f"bottleneck machine {b + 1}" if b is not None else "the shop"
        text = f"rebalance priority around {where}; emphasize {target} to {objective}"
        return Directive(text, [target], b)

    def synthesize(self, directive, current_rule, retrieved=()):
        self.calls["synthesize"] += 1
        sources = [getattr(r, "rule_source", r) for r in retrieved]
        if self.use_retrieved_first:
            for src in sources:
                if src != current_rule and src not in self._offered:
                    self._offered.add(src)
                    return src
        try:
            tree = parse_rule(current_rule)
        except RuleError:
            tree = Neg(Feature("op_proc_time"))
        kinds = [m for m in self.mutations if m != "splice" or sources]
        kind = self.rng.choice(kinds)
        return to_source(self.mutate(tree, kind, directive, sources))

    def mutate(self, tree: Expr, kind: str, directive: Optional[Directive] = None, sources=()) -> Expr:
        rng = self.rng
        hint = directive.target_features if directive and directive.target_features else list(FEATURES)
        nodes = list(walk(tree))
        if kind == "swap_feature":
            leaves = [i for i, n in enumerate(nodes) if isinstance(n, Feature)]
            if not leaves:
                return BinOp("+", tree, Feature(rng.choice(hint)))
            idx = rng.choice(leaves)
            others = [f for f in FEATURES if f != nodes[idx].name]
            pick = rng.choice([f for f in hint if f in others] or others)
            return _replace_at(tree, idx, Feature(pick))
        if kind == "wrap_minmax":
            func = rng.choice(("min", "max"))
            other = Feature(rng.choice(hint))
            if rng.random() < 0.5:
                other = Neg(other)
            return Call(func, (tree, other))
        if kind == "negate":
            idx = rng.randrange(len(nodes))
            sub = nodes[idx]
            return _replace_at(tree, idx, sub.operand if isinstance(sub, Neg) else Neg(sub))
        if kind == "add_term":
            weight = Num(rng.choice((0.1, 0.25, 0.5, 1.0, 2.0)))
            term = BinOp("*", weight, Feature(rng.choice(hint)))
            return BinOp(rng.choice("+-"), tree, term)
        if kind == "splice":
            donor = parse_rule(rng.choice(list(sources)))
            frag = rng.choice(list(walk(donor)))
            if rng.random() < 0.5:
                return BinOp("+", tree, frag)
            return _replace_at(tree, rng.randrange(len(nodes)), frag)
        if kind == "classic":
            return parse_rule(rng.choice(sorted(BUILTIN_SOURCES.values())))
        raise ValueError(f"unknown mutation {kind!r}")

    def reflect(self, report, candidate):
        self.calls["reflect"] += 1
        return ReflectorNote(_verdict_text(report, candidate), cont=not report.accepted, report=report)


class ScriptedProposer(ProposerBackend):
    """Proposes a fixed sequence of rule texts (cycling); useful for tests."""

    def __init__(self, rules: Sequence[str], keep_going: bool = True):
        self.rules = list(rules)
        self.keep_going = keep_going
        self.i = 0
        self.calls = {"plan": 0, "synthesize": 0, "reflect": 0}

    def plan(self, profile, objective=OBJECTIVE):
        self.calls["plan"] += 1
        return Directive("scripted proposal")

    def synthesize(self, directive, current_rule, retrieved=()):
        self.calls["synthesize"] += 1
        text = self.rules[self.i % len(self.rules)]
        self.i += 1
        return text

    def reflect(self, report, candidate):
        self.calls["reflect"] += 1
        return ReflectorNote(_verdict_text(report, candidate), cont=self.keep_going and not report.accepted,
                             report=report)


ENDPOINT_ENV = "DUALSCHED_PROPOSER_URL"
TOKEN_ENV = "DUALSCHED_PROPOSER_TOKEN"


def _jsonable(obj):
    if hasattr(obj, "to_dict"):
        obj = obj.to_dict()
    return json.loads(json.dumps(obj, default=lambda o: getattr(o, "__dict__", str(o))))


class RemoteProposer(ProposerBackend):
    """JSON-over-HTTP proposer.

    Every call POSTs ``{phase, profile, objective, current_rule,
    retrieved_rules, report}`` and expects ``directive``, ``rule`` or
    ``note``/``continue`` back depending on the phase. The returned rule text
    is untrusted; the cycle validates it like any other candidate.
    """

    def __init__(self, endpoint: Optional[str] = None, token: Optional[str] = None, timeout: float = 120.0):
        self.endpoint = endpoint or os.environ.get(ENDPOINT_ENV)
        if not self.endpoint:
            raise BackendError(f"no proposer endpoint configured (set {ENDPOINT_ENV})")
        self.token = token if token is not None else os.environ.get(TOKEN_ENV)
        self.timeout = timeout
        self._profile = None
        self._retrieved = []
        self._current = ""

    def _post(self, body: dict) -> dict:
        data = json.dumps(body).encode("utf-8")
        req = urllib.request.Request(self.endpoint, data=data, method="POST",
                                     headers={"Content-Type": "application/json"})
        if self.token:
            req.add_header("Authorization", f"Bearer {self.token}")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = resp.read()
        except (socket.timeout, TimeoutError) as exc:
            raise BackendError(f"proposer timed out after {self.timeout}s") from exc
        except urllib.error.URLError as exc:
            if isinstance(getattr(exc, "reason", None), (socket.timeout, TimeoutError)):
                raise BackendError(f"proposer timed out after {self.timeout}s") from exc
            raise BackendError(f"proposer unreachable: {exc}") from exc
        except OSError as exc:
            raise BackendError(f"proposer unreachable: {exc}") from exc
        try:
            out = json.loads(payload)
        except ValueError as exc:
            raise ProtocolError("response is not JSON") from exc
        if not isinstance(out, dict):
            raise ProtocolError("response must be a JSON object")
        return out

    def _body(self, phase: str, report=None) -> dict:
        return {
            "phase": phase,
            "profile": _jsonable(self._profile) if self._profile is not None else None,
            "objective": OBJECTIVE,
            "current_rule": self._current,
            "retrieved_rules": [
                {"rule": e.rule_source, "value": e.value,
                 "meta": {"n_jobs": e.meta.n_jobs, "n_machines": e.meta.n_machines}}
                for e in self._retrieved if hasattr(e, "rule_source")
            ],
            "report": _jsonable(report) if report is not None else None,
        }

    def plan(self, profile, objective=OBJECTIVE):
        self._profile = profile
        self._current = getattr(profile, "rule_source", "")
        out = self._post(self._body("plan"))
        text = out.get("directive")
        if not isinstance(text, str) or not text:
            raise ProtocolError("plan response lacks a 'directive' string")
        return Directive(text)

    def synthesize(self, directive, current_rule, retrieved=()):
        self._current = current_rule
        self._retrieved = list(retrieved)
        body = self._body("synthesize")
        body["directive"] = directive.text
        out = self._post(body)
        rule = out.get("rule")
        if not isinstance(rule, str):
            raise ProtocolError("synthesize response lacks a 'rule' string")
        return rule

    def reflect(self, report, candidate):
        body = self._body("reflect", report)
        body["candidate"] = candidate
        out = self._post(body)
        if "continue" not in out:
            raise ProtocolError("reflect response lacks 'continue'")
        return ReflectorNote(str(out.get("note", "")), bool(out["continue"]), report)


def remote_proposer(endpoint: Optional[str] = None, timeout: float = 120.0) -> RemoteProposer:
    return RemoteProposer(endpoint, timeout=timeout)


def mock_proposer(seed: int = 0) -> MockProposer:
    return MockProposer(seed)


# ---------------------------------------------------------------------------
# Trajectory log
# ---------------------------------------------------------------------------


def _digest(obj) -> str:
    text = obj if isinstance(obj, str) else json.dumps(_jsonable(obj), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:12]


class TrajectoryLog:
    """Line-delimited record per cycle step; optionally mirrored to a file."""

    def __init__(self, path=None):
        self.records = []
        self.path = path
        self._lock = threading.Lock()

    def add(self, cycle: int, phase: str, inp, out, verdict: str = "", **extra) -> dict:
        rec = {"cycle": cycle, "phase": phase, "input": _digest(inp), "output": _digest(out), "verdict": verdict}
        rec.update(extra)
        with self._lock:
            self.records.append(rec)
            if self.path:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec) + "\n")
        return rec

    def notes(self) -> list:
        return [r for r in self.records if r["phase"] == "reflect"]


# ---------------------------------------------------------------------------
# The cycle
# ---------------------------------------------------------------------------


@dataclass
class CycleOutcome:
    status: str  # "accepted" | "rejected" | "backend_error"
    version: Optional[int] = None
    rule: Optional[CompiledRule] = None
    report: Optional[ValidationReport] = None
    iterations: int = 0
    candidates: list = field(default_factory=list)  # (source or raw text, verdict)
    error: str = ""


_cycle_ids = iter(range(1, 1 << 62))
_cycle_lock = threading.Lock()


def deliberation_cycle(
    handle: ActiveRuleHandle,
    window: ObservationWindow,
    repository: Optional[RuleRepository],
    backend: ProposerBackend,
    thresholds: ValidationThresholds,
    eval_pool: Sequence[EvalCase],
    meta: Optional[MetaFeatures] = None,
    max_iters: int = 3,
    retrieval: RetrievalConfig = RetrievalConfig(),
    lam_complexity: float = 0.05,
    compiler: Optional[RuleCompiler] = None,
    trajectory: Optional[TrajectoryLog] = None,
    benchmark: str = "",
    gate=None,
) -> CycleOutcome:
    """One planner -> coder -> validator -> reflector loop.

    ``repository=None`` disables retrieval and insertion. ``gate(rule,
    report)`` is called right before a swap (instrumentation hook).
    """
    with _cycle_lock:
        cycle_id = next(_cycle_ids)
    trajectory = trajectory if trajectory is not None else TrajectoryLog()
    compiler = compiler or RuleCompiler()
    incumbent = handle.rule
    profile = summarize(window)
    retrieved = repository.retrieve(meta, retrieval) if (repository is not None and meta is not None) else []
    outcome = CycleOutcome("rejected")
    accepted = []
    for it in range(max_iters):
        outcome.iterations = it + 1
        try:
            directive = backend.plan(profile, OBJECTIVE)
            trajectory.add(cycle_id, "plan", profile, directive.text)
            text = backend.synthesize(directive, incumbent.source, retrieved)
        except Exception as exc:
            trajectory.add(cycle_id, "backend", "", str(exc), "backend_error")
            return CycleOutcome("backend_error", iterations=it + 1, candidates=outcome.candidates, error=str(exc))
        try:
            candidate = compiler.validate(text)
        except RuleError as exc:
            outcome.candidates.append((text if isinstance(text, str) else repr(text), exc.reason))
            trajectory.add(cycle_id, "syntax", directive.text, str(text), f"rejected:{exc.reason}")
            continue
        trajectory.add(cycle_id, "synthesize", directive.text, candidate.source, "valid")
        report = validate_candidate(incumbent, candidate, eval_pool, thresholds)
        verdict = "accepted" if report.accepted else "rejected"
        outcome.candidates.append((candidate.source, verdict))
        try:
            note = backend.reflect(report, candidate.source)
        except Exception as exc:
            note = ReflectorNote(f"reflector unavailable: {exc}", False, report)
        trajectory.add(cycle_id, "reflect", report.to_dict(), note.text, verdict,
                       r=report.r, rule=candidate.source)
        if report.accepted:
            accepted.append((candidate, report))
        if not note.cont:
            break
    if not accepted:
        return outcome
    best_rule, best_report = max(
        accepted, key=lambda cr: cr[1].r - lam_complexity * math.log1p(cr[0].complexity.score)
    )
    assert best_report.accepted and best_report.feasibility_failures == 0
    if gate is not None:
        gate(best_rule, best_report)
    prev = swap_rule(handle, best_rule, best_report)
    trajectory.add(cycle_id, "deploy", best_rule.source, str(prev + 1), "accepted", version=prev + 1)
    if repository is not None and meta is not None:
        repository.insert(meta, best_rule, best_report.r, benchmark, prev + 1)
    outcome.status = "accepted"
    outcome.version = prev + 1
    outcome.rule = best_rule
    outcome.report = best_report
    return outcome


# ---------------------------------------------------------------------------
# Background worker and the dual-stream scheduler
# ---------------------------------------------------------------------------


class DeliberativeWorker:
    """Runs at most one cycle at a time on a background thread.

    Requests arriving while a cycle is in flight are coalesced (dropped and
    counted).
    """

    def __init__(self):
        self._busy = threading.Lock()
        self._thread = None
        self.coalesced = 0
        self.results = []
        self.errors = []

    @property
    def busy(self) -> bool:
        return self._busy.locked()

    def submit(self, fn) -> bool:
        if not self._busy.acquire(blocking=False):
            self.coalesced += 1
            return False

        def run():
            try:
                self.results.append(fn())
            except Exception as exc:
                log.exception("deliberation cycle failed")
                self.errors.append(exc)
            finally:
                self._busy.release()

        self._thread = threading.Thread(target=run, name="deliberation", daemon=True)
        self._thread.start()
        return True

    def join(self, timeout: Optional[float] = None) -> None:
        if self._thread is not None:
            self._thread.join(timeout)


@dataclass
class AdaptiveConfig:
    trigger: TriggerConfig = TriggerConfig()
    thresholds: ValidationThresholds = ValidationThresholds()
    retrieval: RetrievalConfig = RetrievalConfig()
    max_iters: int = 3
    use_repository: bool = True
    serialized: bool = True
    warm_start: bool = True
    cooldown: Optional[int] = None  # min epochs between cycles; default history_len
    pool_jitter: float = 0.1
    lam_complexity: float = 0.05
    seed: int = 0
    window_size: int = 50


class AdaptiveScheduler:
    """Reactive dispatcher plus the deliberative loop around it.

    In serialized mode a triggered cycle runs inline at the triggering
    epoch (reproducible); otherwise it runs on a :class:`DeliberativeWorker`
    while dispatch continues with the incumbent rule.
    """

    def __init__(self, initial_rule, backend: ProposerBackend, repository: Optional[RuleRepository] = None,
                 config: AdaptiveConfig = AdaptiveConfig(), trajectory: Optional[TrajectoryLog] = None,
                 benchmark: str = "", gate=None):
        self.initial_rule = initial_rule if isinstance(initial_rule, CompiledRule) else validate_rule(initial_rule)
        self.backend = backend
        self.config = config
        self.repository = repository if config.use_repository else None
        self.trajectory = trajectory if trajectory is not None else TrajectoryLog()
        self.benchmark = benchmark
        self.gate = gate
        self.outcomes = []
        self.swap_times = []
        self.cycles_started = 0

    def run(self, instance: Instance, disturbances: Optional[DisturbanceScript] = None):
        cfg = self.config
        self.handle = ActiveRuleHandle(self.initial_rule)
        self.window = ObservationWindow(cfg.window_size, cfg.trigger.history_len)
        self.worker = DeliberativeWorker()
        self.meta = MetaFeatures.of(instance)
        self._instance = instance
        self._last_cycle_epoch = None
        self.dispatcher = ReactiveDispatcher(self.handle, self.window, on_decision=self._on_decision)
        try:
            result = run_episode(instance, disturbances, self.dispatcher)
        finally:
            self.worker.join()
        return result

    def _on_decision(self, epoch: int, metric: float, state: SimState) -> None:
        cfg = self.config
        fired = check_trigger(epoch, self.window.metric_history, cfg.trigger).fired
        if cfg.warm_start and epoch == 1:
            fired = True
        if not fired:
            return
        cooldown = cfg.cooldown if cfg.cooldown is not None else cfg.trigger.history_len
        if self._last_cycle_epoch is not None and epoch - self._last_cycle_epoch < cooldown:
            return
        if self.worker.busy:
            self.worker.coalesced += 1
            return
        self._last_cycle_epoch = epoch
        self.cycles_started += 1
        pool = continuation_pool(state, self._instance, cfg.thresholds.n, cfg.seed + self.cycles_started,
                                 cfg.pool_jitter)
        window = self.window.copy()
        clock = state.clock

        def cycle():
            out = deliberation_cycle(
                self.handle, window, self.repository, self.backend, cfg.thresholds, pool, self.meta,
                max_iters=cfg.max_iters, retrieval=cfg.retrieval, lam_complexity=cfg.lam_complexity,
                trajectory=self.trajectory, benchmark=self.benchmark, gate=self.gate,
            )
            self.outcomes.append(out)
            if out.status == "accepted":
                self.swap_times.append(clock)
            return out

        if cfg.serialized:
            cycle()
        else:
            self.worker.submit(cycle)
