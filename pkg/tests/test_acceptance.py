"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""

import dataclasses
import math
import random
import sys
import threading
import time

import numpy as np
import pytest
from scipy import stats

import conftest
from conftest import GateRecorder, gen
from dualsched.core import (
    brute_force_search,
    failure,
    feasible_actions,
    initial_state,
    instance_from_lists,
    replay_policy,
    run_episode,
    script,
    step,
)
from dualsched.deliberative import (
    AdaptiveConfig,
    AdaptiveScheduler,
    Directive,
    ProposerBackend,
    ReflectorNote,
    TriggerConfig,
    compare_samples,
)
from dualsched.harness import BenchConfig, run_ablation, run_latency, run_stress
from dualsched.reactive import ActiveRuleHandle, ReactiveDispatcher, StaticPolicy, select_action, swap_rule
from dualsched.repository import MetaFeatures, RepoEntry, RetrievalConfig, RuleRepository, distance, retrieve, score
from dualsched.rules import FEATURES, BinOp, Call, Compare, Feature, Neg, Num, builtin_rules, to_source, validate_rule


@pytest.fixture
def criterion(request, capsys):
    """Prints ``PASS``/``FAIL`` for the calling test, even if it raises."""
    label = request.node.name.replace("test_", "", 1)
    state = {"done": False}

    def check(ok, detail=""):
        state["done"] = True
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {label}: {detail}")
        assert ok, detail

    yield check
    if not state["done"]:
        with capsys.disabled():
            print(f"\nFAIL {label}: raised before reaching its check")


def test_c01_validator_arithmetic(criterion):
    t0 = time.perf_counter()
    y_old, y_cand = [12.0, 10.0, 14.0], [10.0, 8.0, 12.0]
    rep = compare_samples(y_old, y_cand)
    # independent reference
    a, b = np.array(y_old), np.array(y_cand)
    r = (a.mean() - b.mean()) / abs(a.mean())
    sp2 = ((len(a) - 1) * a.var(ddof=1) + (len(b) - 1) * b.var(ddof=1)) / (len(a) + len(b) - 2)
    d = (a.mean() - b.mean()) / math.sqrt(sp2)
    t_ref = stats.ttest_ind(a, b).statistic
    got = (rep.r, rep.pooled_var, rep.d_eff, rep.t_stat)
    ref = (r, sp2, d, t_ref)
    fixed = (0.166667, 4.0, 1.0, 1.224745)
    elapsed = time.perf_counter() - t0
    ok = (all(abs(g - x) <= 1e-6 for g, x in zip(got, ref))
          and all(abs(g - x) <= 1e-6 for g, x in zip(got, fixed))
          and elapsed < 1.0)
    criterion(ok, f"r={rep.r:.6f} sp2={rep.pooled_var:g} d={rep.d_eff:g} T={rep.t_stat:.6f} in {elapsed:.3f}s")


def test_c02_zero_mean_guard(criterion):
    rep = compare_samples([0.0, 0.0, 0.0], [-1.0, -1.0, -1.0])
    ok = rep.d_t == 1.0 and rep.r == 1.0 and abs(rep.mean_old) <= 1e-9
    criterion(ok, f"d_t={rep.d_t} r={rep.r}")


def test_c03_oracle_equivalence(criterion):
    t0 = time.perf_counter()
    rules = builtin_rules()
    checked, problems = 0, []
    for seed in range(24):
        inst = gen(3 + seed % 2, 2, seed, ops=(1, 2), flex=(1, 2))
        best, seq = brute_force_search(inst, cap=8)
        if run_episode(inst, None, replay_policy(seq)).makespan != best:
            problems.append(f"seed {seed}: oracle sequence does not replay")
        for name, rule in rules.items():
            m = run_episode(inst, None, StaticPolicy(rule)).makespan
            if m < best:
                problems.append(f"seed {seed}: {name} {m} < {best}")
        checked += 1
    elapsed = time.perf_counter() - t0
    ok = checked >= 20 and not problems and elapsed < 60
    criterion(ok, f"{checked} instances in {elapsed:.1f}s; {problems[:3] or 'no violations'}")


def _dyadic_instance(rng):
    # processing times are powers of two so migration ratios are exact
    n_m = rng.randint(2, 3)
    jobs = []
    for _ in range(rng.randint(2, 5)):
        ops = []
        for _ in range(rng.randint(1, 3)):
            ms = rng.sample(range(n_m), rng.randint(1, n_m))
            ops.append({m: float(rng.choice([1, 2, 4, 8])) for m in ms})
        jobs.append(ops)
    return instance_from_lists(jobs, n_m)


def test_c04_preempt_resume_conservation(criterion):
    rng = random.Random(2024)
    rules = list(builtin_rules().values())
    bad, interrupted = [], 0
    for trial in range(1000):
        inst = _dyadic_instance(rng)
        events = []
        t = 0.0
        for _ in range(rng.randint(1, 3)):
            t += rng.randint(0, 24) / 4
            events.append(failure(t, rng.randrange(inst.n_machines), rng.randint(1, 24) / 4))
            t += events[-1].duration
        res = run_episode(inst, script(events), StaticPolicy(rng.choice(rules)))
        for (j, o), segs in res.processed().items():
            alts = inst.jobs[j].operations[o].alternatives
            if len(segs) > 1:
                interrupted += 1
            machines = {m for m, _ in segs}
            if len(machines) == 1:
                m = segs[0][0]
                total = sum(d for _, d in segs)
                if total != alts[m]:
                    bad.append((trial, j, o, total, alts[m]))
            elif sum(d / alts[m] for m, d in segs) != 1.0:
                bad.append((trial, j, o, segs))
    ok = not bad and interrupted > 0
    criterion(ok, f"1000 injections, {interrupted} interrupted operations, {len(bad)} mismatches {bad[:2]}")


def test_c05_hot_swap_atomicity(criterion):
    inst = gen(8, 3, 5, ops=(2, 3), flex=(1, 3))
    tags = threading.local()

    def tagged(src, tag):
        rule = validate_rule(src)

        def fn(feats, _inner=rule.fn):
            tags.seen.add(tag)
            return _inner(feats)

        return dataclasses.replace(rule, fn=fn)

    pool = [tagged(f"-op_proc_time + {k}", k) for k in range(7)] + [tagged(f"job_wait_time - {k}", 10 + k)
                                                                     for k in range(7)]
    tag_of = {r.source: tag for r, tag in zip(pool, list(range(7)) + list(range(10, 17)))}
    handle = ActiveRuleHandle(pool[0])
    n_swaps = 300
    started = threading.Event()

    def swapper():
        rng = random.Random(1)
        started.wait()
        for _ in range(n_swaps):
            swap_rule(handle, rng.choice(pool))
            time.sleep(0.0002)

    observed = []

    class Probe(ReactiveDispatcher):
        def __call__(self, state):
            tags.seen = set()
            choice = super().__call__(state)
            observed.append((self.log[-1].version, frozenset(tags.seen)))
            return choice

    th = threading.Thread(target=swapper)
    th.start()
    started.set()
    while th.is_alive() or len(observed) < 10_000:
        run_episode(inst, None, Probe(handle, keep_log=True))
    th.join()
    source_at = {v: src for v, src, _ in handle.history}
    versions = [v for v, _ in observed]
    monotone = all(a <= b for a, b in zip(versions, versions[1:]))
    torn = [(v, s) for v, s in observed if s and s != {tag_of[source_at[v]]}]
    distinct = len(set(versions))
    ok = len(observed) >= 10_000 and handle.version - 1 >= 100 and monotone and not torn and distinct > 1
    criterion(ok, f"{len(observed)} dispatches, {handle.version - 1} swaps, {distinct} versions seen, "
                  f"monotone={monotone}, torn={len(torn)}")


ADVERSARIAL = [
    "import os",
    "__import__('os').system('true')",
    "op_proc_time" * 300,
    "1 +",
    "exp(1000) * exp(1000) - exp(1000) * exp(1000)",
    "0 / 0",
    "sqrt(-1) * log1p(-1e308)",
    "1e308 * 1e308 * op_proc_time",
    "(" * 200 + "1" + ")" * 200,
    None,
    42,
    "-op_proc_time",
    "-job_remaining_work",
]


class Adversary(ProposerBackend):
    def __init__(self):
        self.i = 0

    def plan(self, profile, objective=""):
        return Directive("chaos")

    def synthesize(self, directive, current_rule, retrieved=()):
        self.i += 1
        return ADVERSARIAL[(self.i - 1) % len(ADVERSARIAL)]

    def reflect(self, report, candidate):
        return ReflectorNote("again", True, report)


def test_c06_safety_gate(criterion):
    gate = GateRecorder()
    swaps_total, accepted_total = 0, 0
    for seed in range(3):
        sched = AdaptiveScheduler("job_wait_time", Adversary(), RuleRepository(), AdaptiveConfig(
            trigger=TriggerConfig(3, 3, 0.01), max_iters=len(ADVERSARIAL), cooldown=1, seed=seed), gate=gate)
        sched.run(gen(8, 3, seed, ops=(2, 4), flex=(1, 3)))
        swaps_total += sched.handle.version - 1
        accepted_total += sum(o.status == "accepted" for o in sched.outcomes)
    run_stress(seed=0, gate=gate)
    run_ablation(BenchConfig(suite={"kind": "generated", "seeds": [0, 1], "params": [
        {"n_jobs": 5, "n_machines": 2, "ops_per_job": [1, 3], "flex": [1, 2], "time_range": [1, 9]}]}), gate=gate)
    audit = conftest.SWAP_AUDIT
    ok = not gate.violations and not audit["violations"] and swaps_total == accepted_total and gate.calls
    criterion(ok, f"{len(gate.calls)} gated swaps here, {audit['swaps']} audited in this session, "
                  f"{len(gate.violations) + len(audit['violations'])} violations")


def test_c07_reactive_latency(criterion):
    rep = run_latency(episodes=20, cycles=5)
    ok = rep.reactive_median_us < 1000 and rep.ratio > 1e3
    criterion(ok, f"median {rep.reactive_median_us:.1f} us (p99 {rep.reactive_p99_us:.1f}), "
                  f"deliberation/dispatch ratio {rep.ratio:.3g}")


def test_c08_stress_direction(criterion):
    t0 = time.perf_counter()
    res = run_stress(seed=0)
    elapsed = time.perf_counter() - t0
    ok = res.makespan["adaptive"] <= res.makespan["static"] and elapsed < 30
    criterion(ok, f"static {res.makespan['static']:g} vs adaptive {res.makespan['adaptive']:g}, "
                  f"swaps at {res.swap_times['adaptive']}, {elapsed:.1f}s")


def test_c09_retrieval_fixtures(criterion):
    def entry(nj, nm, value, c=0):
        return RepoEntry(MetaFeatures(nj, nm), "-op_proc_time", value, c)

    checks = [
        (distance(MetaFeatures(10, 4), MetaFeatures(10, 4)), 0.0),
        (distance(MetaFeatures(10, 4), MetaFeatures(5, 4)), 0.5),
        (distance(MetaFeatures(10, 4), MetaFeatures(20, 2)), 1.5),
        (score(entry(5, 4, 0.2, 7), MetaFeatures(10, 4), RetrievalConfig(0.1, 0.05, 0.0)),
         0.2 - 0.1 * 0.5 - 0.05 * math.log(8)),
        (score(entry(3, 3, 0.0), MetaFeatures(3, 3), RetrievalConfig(match_bonus=0.1)), 0.1),
        (score(entry(2, 9, 0.37, 12), MetaFeatures(10, 4), RetrievalConfig(0.0, 0.0, 0.0)), 0.37),
    ]
    arith = all(abs(g - x) <= 1e-9 for g, x in checks)
    rounded = round(checks[3][0], 4) == 0.0460
    rng = random.Random(9)
    outranked = 0
    for _ in range(500):
        q = MetaFeatures(rng.randint(1, 30), rng.randint(1, 10))
        other = MetaFeatures(q.n_jobs + rng.randint(1, 5), q.n_machines)
        v = rng.uniform(-1, 1)
        cfg = RetrievalConfig(rng.uniform(0, 1), 0.05, rng.uniform(1e-6, 0.5), k=1)
        repo = RuleRepository([RepoEntry(other, "clock", v, 0), RepoEntry(q, "clock", v, 0)])
        outranked += retrieve(repo, q, cfg)[0].meta == q
    ok = arith and rounded and outranked == 500
    criterion(ok, f"fixtures within 1e-9: {arith}; exact match first in {outranked}/500")


def _random_rule(rng, depth=0):
    if depth >= 3 or rng.random() < 0.3:
        return Feature(rng.choice(FEATURES)) if rng.random() < 0.8 else Num(float(rng.randint(0, 9)))
    kind = rng.choice(["neg", "bin", "cmp", "if", "minmax", "unary"])
    sub = lambda: _random_rule(rng, depth + 1)  # noqa: E731
    if kind == "neg":
        return Neg(sub())
    if kind == "bin":
        return BinOp(rng.choice("+-*/"), sub(), sub())
    if kind == "cmp":
        return Compare(rng.choice(["<", ">", "<=", ">="]), sub(), sub())
    if kind == "if":
        return Call("if", (sub(), sub(), sub()))
    if kind == "minmax":
        return Call(rng.choice(["min", "max"]), (sub(), sub()))
    return Call(rng.choice(["abs", "sqrt", "log1p", "exp"]), (sub(),))


def test_c10_argmax_invariance(criterion):
    rng = random.Random(10)
    pairs, mismatches, multi = 0, [], 0
    while pairs < 1200:
        n_m = rng.randint(2, 4)
        inst = gen(rng.randint(3, 8), n_m, rng.randrange(10**6), ops=(1, 4), flex=(1, min(3, n_m)))
        state = initial_state(inst)
        for _ in range(rng.randrange(6)):
            acts = feasible_actions(state)
            step(state, rng.choice(acts) if acts else None)
        acts = feasible_actions(state)
        if state.is_done() or not acts:
            continue
        expr = _random_rule(rng)
        a, b = rng.uniform(0.01, 100), rng.uniform(-100, 100)
        f = validate_rule(to_source(expr))
        g = validate_rule(to_source(BinOp("+", BinOp("*", Num(a), expr), Num(b)) if b >= 0
                                    else BinOp("-", BinOp("*", Num(a), expr), Num(-b))))
        pairs += 1
        multi += len(acts) > 1
        if select_action(f, state, acts) != select_action(g, state, acts):
            mismatches.append(to_source(expr))
    ok = not mismatches
    criterion(ok, f"{pairs} pairs ({multi} with >1 candidate), {len(mismatches)} mismatches {mismatches[:2]}")


def test_c11_ablation_plumbing(criterion):
    suite = {"kind": "generated", "seeds": [0, 1, 2, 3, 4], "params": [
        {"n_jobs": 5, "n_machines": 3, "ops_per_job": [1, 3], "flex": [1, 2], "time_range": [1, 9]}]}
    cfg = BenchConfig(suite=suite, seed=3, serialized=True, trigger={"trigger_period": 4, "history_len": 3,
                                                                   "epsilon": 0.05})
    first, second = run_ablation(cfg), run_ablation(cfg)
    p = len(first.policies)
    complete = len(first.rows) == 5 and all(not r.error for r in first.rows) and p == 4
    sums = all(abs(sum(r.rank.values()) - p * (p + 1) / 2) < 1e-12 for r in first.rows)
    same = first.to_csv() == second.to_csv()
    ok = complete and sums and same
    criterion(ok, f"{len(first.rows)} rows x {p} variants, rank sums ok={sums}, reproducible={same}; "
                  f"mean ranks {first.mean_rank}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
