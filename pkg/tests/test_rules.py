import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import gen
from dualsched.core import Action, failure, feasible_actions, initial_state, instance_from_lists, script, step
from dualsched.rules import (
    FEATURES,
    FUNCTIONS,
    BinOp,
    Call,
    Compare,
    Feature,
    FeatureVector,
    Neg,
    Num,
    RuleCompiler,
    RuleLimits,
    builtin_rules,
    complexity,
    evaluate,
    extract_features,
    parse_rule,
    to_source,
    validate_rule,
)

# -- random ASTs -----------------------------------------------------------------

leaves = st.one_of(
    st.builds(Feature, st.sampled_from(FEATURES)),
    st.builds(Num, st.one_of(st.integers(0, 100).map(float), st.floats(0, 1e6, allow_nan=False))),
)


def _extend(children):
    return st.one_of(
        st.builds(Neg, children),
        st.builds(BinOp, st.sampled_from("+-*/"), children, children),
        st.builds(Compare, st.sampled_from(["<", "<=", ">", ">=", "==", "!="]), children, children),
        st.builds(lambda c, a, b: Call("if", (c, a, b)), children, children, children),
        st.builds(lambda f, a, b: Call(f, (a, b)), st.sampled_from(["min", "max"]), children, children),
        st.builds(lambda f, a: Call(f, (a,)), st.sampled_from(["abs", "sqrt", "log1p", "exp"]), children),
    )


exprs = st.recursive(leaves, _extend, max_leaves=12)
feature_values = st.floats(0, 1e12, allow_nan=False, allow_infinity=False)
feature_vectors = st.tuples(*[feature_values] * len(FEATURES)).map(lambda t: FeatureVector(*t))


# -- parse_rule -------------------------------------------------------------------


def test_leaf_complexity_zero():
    assert parse_rule("op_proc_time") == Feature("op_proc_time")
    assert complexity(parse_rule("op_proc_time")).score == 0


def test_binary_complexity_one():
    assert complexity(parse_rule("op_proc_time + job_remaining_work")).score == 1


def test_conditional_complexity():
    c = complexity(parse_rule("if(machine_queue_len > 2, -op_proc_time, -job_remaining_work)"))
    assert (c.operator_count, c.branch_count, c.score) == (3, 1, 5)


def test_precedence():
    e = parse_rule("1 + 2 * -op_proc_time < clock")
    assert e == Compare("<", BinOp("+", Num(1), BinOp("*", Num(2), Neg(Feature("op_proc_time")))), Feature("clock"))
    assert parse_rule("1 - 2 - 3") == BinOp("-", BinOp("-", Num(1), Num(2)), Num(3))


def test_whitespace_insensitive():
    assert parse_rule("min( op_proc_time ,clock )") == parse_rule("min(op_proc_time, clock)")


@pytest.mark.parametrize(
    "text,reason",
    [
        ("import os", "unknown_identifier"),
        ("__import__('os')", "syntax"),
        ("__import__(1)", "unknown_identifier"),
        ("foo(1)", "unknown_identifier"),
        ("min(1)", "arity"),
        ("if(1, 2)", "arity"),
        ("1 +", "syntax"),
        ("(1", "syntax"),
        ("", "syntax"),
        ("1 < 2 < 3", "syntax"),
        ("op_proc_time; clock", "syntax"),
        ("2 ** 3", "syntax"),
        ("min", "syntax"),
    ],
)
def test_parse_errors(text, reason):
    with pytest.raises(Exception) as info:
        validate_rule(text)
    assert info.value.reason == reason


def test_syntax_error_position():
    with pytest.raises(Exception) as info:
        parse_rule("clock + $")
    assert info.value.pos == 8


# -- validate_rule ---------------------------------------------------------------


def test_fresh_compiler_version_one():
    c = RuleCompiler()
    assert c.validate("-op_proc_time").version == 1
    assert c.validate("clock").version == 2


def test_over_length_rejected_not_truncated():
    text = "1" + " " * 1999
    assert len(text) == 2000
    validate_rule(text)
    with pytest.raises(Exception) as info:
        validate_rule(text + " ")
    assert info.value.reason == "over_length"


def test_node_limit():
    limits = RuleLimits(max_depth=10_000)
    text = "+".join(["1"] * 251)  # 501 nodes in 501 chars
    with pytest.raises(Exception) as info:
        validate_rule(text, limits=limits)
    assert info.value.reason == "too_complex"
    validate_rule("+".join(["1"] * 250), limits=limits)
    # the default depth limit also bounds long flat chains
    with pytest.raises(Exception) as info:
        validate_rule("+".join(["1"] * 100))
    assert info.value.reason == "too_complex"


def test_deep_nesting_rejected_without_recursion_error():
    with pytest.raises(Exception) as info:
        validate_rule("(" * 500 + "1" + ")" * 500)
    assert info.value.reason == "too_complex"
    with pytest.raises(Exception) as info:
        validate_rule("-" * 1000 + "1")
    assert info.value.reason == "too_complex"


def test_non_text_rejected():
    with pytest.raises(Exception) as info:
        validate_rule(None)
    assert info.value.reason == "syntax"


def test_custom_limits():
    with pytest.raises(Exception):
        validate_rule("clock + clock", limits=RuleLimits(max_chars=5))


def test_source_is_canonical():
    assert validate_rule("  -op_proc_time+min(clock,1)  ").source == "-op_proc_time + min(clock, 1)"


# -- evaluate ----------------------------------------------------------------------


def fv(**kw):
    base = dict.fromkeys(FEATURES, 0.0)
    base.update(kw)
    return FeatureVector(**base)


def test_evaluate_examples():
    assert evaluate(validate_rule("-op_proc_time"), fv(op_proc_time=4)) == -4
    assert evaluate(validate_rule("op_proc_time / machine_idle_time"), fv(op_proc_time=4)) == 0
    assert evaluate(validate_rule("min(op_proc_time, job_remaining_work)"), fv(op_proc_time=4, job_remaining_work=9)) == 4


def test_evaluate_accepts_mapping():
    assert evaluate(validate_rule("clock * 2"), dict(fv(clock=3)._asdict())) == 6


@pytest.mark.parametrize(
    "text,expected",
    [
        ("sqrt(-4)", 0.0),
        ("log1p(-5)", 0.0),
        ("exp(1000)", math.exp(50)),
        ("exp(-1000)", math.exp(-50)),
        ("abs(-3)", 3.0),
        ("if(0, 1, 2)", 2.0),
        ("if(-0.5, 1, 2)", 1.0),
        ("(3 > 2) + (2 >= 2) + (1 == 1) + (1 != 1) + (1 < 0) + (1 <= 1)", 4.0),
        ("max(clock, 7)", 7.0),
        ("1e308 * 1e308", 1.7976931348623157e308),
        ("-1e308 * 1e308", -1.7976931348623157e308),
    ],
)
def test_clamping_semantics(text, expected):
    assert evaluate(validate_rule(text), fv()) == expected


@given(exprs, feature_vectors)
def test_totality(expr, features):
    rule = validate_rule(to_source(expr), limits=RuleLimits(max_nodes=10_000))
    v = evaluate(rule, features)
    assert math.isfinite(v)
    assert evaluate(rule, features) == v


@given(exprs)
def test_round_trip(expr):
    assert parse_rule(to_source(expr)) == expr


@given(exprs, st.sampled_from(["neg", "add", "if"]))
def test_complexity_monotone(expr, how):
    wrapped = {
        "neg": Neg(expr),
        "add": BinOp("+", expr, Feature("clock")),
        "if": Call("if", (Feature("clock"), expr, Num(0))),
    }[how]
    assert complexity(wrapped).score > complexity(expr).score


def test_all_functions_covered_by_strategy():
    assert set(FUNCTIONS) == {"if", "min", "max", "abs", "sqrt", "log1p", "exp"}


# -- builtin rules ------------------------------------------------------------------


def test_builtin_sources():
    rules = builtin_rules()
    assert rules["SPT"].source == "-op_proc_time"
    assert rules["LPT"].source == "op_proc_time"
    assert rules["MWR"].source == "job_remaining_work"
    assert rules["LWR"].source == "-job_remaining_work"
    assert rules["FIFO"].source == "job_wait_time"


def _argmax(rule, vectors):
    scores = [evaluate(rule, v) for v in vectors]
    return scores.index(max(scores))


def test_builtin_choices():
    r = builtin_rules()
    assert _argmax(r["SPT"], [fv(op_proc_time=3), fv(op_proc_time=5)]) == 0
    assert _argmax(r["MWR"], [fv(job_remaining_work=10), fv(job_remaining_work=6)]) == 0
    assert _argmax(r["FIFO"], [fv(job_wait_time=2), fv(job_wait_time=7)]) == 1


# -- features ------------------------------------------------------------------------


def test_fresh_state_features():
    inst = instance_from_lists([[{0: 2}, {0: 3}]], 1)
    f = extract_features(initial_state(inst), Action(0, 0, 0))
    assert (f.op_proc_time, f.job_remaining_work, f.job_remaining_ops, f.op_index) == (2, 5, 2, 1)
    assert f.job_wait_time == 0 and f.machine_workload == 0 and f.clock == 0


def test_num_eligible():
    inst = instance_from_lists([[{0: 2, 1: 3, 2: 4}]], 3)
    assert extract_features(initial_state(inst), Action(0, 0, 2)).num_eligible == 3


def test_features_after_progress():
    inst = instance_from_lists([[{0: 2}, {0: 3, 1: 1}], [{0: 4}]], 2)
    state = initial_state(inst)
    step(state, Action(0, 0, 0))
    step(state, None)  # t = 2
    f = extract_features(state, Action(1, 0, 0))
    assert f.job_wait_time == 2 and f.machine_workload == 2 and f.machine_queue_len == 2
    assert f.machine_idle_time == 0
    f2 = extract_features(state, Action(0, 1, 1))
    assert f2.op_index == 2 and f2.job_remaining_work == 1 and f2.machine_idle_time == 2


def test_features_of_preempted_operation():
    inst = instance_from_lists([[{0: 4, 1: 8}]], 2)
    state = initial_state(inst, script([failure(1, 0, 10)]))
    step(state, Action(0, 0, 0))
    step(state, None)
    f = extract_features(state, Action(0, 0, 1))
    assert f.op_proc_time == 6 and f.job_remaining_work == 3


def test_extraction_is_pure():
    inst = gen(5, 3, 2)
    state = initial_state(inst)
    step(state, feasible_actions(state)[0])
    before = state.signature()
    rules = builtin_rules()
    for a in feasible_actions(state):
        f = extract_features(state, a)
        for r in rules.values():
            evaluate(r, f)
        assert all(math.isfinite(x) and x >= 0 for x in f)
    assert state.signature() == before
