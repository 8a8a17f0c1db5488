"""A closed expression language for priority dispatching rules.

Rules are single expressions over a fixed set of shop-floor features::

    if(machine_queue_len > 2, -op_proc_time, -job_remaining_work)

There are no loops, assignments or calls outside a small whitelist, so a rule
that parses is guaranteed to terminate. Evaluation is total: division by zero
yields 0, ``sqrt``/``log1p`` clamp negative inputs to 0, ``exp`` clamps its
argument to [-50, 50] and every intermediate result is clamped to the finite
float range. Higher scores mean higher priority.
"""

from __future__ import annotations

import itertools
import math
import re
import sys
import threading
from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

from .core import Action, SimState

FEATURES = (
    "op_proc_time",
    "job_remaining_work",
    "job_remaining_ops",
    "op_index",
    "num_eligible",
    "machine_queue_len",
    "machine_workload",
    "job_wait_time",
    "clock",
    "machine_idle_time",
)
_FEATURE_INDEX = {name: i for i, name in enumerate(FEATURES)}


class FeatureVector(NamedTuple):
    op_proc_time: float
    job_remaining_work: float
    job_remaining_ops: float
    op_index: float
    num_eligible: float
    machine_queue_len: float
    machine_workload: float
    job_wait_time: float
    clock: float
    machine_idle_time: float


# name -> arity
FUNCTIONS = {"if": 3, "min": 2, "max": 2, "abs": 1, "sqrt": 1, "log1p": 1, "exp": 1}
COMPARISONS = ("<=", ">=", "==", "!=", "<", ">")
EXP_CLAMP = 50.0
_BIG = sys.float_info.max


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Feature:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # + - * /
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Compare:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Expr = Union[Num, Feature, Neg, BinOp, Compare, Call]


def children(node: Expr) -> tuple:
    if isinstance(node, Neg):
        return (node.operand,)
    if isinstance(node, (BinOp, Compare)):
        return (node.left, node.right)
    if isinstance(node, Call):
        return node.args
    return ()


def walk(node: Expr):
    yield node
    for child in children(node):
        yield from walk(child)


def node_count(node: Expr) -> int:
    return sum(1 for _ in walk(node))


def depth(node: Expr) -> int:
    best = 0
    stack = [(node, 1)]
    while stack:
        n, d = stack.pop()
        best = max(best, d)
        stack.extend((c, d + 1) for c in children(n))
    return best


class RuleComplexity(NamedTuple):
    operator_count: int
    branch_count: int

    @property
    def score(self) -> int:
        return self.operator_count + 2 * self.branch_count


def complexity(node: Expr) -> RuleComplexity:
    """Non-conditional internal nodes plus conditionals; ``score = ops + 2*branches``."""
    ops = branches = 0
    for n in walk(node):
        if isinstance(n, Call) and n.func == "if":
            branches += 1
        elif isinstance(n, (Neg, BinOp, Compare, Call)):
            ops += 1
    return RuleComplexity(ops, branches)


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class RuleError(ValueError):
    reason = "invalid"

    def __init__(self, message: str, pos: Optional[int] = None):
        super().__init__(message if pos is None else f"{message} (at position {pos})")
        self.pos = pos


class RuleSyntaxError(RuleError):
    reason = "syntax"


class UnknownIdentifierError(RuleError):
    reason = "unknown_identifier"


class ArityError(RuleError):
    reason = "arity"


class RuleTooLongError(RuleError):
    reason = "over_length"


class RuleTooComplexError(RuleError):
    reason = "too_complex"


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op><=|>=|==|!=|[-+*/(),<>]))"
)


def _tokenize(text: str) -> list:
    tokens = []
    pos = 0
    end = len(text.rstrip())
    while pos < end:
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            stripped = len(text) - len(text[pos:].lstrip())
            raise RuleSyntaxError(f"unexpected character {text[stripped]!r}", stripped)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, max_depth: int):
        self.tokens = _tokenize(text)
        self.i = 0
        self.nesting = 0
        self.max_depth = max_depth

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.next()
        if val != value or kind == "end":
            raise RuleSyntaxError(f"expected {value!r}, found {val or 'end of input'!r}", pos)

    def enter(self, pos: int):
        self.nesting += 1
        if self.nesting > self.max_depth:
            raise RuleTooComplexError(f"expression nested deeper than {self.max_depth}", pos)

    def parse(self) -> Expr:
        if self.peek()[0] == "end":
            raise RuleSyntaxError("empty rule", 0)
        node = self.comparison()
        kind, val, pos = self.peek()
        if kind != "end":
            raise RuleSyntaxError(f"unexpected {val!r}", pos)
        return node

    def comparison(self) -> Expr:
        left = self.additive()
        kind, val, pos = self.peek()
        if kind == "op" and val in COMPARISONS:
            self.next()
            right = self.additive()
            nk, nv, npos = self.peek()
            if nk == "op" and nv in COMPARISONS:
                raise RuleSyntaxError("chained comparisons are not allowed", npos)
            return Compare(val, left, right)
        return left

    def additive(self) -> Expr:
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.next()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in ("*", "/"):
            op = self.next()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        kind, val, pos = self.peek()
        if kind == "op" and val == "-":
            self.next()
            self.enter(pos)
            node = Neg(self.unary())
            self.nesting -= 1
            return node
        return self.primary()

    def primary(self) -> Expr:
        kind, val, pos = self.next()
        if kind == "num":
            value = float(val)
            if not math.isfinite(value):
                raise RuleSyntaxError(f"numeric literal {val} is not finite", pos)
            return Num(value)
        if kind == "name":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                if val not in FUNCTIONS:
                    raise UnknownIdentifierError(f"unknown function {val!r}", pos)
                self.next()
                self.enter(pos)
                args = []
                if self.peek()[1] != ")":
                    args.append(self.comparison())
                    while self.peek()[1] == "," and self.peek()[0] == "op":
                        self.next()
                        args.append(self.comparison())
                self.expect(")")
                self.nesting -= 1
                if len(args) != FUNCTIONS[val]:
                    raise ArityError(f"{val} takes {FUNCTIONS[val]} argument(s), got {len(args)}", pos)
                return Call(val, tuple(args))
            if val in FUNCTIONS:
                raise RuleSyntaxError(f"function {val!r} used without arguments", pos)
            if val not in _FEATURE_INDEX:
                raise UnknownIdentifierError(f"unknown identifier {val!r}", pos)
            return Feature(val)
        if kind == "op" and val == "(":
            self.enter(pos)
            node = self.comparison()
            self.expect(")")
            self.nesting -= 1
            return node
        raise RuleSyntaxError(f"unexpected {val or 'end of input'!r}", pos)


def parse_rule(text: str, max_depth: int = 64) -> Expr:
    return _Parser(text, max_depth).parse()


# ---------------------------------------------------------------------------
# Pretty printer
# ---------------------------------------------------------------------------

_PREC = {"cmp": 1, "+": 2, "-": 2, "*": 3, "/": 3}


def _prec(node: Expr) -> int:
    if isinstance(node, Compare):
        return 1
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return 4
    return 5


def _fmt_number(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def to_source(node: Expr) -> str:
    """Canonical text; re-parses to a structurally identical AST."""
    if isinstance(node, Num):
        return _fmt_number(node.value)
    if isinstance(node, Feature):
        return node.name
    if isinstance(node, Neg):
        inner = to_source(node.operand)
        return f"-({inner})" if _prec(node.operand) < 4 else f"-{inner}"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(to_source(a) for a in node.args)})"
    p = _prec(node)
    left, right = to_source(node.left), to_source(node.right)
    if _prec(node.left) < p or (isinstance(node, Compare) and _prec(node.left) <= p):
        left = f"({left})"
    if _prec(node.right) <= p:
        right = f"({right})"
    return f"{left} {node.op} {right}"


# ---------------------------------------------------------------------------
# Compilation to closures
# ---------------------------------------------------------------------------


def _fin(v: float) -> float:
    if v != v:
        return 0.0
    if v > _BIG:
        return _BIG
    if v < -_BIG:
        return -_BIG
    return v


def _compile(node: Expr):
    if isinstance(node, Num):
        c = node.value
        return lambda x: c
    if isinstance(node, Feature):
        idx = _FEATURE_INDEX[node.name]
        return lambda x: x[idx]
    if isinstance(node, Neg):
        f = _compile(node.operand)
        return lambda x: -f(x)
    if isinstance(node, BinOp):
        a, b = _compile(node.left), _compile(node.right)
        op = node.op
        if op == "+":
            def add(x):
                v = a(x) + b(x)
                return v if -_BIG <= v <= _BIG else _fin(v)
            return add
        if op == "-":
            def sub(x):
                v = a(x) - b(x)
                return v if -_BIG <= v <= _BIG else _fin(v)
            return sub
        if op == "*":
            def mul(x):
                v = a(x) * b(x)
                return v if -_BIG <= v <= _BIG else _fin(v)
            return mul

        def div(x):
            d = b(x)
            if d == 0.0:
                return 0.0
            v = a(x) / d
            return v if -_BIG <= v <= _BIG else _fin(v)
        return div
    if isinstance(node, Compare):
        a, b = _compile(node.left), _compile(node.right)
        return {
            "<": lambda x: 1.0 if a(x) < b(x) else 0.0,
            "<=": lambda x: 1.0 if a(x) <= b(x) else 0.0,
            ">": lambda x: 1.0 if a(x) > b(x) else 0.0,
            ">=": lambda x: 1.0 if a(x) >= b(x) else 0.0,
            "==": lambda x: 1.0 if a(x) == b(x) else 0.0,
            "!=": lambda x: 1.0 if a(x) != b(x) else 0.0,
        }[node.op]
    fs = [_compile(arg) for arg in node.args]
    fn = node.func
    if fn == "if":
        c, t, e = fs
        return lambda x: t(x) if c(x) != 0.0 else e(x)
    if fn == "min":
        a, b = fs
        return lambda x: min(a(x), b(x))
    if fn == "max":
        a, b = fs
        return lambda x: max(a(x), b(x))
    (a,) = fs
    if fn == "abs":
        return lambda x: abs(a(x))
    if fn == "sqrt":
        return lambda x: math.sqrt(max(a(x), 0.0))
    if fn == "log1p":
        return lambda x: math.log1p(max(a(x), 0.0))
    return lambda x: math.exp(min(max(a(x), -EXP_CLAMP), EXP_CLAMP))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RuleLimits:
    max_chars: int = 2000
    max_nodes: int = 500
    max_depth: int = 64


@dataclass(frozen=True, eq=False)
class CompiledRule:
    """A validated, immutable rule. ``fn`` evaluates a feature tuple."""

    expr: Expr
    source: str
    version: int
    complexity: RuleComplexity
    fn: object

    def __call__(self, features) -> float:
        return self.fn(features)

    def __repr__(self):
        return f"CompiledRule(v{self.version}: {self.source})"


class RuleCompiler:
    """Parses, checks limits and stamps monotonically increasing versions."""

    def __init__(self, limits: RuleLimits = RuleLimits()):
        self.limits = limits
        self._versions = itertools.count(1)
        self._lock = threading.Lock()

    def validate(self, text: str) -> CompiledRule:
        if not isinstance(text, str):
            raise RuleSyntaxError(f"rule must be text, got {type(text).__name__}")
        lim = self.limits
        if len(text) > lim.max_chars:
            raise RuleTooLongError(f"rule has {len(text)} characters, limit is {lim.max_chars}")
        expr = parse_rule(text, lim.max_depth)
        if depth(expr) > lim.max_depth:
            raise RuleTooComplexError(f"rule depth exceeds {lim.max_depth}")
        n = node_count(expr)
        if n > lim.max_nodes:
            raise RuleTooComplexError(f"rule has {n} nodes, limit is {lim.max_nodes}")
        with self._lock:
            version = next(self._versions)
        return CompiledRule(expr, to_source(expr), version, complexity(expr), _compile(expr))


_default_compiler = RuleCompiler()


def validate_rule(text: str, limits: Optional[RuleLimits] = None, compiler: Optional[RuleCompiler] = None) -> CompiledRule:
    if compiler is None:
        compiler = _default_compiler if limits is None else RuleCompiler(limits)
    return compiler.validate(text)


def evaluate(rule: CompiledRule, features) -> float:
    """Score one candidate; ``features`` is a FeatureVector, tuple or mapping."""
    if isinstance(features, dict):
        features = tuple(float(features[name]) for name in FEATURES)
    return rule.fn(features)


# ---------------------------------------------------------------------------
# Builtin dispatching rules
# ---------------------------------------------------------------------------

BUILTIN_SOURCES = {
    "SPT": "-op_proc_time",
    "LPT": "op_proc_time",
    "MWR": "job_remaining_work",
    "LWR": "-job_remaining_work",
    "FIFO": "job_wait_time",
    "MOR": "job_remaining_ops",
    "LOR": "-job_remaining_ops",
    "SPT_LQ": "-op_proc_time - machine_queue_len",
    "FLEX": "-num_eligible",
}


def builtin_rules(compiler: Optional[RuleCompiler] = None) -> dict:
    return {name: validate_rule(src, compiler=compiler) for name, src in BUILTIN_SOURCES.items()}


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------


def _queue_lengths(state: SimState, ready: list) -> list:
    q = [0] * state.n_machines
    jobs = state.jobs
    for i in ready:
        for k in jobs[i].operations[state.cur[i]].machines:
            q[k] += 1
    return q


def _job_remaining_work(state: SimState, i: int) -> float:
    job = state.jobs[i]
    j = state.cur[i]
    frac = state.remaining_fraction(i)
    return frac * job.operations[j].min_time + job.suffix_work[j + 1]


def extract_features(state: SimState, action: Action, instance=None) -> FeatureVector:
    """Observable features of one candidate (operation, machine) pair.

    ``op_proc_time`` is the time still needed on the candidate machine, which
    equals the nominal processing time unless the operation was preempted.
    """
    i, j, k = action
    ready = state.ready_jobs()
    return _features(state, i, k, _queue_lengths(state, ready), _job_remaining_work(state, i))


def _features(state, i, k, queue, remaining_work) -> FeatureVector:
    job = state.jobs[i]
    j = state.cur[i]
    clock = state.clock
    return FeatureVector(
        state.remaining_on(i, k),
        remaining_work,
        float(job.n_ops - j),
        float(j + 1),
        float(len(job.operations[j].alternatives)),
        float(queue[k]),
        state.m_workload[k],
        clock - state.ready_since[i],
        clock,
        clock - state.m_idle_since[k],
    )


def candidate_features(state: SimState, actions: list) -> list:
    """Feature vectors for a batch of actions sharing one state."""
    if not actions:
        return []
    ready = state.ready_jobs()
    queue = _queue_lengths(state, ready)
    work = {}
    out = []
    for i, _, k in actions:
        w = work.get(i)
        if w is None:
            w = work[i] = _job_remaining_work(state, i)
        out.append(_features(state, i, k, queue, w))
    return out
