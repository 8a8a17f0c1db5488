"""Dynamic flexible job shop scheduling with hot-swappable dispatching rules.

A reactive stream dispatches each decision epoch with the active priority
rule; a deliberative stream proposes, sandbox-validates and hot-swaps better
rules, remembering accepted ones in a retrieval repository.
"""

from .core import (
    Action,
    DisturbanceScript,
    GeneratorParams,
    Instance,
    InstanceError,
    arrival,
    brute_force_best,
    check_schedule,
    failure,
    feasible_actions,
    generate_instance,
    initial_state,
    instance_from_lists,
    parse_disturbances,
    parse_fjs,
    recovery,
    run_episode,
    script,
    step,
)
from .deliberative import (
    AdaptiveConfig,
    AdaptiveScheduler,
    MockProposer,
    RemoteProposer,
    ScriptedProposer,
    TriggerConfig,
    ValidationReport,
    ValidationThresholds,
    build_eval_pool,
    check_trigger,
    compare_samples,
    deliberation_cycle,
    validate_candidate,
)
from .harness import BenchConfig, rpd, run_ablation, run_benchmark, run_latency, run_stress
from .reactive import ActiveRuleHandle, ReactiveDispatcher, StaticPolicy, dispatch, select_action, swap_rule
from .repository import MetaFeatures, RetrievalConfig, RuleRepository
from .rules import BUILTIN_SOURCES, RuleError, builtin_rules, evaluate, extract_features, parse_rule, validate_rule

__version__ = "0.1.0"

__all__ = [
    "Action",
    "DisturbanceScript",
    "GeneratorParams",
    "Instance",
    "InstanceError",
    "arrival",
    "brute_force_best",
    "check_schedule",
    "failure",
    "feasible_actions",
    "generate_instance",
    "initial_state",
    "instance_from_lists",
    "parse_disturbances",
    "parse_fjs",
    "recovery",
    "run_episode",
    "script",
    "step",
    "AdaptiveConfig",
    "AdaptiveScheduler",
    "MockProposer",
    "RemoteProposer",
    "ScriptedProposer",
    "TriggerConfig",
    "ValidationReport",
    "ValidationThresholds",
    "build_eval_pool",
    "check_trigger",
    "compare_samples",
    "deliberation_cycle",
    "validate_candidate",
    "BenchConfig",
    "rpd",
    "run_ablation",
    "run_benchmark",
    "run_latency",
    "run_stress",
    "ActiveRuleHandle",
    "ReactiveDispatcher",
    "StaticPolicy",
    "dispatch",
    "select_action",
    "swap_rule",
    "MetaFeatures",
    "RetrievalConfig",
    "RuleRepository",
    "BUILTIN_SOURCES",
    "RuleError",
    "builtin_rules",
    "evaluate",
    "extract_features",
    "parse_rule",
    "validate_rule",
]
