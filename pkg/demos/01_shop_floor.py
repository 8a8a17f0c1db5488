# %% [markdown]
# # A flexible job shop, step by step
#
# Build a small shop, dispatch it with the builtin rules and compare each
# against the exhaustive optimum. Then break a machine halfway through.

# %%
from dualsched.core import (
    GeneratorParams,
    brute_force_search,
    failure,
    format_fjs,
    generate_instance,
    replay_policy,
    run_episode,
    script,
)
from dualsched.reactive import StaticPolicy
from dualsched.rules import builtin_rules

inst = generate_instance(GeneratorParams(4, 2, (1, 2), (1, 2), (1, 9)), seed=7)
print(format_fjs(inst))

# %% [markdown]
# Each builtin rule is a scoring expression; dispatch picks the best-scoring
# (operation, machine) pair whenever a decision is due.

# %%
best, decisions = brute_force_search(inst, cap=8)
print(f"optimum {best:g}")
for name, rule in builtin_rules().items():
    m = run_episode(inst, None, StaticPolicy(rule)).makespan
    print(f"{name:5s} {rule.source:22s} makespan {m:g}  gap {100 * (m - best) / best:5.1f}%")

assert run_episode(inst, None, replay_policy(decisions)).makespan == best

# %% [markdown]
# A failure interrupts whatever is running on the machine. The operation keeps
# its progress and resumes later, possibly on another eligible machine.

# %%
spt = builtin_rules()["SPT"]
calm = run_episode(inst, None, StaticPolicy(spt))
broken = run_episode(inst, script([failure(calm.makespan / 2, 0, 6)]), StaticPolicy(spt))
print(f"SPT without failure {calm.makespan:g}, with machine 1 down for 6: {broken.makespan:g}")
for seg in broken.gantt:
    print(f"  job {seg.job + 1} op {seg.op + 1} on M{seg.machine + 1}: {seg.start:g} -> {seg.end:g}")
