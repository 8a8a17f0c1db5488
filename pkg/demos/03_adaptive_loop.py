# %% [markdown]
# # Self-improving dispatch
#
# The reactive side keeps dispatching with whatever rule is deployed. When the
# trigger fires, the deliberative side proposes candidates, replays them
# against the incumbent on a shared scenario pool and swaps one in only if it
# clears the statistical gate.

# %%
from dualsched.core import GeneratorParams, generate_instance, run_episode
from dualsched.deliberative import AdaptiveConfig, AdaptiveScheduler, MockProposer, TriggerConfig, compare_samples
from dualsched.reactive import StaticPolicy
from dualsched.repository import MetaFeatures, RuleRepository
from dualsched.rules import validate_rule

rep = compare_samples([12, 10, 14], [10, 8, 12])
print(f"r={rep.r:.4f}  pooled var={rep.pooled_var:g}  d={rep.d_eff:g}  T={rep.t_stat:.4f}  accepted={rep.accepted}")

# %%
inst = generate_instance(GeneratorParams(10, 4, (2, 4), (1, 3), (1, 9)), seed=3)
fifo = validate_rule("job_wait_time")
print("static FIFO:", run_episode(inst, None, StaticPolicy(fifo)).makespan)

repo = RuleRepository()
sched = AdaptiveScheduler("job_wait_time", MockProposer(seed=0), repo,
                          AdaptiveConfig(trigger=TriggerConfig(trigger_period=8, history_len=5, epsilon=0.1)))
res = sched.run(inst)
print("adaptive:   ", res.makespan, "| final rule:", sched.handle.rule.source)
for o in sched.outcomes:
    print(f"  cycle -> {o.status:13s} after {o.iterations} candidate(s)")

# %% [markdown]
# Accepted rules land in the repository, tagged with the instance size.
# Later runs on similar shops start from the best stored match.

# %%
for e in repo.retrieve(MetaFeatures(10, 4)):
    print(f"{e.meta.n_jobs}x{e.meta.n_machines}  value {e.value:.3f}  {e.rule_source}")
