# %% [markdown]
# # Benchmarks, ablations and stress
#
# The harness turns makespans into relative percent deviations and mean ranks.
# It can also run the four ablation variants and a machine-failure scenario.

# %%
from dualsched.harness import BenchConfig, run_ablation, run_benchmark, run_latency, run_stress

suite = {"kind": "generated", "seeds": [0, 1, 2], "params": [
    {"n_jobs": 6, "n_machines": 3, "ops_per_job": [1, 3], "flex": [1, 2], "time_range": [1, 9]}]}
print(run_benchmark(BenchConfig(suite=suite, policies=["SPT", "LPT", "MWR", "FIFO", "full"])).table())

# %%
print(run_ablation(BenchConfig(suite=suite)).table())

# %% [markdown]
# The stress scenario fails the busiest machine mid-episode. The static rule
# carries on unchanged while the adaptive scheduler reacts to the drop in
# throughput.

# %%
stress = run_stress(seed=0)
for policy, m in stress.makespan.items():
    print(f"{policy:9s} makespan {m:g}  swaps at {stress.swap_times[policy]}")

# %%
print(run_latency(episodes=5, cycles=2).table())
