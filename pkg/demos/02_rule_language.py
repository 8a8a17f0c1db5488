# %% [markdown]
# # Writing dispatching rules
#
# Rules are small arithmetic expressions over per-candidate features. They are
# parsed into a closed AST, checked against size limits and compiled to
# closures that never raise and never return NaN or infinity.

# %%
from dualsched.rules import FEATURES, RuleError, evaluate, parse_rule, to_source, validate_rule

print("features:", ", ".join(FEATURES))

rule = validate_rule("if(machine_queue_len > 2, -op_proc_time, -job_remaining_work)")
print(rule.source, "| complexity", rule.complexity.score)
print(parse_rule("1 + 2 * -clock"))
print(to_source(parse_rule("((op_proc_time))+  min(clock,3)")))

# %% [markdown]
# Anything outside the grammar is rejected with a reason and a position.

# %%
for text in ["import os", "min(1)", "clock + $", "op_proc_time" * 200]:
    try:
        validate_rule(text)
    except RuleError as exc:
        print(f"{text[:30]!r:34s} -> {exc.reason} at {exc.pos}")

# %% [markdown]
# Evaluation is total: division by zero yields 0, `sqrt` and `log1p` clamp
# their inputs and `exp` saturates.

# %%
zeros = dict.fromkeys(FEATURES, 0.0)
for text in ["clock / 0", "sqrt(-4)", "exp(1000)", "1e308 * 1e308"]:
    print(f"{text:15s} = {evaluate(validate_rule(text), zeros):.6g}")
