# %% [markdown]
# # Adapting a trained classifier to a second domain
#
# A small version of the benchmark: train on one synthetic domain, then adapt
# to a second one with several strategies and watch source accuracy.
# Sizes are reduced so the script finishes in about a minute.

# %%
import numpy as np

from progmem.benchmark import FINETUNE_PLAIN, FINETUNE_VOCAB, HIDDEN_VOCAB, MEM_VOCAB, run_benchmark

methods = (MEM_VOCAB, FINETUNE_PLAIN, FINETUNE_VOCAB, HIDDEN_VOCAB)
run = run_benchmark(2, seed=0, methods=methods, n_train=1000, hidden_dim=32, embed_dim=32,
                    n_slots=32, slots=32, epochs=10)

# %% [markdown]
# Rows are stages, columns the source and target test accuracy.

# %%
print(f"source model: {np.round(run.source_row, 3)}")
for key, res in run.results.items():
    m = res.matrix
    print(f"{key:22s} source {m[-1, 0]:.3f}  target {m[-1, 1]:.3f}  "
          f"params {res.model.n_params():6d}  ({run.seconds[key]:.0f}s)")

# %% [markdown]
# Without vocabulary expansion the target's private words all map to the
# unknown id, so plain fine-tuning can neither read the target nor keep the
# source.  The hidden-expansion model was widened to roughly the parameter
# count the memory model gained.

# %%
hid = run.results["hidden_expand+vocab"].model
mem = run.results["mem_expand+vocab"].model
print("hidden units:", hid.hidden_dim, " memory slots:", mem.bank.n_slots,
      " boundaries:", mem.bank.domain_boundaries)
