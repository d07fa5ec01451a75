# %% [markdown]
# # Schedules, checkpoints and significance tables
#
# Run a three-domain schedule for two methods and a few seeds, reload a stage
# checkpoint into a larger model, and render the comparison table.

# %%
import tempfile
from pathlib import Path

import numpy as np

from progmem.data import default_specs, gen_synthetic
from progmem.ida import DomainSchedule, RunConfig, ScheduleEntry, load_checkpoint, run_schedule
from progmem.report import RunRecord, report_matrix

out = Path(tempfile.mkdtemp(prefix="progmem-demo-"))
specs = default_specs(3, seed=1, n_train=600, n_valid=150, n_test=200, shared_marker_rate=0.3)
data = gen_synthetic(specs, out_dir=out / "data")
names = [s.name for s in specs]

# %%
records = []
for seed in range(5):
    cfg = RunConfig(seed=seed, embed_dim=32, hidden_dim=32, n_slots=16, slots=16, lr=3e-3,
                    epochs=8, patience=3)
    for method, vocab in (("mem_expand", True), ("finetune_only", False)):
        sched = DomainSchedule([ScheduleEntry(n, method, 16, 8, 3, vocab) for n in names])
        res = run_schedule(sched, data, cfg, out_dir=out / f"{method}-{seed}")
        records.append(RunRecord.from_result(res))
print(records[0].stages)
print(np.round(np.array(records[0].matrix), 3))

# %% [markdown]
# Stage checkpoints load into any model at least as large; stored arrays
# fill the leading blocks.

# %%
stage0 = out / "mem_expand-0" / "stage0_fic.pmem"
model = load_checkpoint(out / "mem_expand-0" / "stage2_slate.pmem")
grown = load_checkpoint(stage0, model)
print("slots:", grown.bank.n_slots, "boundaries:", grown.bank.domain_boundaries)

# %% [markdown]
# Seed pairing with five seeds; arrows mark one-tailed Wilcoxon p < 0.05
# (single) and p < 0.01 (double).

# %%
print(report_matrix(records, "markdown", reference="finetune_only", pairing="seed"))
