"""
Noise generators
================

Generators re-noise a source sequence as if it came from another scene.
Each one is a small chain of drop, add and jitter operations with fixed
parameters, and none of them changes the emitter label.
"""

# %%
import math

import numpy as np

from pridg.augment import AddPulses, DropPulses, build_augmented_set, default_bank
from pridg.sim import P_TRAIN, default_roster, make_dataset

np.set_printoptions(precision=1, suppress=True, linewidth=110)

# %% [markdown]
# The default bank holds one generator led by each operation family.

# %%
bank = default_bank(seed=0)
for g in bank:
    print(g.id, g.ops)

# %% [markdown]
# Dropping fuses intervals and adding splits them; either way the total time is kept.

# %%
pris = np.array([400.0, 500.0, 600.0] * 4)
fused = DropPulses(0.4).apply(pris, np.random.default_rng(0))
split = AddPulses(0.5).apply(pris, np.random.default_rng(0))
print("source", pris, math.fsum(pris))
print("fused ", fused, math.fsum(fused))
print("split ", split, math.fsum(split))

# %% [markdown]
# The augmented set pairs every source sample with one re-noised copy per generator.

# %%
source = make_dataset(default_roster(), P_TRAIN, 20, 128, seed=0)
augmented = build_augmented_set(source, bank, seed=1)
print(len(source), "source samples ->", len(augmented), "augmented samples")
print("domains", np.unique(augmented.domains), "labels kept:", np.array_equal(augmented.labels, source.labels[augmented.source_index]))
