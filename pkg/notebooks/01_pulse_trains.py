"""
Pulse trains and noise scenes
=============================

Clean PRI patterns for each emitter in the bundled roster, and what the
four test scenes do to them.  Run with ``python notebooks/01_pulse_trains.py``.
"""

# %%
import numpy as np

from pridg.sim import PRESETS, add_measurement_error, add_spurious, corrupted_stream, default_roster, drop_pulses, emitter_name, gen_clean_toa, toa_to_pri

np.set_printoptions(precision=0, suppress=True, linewidth=110)
roster = default_roster()

# %% [markdown]
# Ten emitters, six modulation families.  The first eight PRIs of each clean train:

# %%
for spec in roster:
    pri = toa_to_pri(gen_clean_toa(spec, 9, seed=0))
    print(f"{emitter_name(spec):5s} {spec.modulation.short:4s}", pri.pris)

# %% [markdown]
# A scene is a triple (measurement error, missing ratio, spurious ratio).
# Missing pulses fuse neighbouring intervals, spurious ones split them.

# %%
spec = roster[5]  # STG1, a three-level stagger
toa = gen_clean_toa(spec, 40, seed=1)
kept, stats = drop_pulses(toa, 0.3, seed=2)
noisy = add_spurious(kept, 0.6, 0.3, seed=3)
pri = add_measurement_error(toa_to_pri(noisy), 0.05, seed=4)
print("clean    ", toa_to_pri(toa).pris[:12])
print("missing  ", toa_to_pri(kept).pris[:12])
print("spurious ", toa_to_pri(noisy).pris[:12])
print("measured ", pri.pris[:12])

# %% [markdown]
# Median PRI of the same emitter under each preset: fusion drives it up,
# splitting drives it down, and P4 is the hardest mix.

# %%
for j, name in enumerate(("train", "p1", "p2", "p3", "p4")):
    x = np.stack([corrupted_stream(spec, PRESETS[name], 128, seed=[j, i]) for i in range(200)])
    print(f"{name:6s} {PRESETS[name].as_tuple()}  median PRI {np.median(x):6.0f}  spread {np.std(x):6.0f}")
