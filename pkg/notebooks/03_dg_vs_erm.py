"""
Domain generalization vs. plain training
========================================

A small single-seed run: train the generator-augmented adversarial model and
the plain classifier on the training scene, then score both on P1-P4.  About
two minutes on one core; ``pridg experiment`` runs the full three-seed version.
"""

# %%
from dataclasses import replace

from pridg.augment import default_bank
from pridg.evaluate import eval_suite, render_markdown
from pridg.model import DgModel, ModelConfig
from pridg.sim import P_TRAIN, default_roster, make_dataset
from pridg.train import TrainConfig, train

roster = default_roster()
source = make_dataset(roster, P_TRAIN, 100, 128, seed=0)

# %% [markdown]
# The DG model sees source batches paired with re-noised copies.  Its domain head
# sits behind gradient reversal, so the features learn to hide which scene
# a sequence came from.

# %%
cfg = TrainConfig(epochs=15, seed=0)
bank = default_bank(0)
dg, dg_stats = train(DgModel(ModelConfig(n_domains=bank.n_domains), seed=0), source, bank, cfg)
erm, erm_stats = train(DgModel(ModelConfig(), seed=0), source, None, replace(cfg, alpha=0.0, beta=0.0, n_generators=0))
print("train accuracy  DG %.3f  ERM %.3f" % (dg_stats.train_acc[-1], erm_stats.train_acc[-1]))

# %%
metrics = {name: eval_suite(m, n_per_class=100, seed=0) for name, m in (("DG", dg), ("ERM", erm))}
print(render_markdown(metrics))
