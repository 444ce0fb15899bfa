"""End-to-end desk-scale experiment: DG model vs. the ERM baseline, plus the few-shot curve."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .augment import default_bank
from .evaluate import TEST_PRESETS, Metrics, average_metrics, config_hash, eval_accuracy, eval_set_seed, eval_suite, make_report
from .model import DgModel, ModelConfig
from .sim import P4, P_TRAIN, default_roster, make_dataset, normalization_scale
from .train import TrainConfig, fewshot_finetune, train

log = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    seeds: tuple = (0, 1, 2)
    n_train_per_class: int = 300
    n_test_per_class: int = 200
    seq_len: int = 128
    epochs: int = 30
    fewshot_ns: tuple = (1, 5, 10, 20)
    train: dict = field(default_factory=dict)  # extra TrainConfig overrides

    def train_config(self, seed: int, **kw) -> TrainConfig:
        base = dict(epochs=self.epochs, seq_len=self.seq_len, seed=seed)
        base.update(self.train)
        base.update(kw)
        return TrainConfig(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"], d["fewshot_ns"] = list(self.seeds), list(self.fewshot_ns)
        return d


@dataclass
class SeedResult:
    metrics: dict  # method -> preset -> Metrics
    fewshot: dict  # n -> P4 accuracy of the fine-tuned DG model
    seconds: float


def run_seed(cfg: ExperimentConfig, seed: int, roster=None) -> SeedResult:
    t0 = time.perf_counter()
    roster = list(roster or default_roster())
    mcfg = ModelConfig(seq_len=cfg.seq_len, scale=normalization_scale(roster), n_classes=len(roster))
    source = make_dataset(roster, P_TRAIN, cfg.n_train_per_class, cfg.seq_len, seed=seed)

    dg_cfg = cfg.train_config(seed)
    bank = default_bank(seed, k=dg_cfg.n_generators, ranges={k: tuple(v) for k, v in dg_cfg.ranges.items()})
    mcfg = replace(mcfg, n_domains=bank.n_domains)
    dg, _ = train(DgModel(mcfg, seed=seed), source, bank, dg_cfg)
    erm_cfg = cfg.train_config(seed, alpha=0.0, beta=0.0, n_generators=0)
    erm, _ = train(DgModel(mcfg, seed=seed), source, None, erm_cfg)

    metrics = {
        "DG": eval_suite(dg, TEST_PRESETS, roster, cfg.n_test_per_class, seed, cfg.seq_len),
        "ERM": eval_suite(erm, TEST_PRESETS, roster, cfg.n_test_per_class, seed, cfg.seq_len),
    }
    # labeled target pool drawn apart from the P4 test set
    pool = make_dataset(roster, P4, max(cfg.fewshot_ns, default=1), cfg.seq_len, seed=(0xF5, seed))
    test_p4 = make_dataset(roster, P4, cfg.n_test_per_class, cfg.seq_len, seed=eval_set_seed(seed, TEST_PRESETS.index("p4")))
    curve = {0: metrics["DG"]["p4"].overall_acc}
    for n in cfg.fewshot_ns:
        tuned = fewshot_finetune(dg, pool, n, dg_cfg, source=source, bank=bank)
        curve[n] = eval_accuracy(tuned, test_p4, roster).overall_acc
    dt = time.perf_counter() - t0
    log.info("seed %d done in %.0fs: DG %s ERM %s few-shot %s", seed, dt,
             {p: round(m.overall_acc, 3) for p, m in metrics["DG"].items()},
             {p: round(m.overall_acc, 3) for p, m in metrics["ERM"].items()}, curve)
    return SeedResult(metrics, curve, dt)


def _seed_average(items: list[Metrics]) -> Metrics:
    m = average_metrics(items, [str(i) for i in range(len(items))])
    keys = set.intersection(*(set(i.per_scenario) for i in items))
    m.per_scenario = {k: float(np.mean([i.per_scenario[k] for i in items])) for k in sorted(keys)}
    return m


def summarize(results: list[SeedResult]) -> tuple[dict, dict]:
    """Seed-averaged metrics (method -> preset -> Metrics) and few-shot curve (n -> accuracy)."""
    methods = results[0].metrics.keys()
    metrics = {
        name: {p: _seed_average([r.metrics[name][p] for r in results]) for p in results[0].metrics[name]}
        for name in methods
    }
    ns = sorted(results[0].fewshot)
    curve = {n: float(np.mean([r.fewshot[n] for r in results])) for n in ns}
    return metrics, curve


def run_experiment(cfg: ExperimentConfig | None = None, out_dir: str | Path | None = None):
    """Run every seed, average, and (with ``out_dir``) write the report files."""
    cfg = cfg or ExperimentConfig()
    results = [run_seed(cfg, s) for s in cfg.seeds]
    metrics, curve = summarize(results)
    if out_dir is not None:
        provenance = {"config_hash": config_hash(cfg.to_dict()), "seeds": list(cfg.seeds)}
        make_report(metrics, {"DG": curve}, out_dir, provenance)
        Path(out_dir, "experiment.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    return metrics, curve, results
