"""Training loop over source samples and their augmented pairs, plus few-shot fine-tuning."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .augment import DEFAULT_RANGES, GeneratorBank, build_augmented_set, default_bank
from .model import DgModel, ModelOutputs, _loss_and_grads
from .nn import SGD, one_hot
from .sim import Dataset

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    alpha: float = 0.1
    beta: float = 0.1
    beta_warmup_frac: float = 0.2
    n_generators: int = 3
    seq_len: int = 128
    seed: int = 0
    checkpoint_dir: str | None = None
    ranges: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_RANGES.items()})
    resample_bank: bool = True
    fewshot_epochs: int = 5
    fewshot_lr_factor: float = 0.1
    fewshot_fraction: float = 0.5
    lr_schedule: str = "cosine"  # or "constant"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValueError("batch_size must be an even number >= 2")
        if self.lr < 0 or self.momentum < 0 or self.alpha < 0 or self.beta < 0:
            raise ValueError("lr, momentum, alpha and beta must be >= 0")
        if not 0 <= self.beta_warmup_frac <= 1:
            raise ValueError("beta_warmup_frac must be in [0, 1]")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")

    def lr_at(self, step: int, total_steps: int) -> float:
        if self.lr_schedule == "constant":
            return self.lr
        return 0.5 * self.lr * (1 + np.cos(np.pi * step / total_steps))

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def erm(cls, **kw) -> "TrainConfig":
        """Plain supervised baseline: no augmentation, no alignment, no domain head."""
        return cls(alpha=0.0, beta=0.0, n_generators=0, **kw)


@dataclass
class TrainStats:
    label_ce: list = field(default_factory=list)
    align: list = field(default_factory=list)
    domain_ce: list = field(default_factory=list)
    total: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    domain_acc: list = field(default_factory=list)
    steps: list = field(default_factory=list)

    def epoch_record(self, epoch: int) -> dict:
        return {
            "epoch": epoch,
            "label_ce": self.label_ce[epoch],
            "align": self.align[epoch],
            "domain_ce": self.domain_ce[epoch],
            "total": self.total[epoch],
            "train_acc": self.train_acc[epoch],
            "domain_acc": self.domain_acc[epoch],
        }


@dataclass
class Batch:
    x: np.ndarray  # raw PRIs, (B, L): source rows first, then their augmentations
    labels: np.ndarray
    domains: np.ndarray
    n_pairs: int
    source_rows: np.ndarray


def steps_per_epoch(n_source: int, batch_size: int, paired: bool) -> int:
    per = batch_size // 2 if paired else batch_size
    return -(-n_source // per)


def make_minibatch(s: Dataset, s_plus: Dataset | None, b: int, seed: int, step: int) -> Batch:
    """Batch number ``step`` of the deterministic schedule.

    Each epoch walks a fresh permutation of the source set (seeded by
    ``(seed, epoch)``).  With ``s_plus``, a batch holds ``b/2`` source rows
    followed by their augmentations from generator ``step mod K``; without
    it, ``b`` source rows.  The last batch of an epoch may be short.
    """
    paired = s_plus is not None
    per = b // 2 if paired else b
    n = len(s)
    if per > n:
        raise ValueError(f"batch needs {per} source samples but the source set has {n}")
    spe = steps_per_epoch(n, b, paired)
    epoch, i = divmod(step, spe)
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    rows = perm[i * per : (i + 1) * per]
    if not paired:
        return Batch(s.x[rows], s.labels[rows], s.domains[rows], 0, rows)
    gen_ids = np.unique(s_plus.domains)
    k = step % len(gen_ids)
    plus_rows = k * n + rows
    if not (np.all(s_plus.source_index[plus_rows] == rows) and np.all(s_plus.domains[plus_rows] == gen_ids[k])):
        raise ValueError("augmented set pairing index does not match the source set")
    return Batch(
        np.concatenate([s.x[rows], s_plus.x[plus_rows]]),
        np.concatenate([s.labels[rows], s_plus.labels[plus_rows]]),
        np.concatenate([s.domains[rows], s_plus.domains[plus_rows]]),
        len(rows),
        rows,
    )


def _epoch_bank(bank: GeneratorBank, cfg: TrainConfig, epoch: int) -> GeneratorBank:
    if epoch == 0 or not cfg.resample_bank or len(bank) == 0:
        return bank
    ranges = {k: tuple(v) for k, v in cfg.ranges.items()}
    return default_bank([cfg.seed, 0xB4, epoch], k=len(bank), ranges=ranges)


def train(model: DgModel, s: Dataset, bank: GeneratorBank | None, cfg: TrainConfig) -> tuple[DgModel, TrainStats]:
    """Train ``model`` in place and return it with per-epoch statistics.

    An empty bank (or ``None``) trains the label path only: no augmented
    pairs, no alignment term and no domain head.
    """
    bank = bank if bank is not None else GeneratorBank([])
    paired = len(bank) > 0
    if len(s) == 0:
        raise ValueError("source dataset is empty")
    if s.seq_len != model.config.seq_len:
        raise ValueError(f"dataset seq_len {s.seq_len} != model seq_len {model.config.seq_len}")
    if paired and bank.n_domains > model.config.n_domains:
        raise ValueError(f"bank needs {bank.n_domains} domain classes, model has {model.config.n_domains}")

    opt = SGD(model.params(), cfg.lr, cfg.momentum)
    spe = steps_per_epoch(len(s), cfg.batch_size, paired)
    total_steps = cfg.epochs * spe
    warmup = cfg.beta_warmup_frac * total_steps
    n_cls, n_dom = model.config.n_classes, model.config.n_domains
    stats = TrainStats()
    ckpt_dir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        (ckpt_dir / "train_log.jsonl").write_text("")

    for epoch in range(cfg.epochs):
        s_plus = None
        if paired:
            epoch_bank = _epoch_bank(bank, cfg, epoch)
            s_plus = build_augmented_set(s, epoch_bank, seed=[cfg.seed, 0xA6, epoch])
        sums = np.zeros(4)
        correct = seen = dom_correct = dom_seen = 0
        for i in range(spe):
            step = epoch * spe + i
            beta = cfg.beta if warmup == 0 else cfg.beta * min(1.0, step / warmup)
            opt.lr = cfg.lr_at(step, total_steps)
            batch = make_minibatch(s, s_plus, cfg.batch_size, cfg.seed, step)
            x = model.prepare(batch.x)
            y = one_hot(batch.labels, n_cls)
            h = model.extract_features(x)
            y_hat = model.classify_labels(h)
            if paired:
                z_hat = model.classify_domain(h, beta)
                P = batch.n_pairs
                out = ModelOutputs(h[:P], y_hat[:P], z_hat[:P])
                out_plus = ModelOutputs(h[P:], y_hat[P:], z_hat[P:])
                z = one_hot(batch.domains, n_dom)
            else:
                out, out_plus, z = ModelOutputs(h, y_hat, None), None, None
            terms, (g_y, g_z, g_h) = _loss_and_grads(out, out_plus, y, z, cfg.alpha, beta)
            if not np.isfinite([terms.label_ce, terms.align, terms.domain_ce]).all():
                raise TrainingError(f"non-finite loss at epoch {epoch} step {step}: {terms.as_dict()}")
            opt.zero_grad()
            model.backward(g_y, g_z, g_h)
            opt.step()

            stats.steps.append({"step": step, **terms.as_dict()})
            B = len(batch.labels)
            sums += B * np.array([terms.label_ce, terms.align, terms.domain_ce, terms.total])
            correct += int((y_hat.argmax(1) == batch.labels).sum())
            seen += B
            if paired:
                dom_correct += int((z_hat.argmax(1) == batch.domains).sum())
                dom_seen += B
        means = sums / seen
        stats.label_ce.append(float(means[0]))
        stats.align.append(float(means[1]))
        stats.domain_ce.append(float(means[2]))
        stats.total.append(float(means[3]))
        stats.train_acc.append(correct / seen)
        stats.domain_acc.append(dom_correct / dom_seen if dom_seen else 0.0)
        record = stats.epoch_record(epoch)
        log.info("epoch %d %s", epoch, record)
        if ckpt_dir:
            with open(ckpt_dir / "train_log.jsonl", "a") as fh:
                fh.write(json.dumps(record) + "\n")
            # the output location is left out so identical runs give identical files
            stored = json.loads(replace(cfg, checkpoint_dir=None).to_json())
            model.save(ckpt_dir / "checkpoint.ckpt", train_config=stored, epoch=epoch)
            if paired:
                epoch_bank.save(ckpt_dir / "bank.json")
    return model, stats


def select_per_class(ds: Dataset, n: int, seed=0) -> tuple[np.ndarray, np.ndarray]:
    """Indices of ``n`` random samples per class, and the indices of everything else."""
    rng = np.random.default_rng(seed)
    picked = []
    for c in np.unique(ds.labels):
        idx = np.flatnonzero(ds.labels == c)
        if n > idx.size:
            raise ValueError(f"class {c} has {idx.size} samples, asked for {n}")
        picked.append(rng.permutation(idx)[:n])
    chosen = np.sort(np.concatenate(picked)) if picked else np.array([], dtype=np.int64)
    rest = np.setdiff1d(np.arange(len(ds)), chosen)
    return chosen, rest


def fewshot_finetune(
    model: DgModel,
    target: Dataset,
    n: int,
    cfg: TrainConfig,
    source: Dataset | None = None,
    bank: GeneratorBank | None = None,
) -> DgModel:
    """Continue training a copy of ``model`` with ``n`` labeled target samples per class.

    The target samples are repeated until they make up about
    ``cfg.fewshot_fraction`` of the source set and mixed into it; training then
    runs ``cfg.fewshot_epochs`` epochs at ``lr * cfg.fewshot_lr_factor`` with
    the reversal strength already at full ``beta``.
    """
    if n == 0:
        return model
    picked, _ = select_per_class(target, n, seed=[cfg.seed, 0xF5])
    few = target.subset(picked)
    few.domains[:] = 0
    if source is not None:
        reps = max(1, int(round(cfg.fewshot_fraction * len(source) / len(few))))
        rep = few.subset(np.tile(np.arange(len(few)), reps))
        mixed = _concat(source, rep)
    else:
        mixed = few
    if bank is None:
        bank = default_bank([cfg.seed, 0xF5], k=cfg.n_generators, ranges={k: tuple(v) for k, v in cfg.ranges.items()})
    ft_cfg = replace(
        cfg,
        epochs=cfg.fewshot_epochs,
        lr=cfg.lr * cfg.fewshot_lr_factor,
        beta_warmup_frac=0.0,
        checkpoint_dir=None,
        seed=cfg.seed + 7919 * n,
    )
    tuned, _ = train(model.copy(), mixed, bank, ft_cfg)
    return tuned


def _concat(a: Dataset, b: Dataset) -> Dataset:
    if (a.tail is None) != (b.tail is None):
        raise ValueError("cannot mix datasets with and without tails")
    return Dataset(
        np.concatenate([a.x, b.x]),
        np.concatenate([a.labels, b.labels]),
        np.concatenate([a.domains, b.domains]),
        a.scenario,
        a.seed,
        a.roster,
        a.roster_version,
        tail=None if a.tail is None else np.concatenate([a.tail, b.tail]),
    )
