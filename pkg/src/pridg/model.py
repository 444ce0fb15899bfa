"""Recognition model: conv feature extractor F, label head C, domain head D.

D sits behind a gradient-reversal layer.  Its own weights are trained to
recognise the scene a sample came from, while F receives the reversed,
``beta``-scaled gradient and is pushed toward scene-invariant features.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .nn import (
    DTYPE,
    Conv1d,
    Flatten,
    GradReverse,
    Linear,
    MaxPool1d,
    ReLU,
    Sequential,
    cross_entropy,
    read_checkpoint,
    softmax,
    write_checkpoint,
)


INPUT_MODES = ("sequence", "sorted", "histogram")


def _smoothing_matrix(n_bins: int, sigma: float) -> np.ndarray:
    d = np.arange(n_bins)[:, None] - np.arange(n_bins)[None, :]
    k = np.exp(-0.5 * (d / sigma) ** 2)
    return k / k.sum(axis=1, keepdims=True)


def log_histogram(pris: np.ndarray, edges: np.ndarray, gain: float = 8.0, smooth: float = 0.0) -> np.ndarray:
    """Per-row share of positive PRIs in each bin, times ``gain``; out-of-range values go to the end bins.

    ``smooth`` > 0 spreads each count over neighbouring bins with a Gaussian of
    that many bins, keeping every PRI's unit mass.
    """
    n_bins = edges.size - 1
    idx = np.clip(np.searchsorted(edges, pris, side="right") - 1, 0, n_bins - 1)
    valid = pris > 0
    rows = np.broadcast_to(np.arange(pris.shape[0])[:, None], pris.shape)
    out = np.zeros((pris.shape[0], n_bins), dtype=np.float64)
    np.add.at(out, (rows[valid], idx[valid]), 1.0)
    if smooth > 0:
        out = out @ _smoothing_matrix(n_bins, smooth)
    counts = np.maximum(valid.sum(axis=1, keepdims=True), 1)
    return (gain * out / counts).astype(DTYPE)


@dataclass
class ModelConfig:
    seq_len: int = 128
    channels: tuple = (16, 32, 64, 64)
    kernel: int = 5
    stride: int = 1
    pool: int = 2
    hidden: tuple = (128, 64)
    n_classes: int = 10
    n_domains: int = 4
    scale: float = 4800.0
    # "sequence": scaled PRIs in arrival order; "sorted": scaled PRIs sorted ascending;
    # "histogram": share of PRIs per log-spaced bin between hist_min and scale, smoothed over hist_smooth bins
    input_mode: str = "histogram"
    hist_min: float = 20.0
    hist_smooth: float = 1.5  # Gaussian smoothing of the histogram, in bins

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.hidden = tuple(int(h) for h in self.hidden)
        if len(self.channels) != 4:
            raise ValueError("the feature extractor has exactly four conv blocks")
        if len(self.hidden) != 2:
            raise ValueError("the label head has exactly three linear layers (two hidden sizes)")
        if self.n_domains < 1 or self.n_classes < 2:
            raise ValueError("need n_domains >= 1 and n_classes >= 2")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f"input_mode must be one of {INPUT_MODES}")
        if not 0 < self.hist_min < self.scale:
            raise ValueError("need 0 < hist_min < scale")
        if self.hist_smooth < 0:
            raise ValueError("hist_smooth must be >= 0")

    def bin_edges(self) -> np.ndarray:
        return np.geomspace(self.hist_min, self.scale, self.seq_len + 1)

    def feature_length(self) -> int:
        L = self.seq_len
        for _ in self.channels:
            L = (L - self.kernel) // self.stride + 1
            L //= self.pool
            if L < 1:
                raise ValueError(f"seq_len {self.seq_len} too short for the conv stack")
        return L

    @property
    def feature_dim(self) -> int:
        return self.channels[-1] * self.feature_length()


@dataclass
class ModelOutputs:
    h: np.ndarray
    y_hat: np.ndarray
    z_hat: np.ndarray | None = None

    def __post_init__(self):
        B = self.h.shape[0]
        if self.y_hat.shape[0] != B or (self.z_hat is not None and self.z_hat.shape[0] != B):
            raise ValueError("batch dimensions of h, y_hat and z_hat disagree")


@dataclass
class LossTerms:
    label_ce: float
    align: float
    domain_ce: float
    alpha: float
    beta: float
    total: float = field(init=False)

    def __post_init__(self):
        self.total = self.label_ce + self.alpha * self.align - self.beta * self.domain_ce

    def as_dict(self) -> dict:
        return asdict(self)


class DgModel:
    def __init__(self, config: ModelConfig | None = None, seed=0, grl_lambda: float = 1.0):
        self.config = cfg = config or ModelConfig()
        rng = np.random.default_rng(seed)
        blocks = []
        in_ch = 1
        for out_ch in cfg.channels:
            blocks += [Conv1d(in_ch, out_ch, cfg.kernel, cfg.stride, rng=rng), MaxPool1d(cfg.pool), ReLU()]
            in_ch = out_ch
        self.F = Sequential(*blocks, Flatten())
        d = cfg.feature_dim
        h1, h2 = cfg.hidden
        self.C = Sequential(Linear(d, h1, rng=rng), ReLU(), Linear(h1, h2, rng=rng), ReLU(), Linear(h2, cfg.n_classes, rng=rng))
        self.grl = GradReverse(grl_lambda)
        self.D = Sequential(Linear(d, cfg.n_domains, rng=rng))

    @property
    def grl_lambda(self) -> float:
        return self.grl.lam

    def params(self):
        return self.F.params() + self.C.params() + self.D.params()

    def named_params(self):
        out = []
        for head_name, head in (("F", self.F), ("C", self.C), ("D", self.D)):
            for i, layer in enumerate(head.layers):
                for pname, p in zip(("weight", "bias"), layer.params()):
                    out.append((f"{head_name}.{i}.{pname}", p))
        return out

    def zero_grad(self) -> None:
        for p in self.params():
            p.grad = None

    def copy(self) -> "DgModel":
        return copy.deepcopy(self)

    def prepare(self, pris: np.ndarray) -> np.ndarray:
        """Raw PRI windows (B, L) in microseconds -> scaled float32 input (B, 1, L)."""
        pris = np.asarray(pris)
        if pris.ndim == 1:
            pris = pris[None]
        cfg = self.config
        if cfg.input_mode == "histogram":
            return log_histogram(pris, cfg.bin_edges(), smooth=cfg.hist_smooth)[:, None, :]
        if cfg.input_mode == "sorted":
            pris = np.sort(pris, axis=-1)
        return (pris / cfg.scale).astype(DTYPE)[:, None, :]

    def extract_features(self, batch: np.ndarray) -> np.ndarray:
        if batch.ndim != 3 or batch.shape[1] != 1 or batch.shape[2] != self.config.seq_len:
            raise ValueError(f"expected input (B, 1, {self.config.seq_len}), got {batch.shape}")
        return self.F.forward(batch)

    def _check_h(self, h: np.ndarray) -> None:
        if h.ndim != 2 or h.shape[1] != self.config.feature_dim:
            raise ValueError(f"expected features (B, {self.config.feature_dim}), got {h.shape}")

    def classify_labels(self, h: np.ndarray) -> np.ndarray:
        self._check_h(h)
        return self.C.forward(h)

    def classify_domain(self, h: np.ndarray, lam: float | None = None) -> np.ndarray:
        self._check_h(h)
        if lam is not None:
            self.grl.lam = lam
        return self.D.forward(self.grl.forward(h))

    def forward(self, batch: np.ndarray, lam: float | None = None, domain: bool = True) -> ModelOutputs:
        h = self.extract_features(batch)
        y_hat = self.classify_labels(h)
        z_hat = self.classify_domain(h, lam) if domain else None
        return ModelOutputs(h, y_hat, z_hat)

    def backward(self, grad_y=None, grad_z=None, grad_h=None) -> np.ndarray:
        """Backprop through whichever heads were run; returns the input gradient."""
        total = None if grad_h is None else np.array(grad_h, dtype=DTYPE)
        if grad_y is not None:
            g = self.C.backward(grad_y)
            total = g if total is None else total + g
        if grad_z is not None:
            g = self.grl.backward(self.D.backward(grad_z))
            total = g if total is None else total + g
        if total is None:
            raise ValueError("nothing to backpropagate")
        return self.F.backward(total)

    def predict(self, pris: np.ndarray, batch_size: int = 512) -> np.ndarray:
        pris = np.asarray(pris)
        out = np.empty(len(pris), dtype=np.int64)
        for i in range(0, len(pris), batch_size):
            h = self.extract_features(self.prepare(pris[i : i + batch_size]))
            out[i : i + batch_size] = self.classify_labels(h).argmax(axis=1)
        return out

    def domain_proba(self, h: np.ndarray) -> np.ndarray:
        return softmax(self.classify_domain(h))

    # -- checkpoints -------------------------------------------------------

    def manifest(self, **extra) -> dict:
        cfg = asdict(self.config)
        cfg["channels"] = list(cfg["channels"])
        cfg["hidden"] = list(cfg["hidden"])
        return {
            "model": cfg,
            "grl_lambda": self.grl_lambda,
            "layers": {"F": self.F.manifest(), "C": self.C.manifest(), "D": self.D.manifest()},
            **extra,
        }

    def save(self, path: str | Path, **extra) -> None:
        with open(path, "wb") as fh:
            write_checkpoint(fh, self.named_params(), self.manifest(**extra))

    @classmethod
    def load(cls, path: str | Path) -> tuple["DgModel", dict]:
        with open(path, "rb") as fh:
            manifest, arrays = read_checkpoint(fh)
        model = cls(ModelConfig(**manifest["model"]), seed=0, grl_lambda=manifest.get("grl_lambda", 1.0))
        for name, p in model.named_params():
            if arrays[name].shape != p.shape:
                raise ValueError(f"checkpoint tensor {name} has shape {arrays[name].shape}, expected {p.shape}")
            p.data = arrays[name].copy()
        return model, manifest


def grad_reverse(h: np.ndarray, lam: float) -> tuple[np.ndarray, GradReverse]:
    """Identity forward; the returned layer's ``backward`` scales gradients by ``-lam``."""
    layer = GradReverse(lam)
    return layer.forward(h), layer


def _loss_and_grads(out: ModelOutputs, out_plus: ModelOutputs | None, y, z, alpha: float, beta: float):
    if out_plus is not None and out_plus.h.shape != out.h.shape:
        raise ValueError(f"unpaired batch: {out.h.shape[0]} source rows vs {out_plus.h.shape[0]} augmented rows")
    if out_plus is None:
        y_hat, z_hat = out.y_hat, out.z_hat
    else:
        y_hat = np.concatenate([out.y_hat, out_plus.y_hat])
        z_hat = None if out.z_hat is None else np.concatenate([out.z_hat, out_plus.z_hat])
    label_ce, g_y = cross_entropy(y_hat, y)
    g_z = None
    domain_ce = 0.0
    if z_hat is not None and z is not None:
        domain_ce, g_z = cross_entropy(z_hat, z)
    align = 0.0
    g_h = None
    if out_plus is not None:
        diff = out.h - out_plus.h
        P = diff.shape[0]
        align = float(np.sum(diff.astype(np.float64) ** 2) / P)
        if alpha:
            g = (2.0 * alpha / P) * diff
            g_h = np.concatenate([g, -g]).astype(out.h.dtype)
    return LossTerms(label_ce, align, domain_ce, alpha, beta), (g_y, g_z, g_h)


def compute_loss(out: ModelOutputs, out_plus: ModelOutputs | None, y, z, alpha: float, beta: float) -> LossTerms:
    """Decomposed objective on a batch of source rows and their paired augmentations.

    ``y`` and ``z`` are one-hot targets for the stacked batch ``[x; x+]``;
    row ``i`` of ``out_plus`` must be the augmentation of row ``i`` of ``out``.
    """
    return _loss_and_grads(out, out_plus, y, z, alpha, beta)[0]
