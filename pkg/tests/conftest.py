import numpy as np
import pytest

from pridg.model import DgModel, ModelConfig
from pridg.nn import SGD, cross_entropy, one_hot


def small_config(rng: np.random.Generator, **kw) -> ModelConfig:
    """A narrow random instance of the architecture, cheap enough for finite differences."""
    base = dict(
        seq_len=int(rng.integers(46, 72)),
        channels=tuple(int(c) for c in rng.integers(1, 4, size=4)),
        kernel=int(rng.integers(2, 4)),
        hidden=(int(rng.integers(3, 7)), int(rng.integers(3, 6))),
        n_classes=int(rng.integers(2, 5)),
        n_domains=int(rng.integers(2, 5)),
    )
    base.update(kw)
    return ModelConfig(**base)


def make_small_model(seed: int = 0, **kw) -> DgModel:
    rng = np.random.default_rng(seed)
    model = DgModel(small_config(rng, **kw), seed=seed)
    # zero biases put dead units exactly on the ReLU kink, where central differences are one-sided
    for name, p in model.named_params():
        if name.endswith("bias"):
            p.data[...] = rng.normal(0, 0.1, size=p.shape)
    return model


@pytest.fixture
def small_model():
    return make_small_model


def plain_classifier_run(model: DgModel, s, cfg):
    """Reference trajectory: cross-entropy on F then C with the same batches and schedule, nothing else."""
    opt = SGD(model.F.params() + model.C.params(), cfg.lr, cfg.momentum)
    spe = -(-len(s) // cfg.batch_size)
    total = cfg.epochs * spe
    for step in range(total):
        epoch, i = divmod(step, spe)
        rows = np.random.default_rng([cfg.seed, epoch]).permutation(len(s))[i * cfg.batch_size : (i + 1) * cfg.batch_size]
        logits = model.C.forward(model.F.forward(model.prepare(s.x[rows])))
        _, g = cross_entropy(logits, one_hot(s.labels[rows], model.config.n_classes))
        opt.zero_grad()
        model.F.backward(model.C.backward(g))
        opt.lr = cfg.lr_at(step, total)
        opt.step()
    return model


# one summary line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
