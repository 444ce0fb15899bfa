"""Acceptance criteria 1-11, one summary line each (see the terminal summary section).

Criteria 1-6 are fast property checks. Criteria 7-11 share one desk-scale DG vs. ERM
experiment over three seeds; set PRIDG_ACCEPTANCE_OUT to keep its report files.
"""
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from pridg.augment import DEFAULT_RANGES, AddPulses, DropPulses, GeneratorBank, apply_generator, sample_generator
from pridg.cli import main
from pridg.evaluate import MODULATION_ORDER, parse_report
from pridg.experiment import ExperimentConfig, run_experiment
from pridg.model import DgModel, ModelConfig
from pridg.nn import Conv1d, Flatten, GradReverse, Linear, MaxPool1d, ReLU, Sequential, Softmax, cross_entropy, grad_check, one_hot
from pridg.sim import PRESETS, PriSequence, ToaSequence, add_spurious, default_roster, drop_pulses, make_dataset, missing_ratio, P_TRAIN
from pridg.train import TrainConfig, train

from conftest import ACCEPTANCE_LINES, make_small_model, plain_classifier_run

N_CASES = 50
EXPERIMENT_BUDGET_S = 30 * 60


def record(n, ok, detail):
    ACCEPTANCE_LINES[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    assert ok, detail


# -- 1. gradient fidelity ---------------------------------------------------------------


def _random_layer(kind, rng):
    b = int(rng.integers(1, 4))
    if kind == "conv1d":
        c_in, c_out, k = (int(v) for v in rng.integers(1, 4, size=3))
        stride = int(rng.integers(1, 3))
        return Conv1d(c_in, c_out, k + 1, stride=stride, rng=rng), rng.standard_normal((b, c_in, int(rng.integers(k + 2, 14))))
    if kind == "linear":
        n_in, n_out = (int(v) for v in rng.integers(1, 7, size=2))
        return Linear(n_in, n_out, rng=rng), rng.standard_normal((b, n_in))
    if kind == "maxpool1d":
        return MaxPool1d(int(rng.integers(2, 4))), rng.standard_normal((b, 2, int(rng.integers(4, 13))))
    if kind == "relu":
        return ReLU(), rng.standard_normal((b, 7))
    if kind == "softmax":
        return Softmax(), rng.standard_normal((b, int(rng.integers(2, 8))))
    if kind == "flatten":
        return Flatten(), rng.standard_normal((b, 2, 5))
    if kind == "grad_reverse":
        return GradReverse(float(rng.uniform(0, 2))), rng.standard_normal((b, 4))
    raise ValueError(kind)


LAYER_KINDS = ["conv1d", "linear", "maxpool1d", "relu", "softmax", "flatten", "grad_reverse"]


def _path_error(seed, path):
    m = make_small_model(seed)
    rng = np.random.default_rng(1000 + seed)
    # continuous inputs on the scale of histogram features; exact zeros would tie in max-pooling
    x = rng.uniform(0.0, 1.0, size=(4, 1, m.config.seq_len))
    if path == "label":
        t = one_hot(rng.integers(0, m.config.n_classes, 4), m.config.n_classes, np.float64)
        frag = Sequential(*m.F.layers, *m.C.layers)
    else:
        t = one_hot(rng.integers(0, m.config.n_domains, 4), m.config.n_domains, np.float64)
        m.grl.lam = float(rng.uniform(0.1, 1.0))
        frag = Sequential(*m.F.layers, m.grl, *m.D.layers)
    return grad_check(frag, x, loss=lambda o: cross_entropy(o, t))


def test_criterion_01_gradient_fidelity():
    layer_worst = {}
    for kind in LAYER_KINDS:
        errs = []
        for case in range(N_CASES):
            layer, x = _random_layer(kind, np.random.default_rng([1, LAYER_KINDS.index(kind), case]))
            errs.append(grad_check(layer, x, seed=case))
        layer_worst[kind] = max(errs)
    path_worst = {p: max(_path_error(s, p) for s in range(N_CASES)) for p in ("label", "domain")}
    ok = max(layer_worst.values()) < 1e-4 and max(path_worst.values()) < 1e-3
    record(1, ok, f"{N_CASES} cases each; worst layer err {max(layer_worst.values()):.1e} (< 1e-4), "
                  f"F.C {path_worst['label']:.1e}, F.GRL.D {path_worst['domain']:.1e} (< 1e-3)")


# -- 2. gradient reversal identity ---------------------------------------------------------


def test_criterion_02_grl_negation():
    exact = 0
    for seed in range(20):
        m = make_small_model(seed)
        rng = np.random.default_rng([2, seed])
        x = rng.uniform(0.1, 3.0, size=(int(rng.integers(2, 6)), 1, m.config.seq_len)).astype(np.float32)
        z = one_hot(rng.integers(0, m.config.n_domains, len(x)), m.config.n_domains)
        grads = []
        for reversed_ in (False, True):
            m.zero_grad()
            zh = m.classify_domain(m.extract_features(x), 1.0)
            _, g = cross_entropy(zh, z)
            if reversed_:
                m.backward(grad_z=g)
            else:
                m.F.backward(m.D.backward(g))
            grads.append([p.grad.copy() for p in m.F.params()])
        exact += all(np.array_equal(r, -p) for p, r in zip(*grads))
    record(2, exact == 20, f"reversed feature gradient is the exact negation in {exact}/20 models")


# -- 3. simulator statistics -------------------------------------------------------------------


def test_criterion_03_simulator_statistics():
    worst = 0.0
    for j, name in enumerate(("p1", "p2", "p3", "p4")):
        sc = PRESETS[name]
        toa = ToaSequence(np.arange(100_000) * 1000.0)
        kept, stats = drop_pulses(toa, sc.rho_m, seed=[3, j, 0])
        out = add_spurious(kept, sc.rho_n, sc.rho_m, seed=[3, j, 1])
        per_gap = (len(out) - len(kept)) / (len(kept) - 1)
        worst = max(worst, abs(missing_ratio(stats) - sc.rho_m), abs(per_gap - sc.rho_n * (1 - sc.rho_m)))
    record(3, worst < 0.01, f"largest deviation over P1-P4 at N=1e5: {worst:.4f} (< 0.01)")


# -- 4. semantic preservation ---------------------------------------------------------------------


def test_criterion_04_semantic_preservation():
    rng = np.random.default_rng(4)
    broken = 0
    n_apps = 10_000
    for t in range(n_apps):
        pris = rng.uniform(100.0, 3000.0, size=int(rng.integers(2, 40)))
        seed = [4, t]
        # fused spans sum exactly to the merged interval
        drop = DropPulses(float(rng.uniform(0, 0.9)))
        lost = np.random.default_rng(seed).random(pris.size - 1) < drop.prob
        fused = drop.apply(pris, np.random.default_rng(seed))
        spans = np.split(pris, np.flatnonzero(~lost) + 1)
        broken += fused.size != len(spans) or any(v != math.fsum(s) for v, s in zip(fused, spans))
        # split parts sum exactly to the original interval
        add = AddPulses(float(rng.uniform(0.01, 2.0)))
        counts = np.random.default_rng(seed).poisson(add.rate, size=pris.size)
        split = add.apply(pris, np.random.default_rng(seed))
        parts = np.split(split, np.cumsum(counts + 1)[:-1]) if counts.sum() else [np.array([p]) for p in split]
        broken += len(parts) != pris.size or any(math.fsum(part) != p for part, p in zip(parts, pris))
        # labels survive whole generators
        g = sample_generator(DEFAULT_RANGES, int(rng.integers(1, 9)), seed=seed)
        label = int(rng.integers(0, 10))
        out = apply_generator(g, PriSequence(pris, label=label), seed=seed)
        broken += out.label != label or out.domain_id != g.id
    record(4, broken == 0, f"{n_apps} randomized applications, {broken} violations of time conservation or labels")


# -- 5. ERM reduction --------------------------------------------------------------------------------


def test_criterion_05_erm_reduction():
    s = make_dataset(default_roster(), P_TRAIN, 8, 128, seed=5)
    cfg = TrainConfig.erm(epochs=2, batch_size=16, seed=5)
    a, _ = train(DgModel(ModelConfig(), seed=5), s, GeneratorBank([]), cfg)
    b = plain_classifier_run(DgModel(ModelConfig(), seed=5), s, cfg)
    same = [np.array_equal(pa.data, pb.data) for pa, pb in zip(a.params(), b.params())]
    record(5, all(same), f"{sum(same)}/{len(same)} parameter tensors bit-identical to a plain classifier run")


# -- 6. determinism ---------------------------------------------------------------------------------


def _pipeline(root: Path) -> dict:
    root.mkdir()
    (root / "cfg.json").write_text('{"epochs": 2, "batch_size": 16}')
    main(["gen-data", "--n-per-class", "8", "--seed", "6", "--out", str(root / "train.npz")])
    main(["train", "--data", str(root / "train.npz"), "--config", str(root / "cfg.json"), "--out", str(root / "run")])
    main(["eval", "--checkpoint", str(root / "run" / "checkpoint.ckpt"), "--n-per-class", "5", "--seed", "6", "--out", str(root / "eval")])
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file() and p.name != "cfg.json"}


def test_criterion_06_determinism(tmp_path):
    a, b = _pipeline(tmp_path / "a"), _pipeline(tmp_path / "b")
    differ = sorted(k for k in a if a[k] != b.get(k)) + sorted(set(b) - set(a))
    record(6, not differ and "eval/results.json" in a, f"gen-data, train, eval run twice: {len(a)} files, {len(differ)} differ")


# -- 7-11. desk-scale experiment -----------------------------------------------------------------------


@pytest.fixture(scope="module")
def experiment(tmp_path_factory):
    out = Path(os.environ.get("PRIDG_ACCEPTANCE_OUT") or tmp_path_factory.mktemp("experiment"))
    t0 = time.perf_counter()
    metrics, curve, _ = run_experiment(ExperimentConfig(), out)
    return metrics, curve, out, time.perf_counter() - t0


def _acc(metrics, method, preset):
    return 100 * metrics[method][preset].overall_acc


def test_criterion_07_in_distribution(experiment):
    metrics, _, _, seconds = experiment
    p2 = _acc(metrics, "DG", "p2")
    ok = p2 >= 88.0 and seconds <= EXPERIMENT_BUDGET_S
    record(7, ok, f"DG on P2 {p2:.1f} (>= 88.0); experiment runtime {seconds / 60:.1f} min (<= 30)")


def test_criterion_08_gap_closure(experiment):
    metrics = experiment[0]
    gap4 = _acc(metrics, "DG", "p4") - _acc(metrics, "ERM", "p4")
    gap3 = _acc(metrics, "DG", "p3") - _acc(metrics, "ERM", "p3")
    record(8, gap4 >= 8.0 and gap3 >= 4.0,
           f"DG - ERM on P4 {gap4:+.1f} (>= 8.0), on P3 {gap3:+.1f} (>= 4.0); "
           f"P3 DG {_acc(metrics, 'DG', 'p3'):.1f} ERM {_acc(metrics, 'ERM', 'p3'):.1f}")


def test_criterion_09_ordering(experiment):
    metrics = experiment[0]
    p1, p3, p4 = (_acc(metrics, "DG", p) for p in ("p1", "p3", "p4"))
    record(9, p1 >= p3 >= p4, f"DG on P1 {p1:.1f}, P3 {p3:.1f}, P4 {p4:.1f} (non-increasing)")


def test_criterion_10_fewshot(experiment):
    curve = experiment[1]
    gain = 100 * (curve[20] - curve[0])
    shown = ", ".join(f"n={n}: {100 * a:.1f}" for n, a in sorted(curve.items()))
    record(10, gain >= 3.0, f"P4 accuracy {shown}; gain at n=20 {gain:+.1f} (>= 3.0)")


def test_criterion_11_granular_tables(experiment):
    metrics, _, out, _ = experiment
    text = (out / "report.md").read_text()
    back, _, _ = parse_report(out)
    tables = "per PRI modulation" in text and "Staggered emitters" in text and "| " + " | ".join(MODULATION_ORDER) + " |" in text
    stg = back["DG"]["p4"].staggered()
    names_ok = sorted(stg) == [f"STG{i}" for i in range(1, 6)]
    ok = tables and names_ok and min(stg.values()) > 0.1
    shown = ", ".join(f"{k} {100 * v:.1f}" for k, v in sorted(stg.items()))
    record(11, ok, f"tables written: {tables}; DG on P4 {shown} (each > 10.0)")
