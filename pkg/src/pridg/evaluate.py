"""Accuracy metrics per scenario, modulation and emitter, and report files."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .sim import MODULATION_SHORT, PRESETS, Dataset, EmitterSpec, Modulation, emitter_name, make_dataset

MODULATION_ORDER = ["CST", "JIT", "SLD", "WOB", "D&S", "STG"]
TEST_PRESETS = ("p1", "p2", "p3", "p4")
RESULTS_FORMAT = "pridg-results/1"
# tag mixed into every test-set seed so test data never shares a seed with training data
EVAL_SEED_TAG = 7357


@dataclass
class Metrics:
    overall_acc: float
    per_modulation: dict
    per_emitter: dict
    confusion: np.ndarray
    per_scenario: dict = field(default_factory=dict)
    emitter_names: dict = field(default_factory=dict)
    n_samples: int = 0
    seed: object = None

    def to_dict(self) -> dict:
        return {
            "overall_acc": self.overall_acc,
            "per_scenario": self.per_scenario,
            "per_modulation": self.per_modulation,
            "per_emitter": {str(k): v for k, v in self.per_emitter.items()},
            "emitter_names": {str(k): v for k, v in self.emitter_names.items()},
            "confusion": self.confusion.tolist(),
            "n_samples": self.n_samples,
            "seed": _jsonable(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Metrics":
        return cls(
            overall_acc=d["overall_acc"],
            per_modulation=dict(d["per_modulation"]),
            per_emitter={int(k): v for k, v in d["per_emitter"].items()},
            confusion=np.array(d["confusion"], dtype=np.int64),
            per_scenario=dict(d.get("per_scenario", {})),
            emitter_names={int(k): v for k, v in d.get("emitter_names", {}).items()},
            n_samples=d.get("n_samples", 0),
            seed=d.get("seed"),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Metrics):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def staggered(self) -> dict:
        """Per-emitter accuracy of the staggered emitters keyed by name (STG1..)."""
        return {self.emitter_names[k]: v for k, v in self.per_emitter.items() if self.emitter_names.get(k, "").startswith("STG")}


def _as_predictor(model) -> Callable[[np.ndarray], np.ndarray]:
    return model.predict if hasattr(model, "predict") else model


def metrics_from_predictions(pred: np.ndarray, labels: np.ndarray, roster: Sequence[EmitterSpec]) -> Metrics:
    pred, labels = np.asarray(pred, dtype=np.int64), np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("empty dataset")
    n_cls = len(roster)
    confusion = np.zeros((n_cls, n_cls), dtype=np.int64)
    np.add.at(confusion, (labels, pred), 1)
    per_emitter, names = {}, {}
    for spec in roster:
        row = confusion[spec.id]
        names[spec.id] = emitter_name(spec)
        if row.sum():
            per_emitter[spec.id] = float(row[spec.id] / row.sum())
    per_modulation = {}
    for short in MODULATION_ORDER:
        ids = [s.id for s in roster if MODULATION_SHORT[s.modulation] == short]
        total = confusion[ids].sum() if ids else 0
        if total:
            per_modulation[short] = float(sum(confusion[i, i] for i in ids) / total)
    return Metrics(
        overall_acc=float(np.trace(confusion) / confusion.sum()),
        per_modulation=per_modulation,
        per_emitter=per_emitter,
        confusion=confusion,
        emitter_names=names,
        n_samples=int(labels.size),
    )


def eval_accuracy(model, ds: Dataset, roster: Sequence[EmitterSpec] | None = None) -> Metrics:
    """Score ``model`` (a :class:`DgModel` or any ``x -> labels`` callable) on ``ds``."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    roster = roster or ds.roster
    pred = _as_predictor(model)(ds.x)
    m = metrics_from_predictions(pred, ds.labels, roster)
    m.seed = ds.seed
    return m


def eval_set_seed(seed: int, preset_index: int) -> tuple[int, int, int]:
    return (EVAL_SEED_TAG, int(seed), int(preset_index))


def eval_suite(
    model,
    presets: Sequence[str] = TEST_PRESETS,
    roster: Sequence[EmitterSpec] | None = None,
    n_per_class: int = 200,
    seed: int = 0,
    seq_len: int = 128,
) -> dict[str, Metrics]:
    """Fresh test set per preset, scored; key ``"avg"`` holds unweighted means over presets."""
    from .sim import default_roster

    roster = list(roster or default_roster())
    out: dict[str, Metrics] = {}
    for j, name in enumerate(presets):
        ds = make_dataset(roster, PRESETS[name], n_per_class, seq_len, seed=eval_set_seed(seed, j))
        m = eval_accuracy(model, ds, roster)
        m.per_scenario = {name: m.overall_acc}
        out[name] = m
    out["avg"] = average_metrics([out[p] for p in presets], presets)
    return out


def average_metrics(items: Sequence[Metrics], names: Sequence[str]) -> Metrics:
    """Unweighted mean of accuracies; confusion matrices are summed."""
    mean = lambda vals: float(np.mean(vals))  # noqa: E731
    keys_mod = [k for k in MODULATION_ORDER if all(k in m.per_modulation for m in items)]
    keys_em = sorted(set.intersection(*(set(m.per_emitter) for m in items)))
    return Metrics(
        overall_acc=mean([m.overall_acc for m in items]),
        per_modulation={k: mean([m.per_modulation[k] for m in items]) for k in keys_mod},
        per_emitter={k: mean([m.per_emitter[k] for m in items]) for k in keys_em},
        confusion=sum(m.confusion for m in items),
        per_scenario={n: m.overall_acc for n, m in zip(names, items)},
        emitter_names=dict(items[0].emitter_names),
        n_samples=int(sum(m.n_samples for m in items)),
        seed=[m.seed for m in items],
    )


# ---------------------------------------------------------------------------
# reports


def config_hash(config: Mapping | str) -> str:
    text = config if isinstance(config, str) else json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _jsonable(obj):
    if isinstance(obj, tuple):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, list):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def make_report(
    metrics: Mapping[str, Mapping[str, Metrics]],
    fewshot: Mapping[str, Mapping[int, float]] | None,
    out_dir: str | Path,
    provenance: Mapping | None = None,
    table_preset: str = "p4",
) -> dict[str, Path]:
    """Write ``results.json``, ``report.md`` and (with few-shot data) ``fewshot.csv``.

    ``metrics`` maps method name -> preset name (plus ``"avg"``) -> Metrics.
    ``fewshot`` maps method name -> {n target samples per class: accuracy}.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "format": RESULTS_FORMAT,
        "provenance": _jsonable(dict(provenance or {})),
        "methods": {name: {p: m.to_dict() for p, m in per.items()} for name, per in metrics.items()},
        "fewshot": {name: {str(n): acc for n, acc in curve.items()} for name, curve in (fewshot or {}).items()},
    }
    doc = _jsonable(doc)
    paths = {"results": out / "results.json", "report": out / "report.md"}
    paths["results"].write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    paths["report"].write_text(render_markdown(metrics, fewshot, provenance, table_preset))
    if fewshot:
        paths["fewshot"] = out / "fewshot.csv"
        with open(paths["fewshot"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "n_per_class", "accuracy"])
            for name, curve in fewshot.items():
                for n in sorted(curve):
                    w.writerow([name, n, f"{curve[n]:.6f}"])
    return paths


def parse_report(path: str | Path):
    """Inverse of :func:`make_report`: returns ``(metrics, fewshot, provenance)``."""
    p = Path(path)
    if p.is_dir():
        p = p / "results.json"
    doc = json.loads(p.read_text())
    if doc.get("format") != RESULTS_FORMAT:
        raise ValueError(f"unsupported results format {doc.get('format')!r}")
    metrics = {name: {k: Metrics.from_dict(v) for k, v in per.items()} for name, per in doc["methods"].items()}
    fewshot = {name: {int(n): acc for n, acc in curve.items()} for name, curve in doc["fewshot"].items()}
    return metrics, fewshot, doc["provenance"]


def _pct(v) -> str:
    return "-" if v is None else f"{100 * v:.1f}"


def render_markdown(metrics, fewshot=None, provenance=None, table_preset: str = "p4") -> str:
    lines = ["# Emitter recognition results", ""]
    if provenance:
        lines += [f"- {k}: `{v}`" for k, v in provenance.items()] + [""]
    presets = [p for p in TEST_PRESETS if any(p in per for per in metrics.values())]
    lines += ["## Accuracy per scenario", "", "| Method | " + " | ".join(p.upper() for p in presets) + " | Avg. |"]
    lines.append("|---" * (len(presets) + 2) + "|")
    for name, per in metrics.items():
        cells = [_pct(per[p].overall_acc) if p in per else "-" for p in presets]
        avg = per["avg"].overall_acc if "avg" in per else None
        lines.append(f"| {name} | " + " | ".join(cells) + f" | {_pct(avg)} |")
    lines += ["", f"## Accuracy per PRI modulation on {table_preset.upper()}", ""]
    lines.append("| Method | " + " | ".join(MODULATION_ORDER) + " |")
    lines.append("|---" * (len(MODULATION_ORDER) + 1) + "|")
    for name, per in metrics.items():
        if table_preset in per:
            pm = per[table_preset].per_modulation
            lines.append(f"| {name} | " + " | ".join(_pct(pm.get(k)) for k in MODULATION_ORDER) + " |")
    stg_names = None
    for per in metrics.values():
        if table_preset in per:
            stg_names = list(per[table_preset].staggered())
            break
    if stg_names:
        lines += ["", f"## Staggered emitters on {table_preset.upper()}", ""]
        lines.append("| Method | " + " | ".join(stg_names) + " |")
        lines.append("|---" * (len(stg_names) + 1) + "|")
        for name, per in metrics.items():
            if table_preset in per:
                stg = per[table_preset].staggered()
                lines.append(f"| {name} | " + " | ".join(_pct(stg.get(k)) for k in stg_names) + " |")
    if fewshot:
        ns = sorted({n for curve in fewshot.values() for n in curve})
        lines += ["", "## Few-shot fine-tuning (target accuracy vs. samples per class)", ""]
        lines.append("| Method | " + " | ".join(str(n) for n in ns) + " |")
        lines.append("|---" * (len(ns) + 1) + "|")
        for name, curve in fewshot.items():
            lines.append(f"| {name} | " + " | ".join(_pct(curve.get(n)) for n in ns) + " |")
    return "\n".join(lines) + "\n"
