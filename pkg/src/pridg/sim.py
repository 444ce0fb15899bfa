"""Pulse-train simulation: clean TOA generation for six PRI modulation laws and
the missing / spurious / measurement-error corruption model.

All times are microseconds.  Every function that draws random numbers takes a
``seed`` (anything accepted by :func:`numpy.random.default_rng`) and is a pure
function of its arguments.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np


class Modulation(str, enum.Enum):
    CONSTANT = "Constant"
    JITTERED = "Jittered"
    SLIDING = "Sliding"
    WOBULATED = "Wobulated"
    STAGGERED = "Staggered"
    DWELL_SWITCH = "DwellSwitch"

    @property
    def short(self) -> str:
        return MODULATION_SHORT[self]


MODULATION_SHORT = {
    Modulation.CONSTANT: "CST",
    Modulation.JITTERED: "JIT",
    Modulation.SLIDING: "SLD",
    Modulation.WOBULATED: "WOB",
    Modulation.DWELL_SWITCH: "D&S",
    Modulation.STAGGERED: "STG",
}

# pulses per bookkeeping period for the aperiodic laws
APERIODIC_WINDOW = 16


@dataclass(frozen=True)
class EmitterSpec:
    """One radar emitter.

    ``params`` keys by modulation:

    * Jittered: ``jitter`` (fraction, default 0.1)
    * Sliding: ``start``, ``end`` (PRI endpoints), ``steps`` (pulses per sweep)
    * Wobulated: ``amplitude`` (fraction), ``period`` (pulses)
    * Staggered: ``levels`` (list of PRIs)
    * DwellSwitch: ``levels`` (list of PRIs), ``dwells`` (pulses held at each)
    """

    id: int
    modulation: Modulation
    base_pri: float
    params: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "modulation", Modulation(self.modulation))
        if not self.base_pri > 0:
            raise ValueError(f"emitter {self.id}: base_pri must be > 0")
        p, m = self.params, self.modulation
        if m == Modulation.JITTERED:
            j = p.get("jitter", 0.1)
            if not 0 <= j < 1:
                raise ValueError(f"emitter {self.id}: jitter must be in [0, 1)")
        elif m == Modulation.SLIDING:
            if not (p.get("start", 0) > 0 and p.get("end", 0) > 0 and p.get("steps", 0) >= 2):
                raise ValueError(f"emitter {self.id}: sliding needs start>0, end>0, steps>=2")
        elif m == Modulation.WOBULATED:
            if not (0 <= p.get("amplitude", -1) < 1 and p.get("period", 0) >= 2):
                raise ValueError(f"emitter {self.id}: wobulated needs 0<=amplitude<1, period>=2")
        elif m == Modulation.STAGGERED:
            levels = p.get("levels") or []
            if len(levels) == 0 or min(levels) <= 0:
                raise ValueError(f"emitter {self.id}: staggered needs a non-empty list of positive levels")
        elif m == Modulation.DWELL_SWITCH:
            levels, dwells = p.get("levels") or [], p.get("dwells") or []
            if len(levels) == 0 or min(levels) <= 0:
                raise ValueError(f"emitter {self.id}: dwell-switch needs a non-empty list of positive levels")
            if len(dwells) != len(levels) or min(dwells) < 1:
                raise ValueError(f"emitter {self.id}: dwell-switch needs one dwell count >= 1 per level")

    @property
    def period(self) -> int:
        """Pulses per modulation cycle (the bookkeeping period for missing-pulse stats)."""
        m, p = self.modulation, self.params
        if m == Modulation.SLIDING:
            return int(p["steps"])
        if m == Modulation.WOBULATED:
            return int(p["period"])
        if m == Modulation.STAGGERED:
            return len(p["levels"])
        if m == Modulation.DWELL_SWITCH:
            return int(sum(p["dwells"]))
        return APERIODIC_WINDOW

    @property
    def max_pri(self) -> float:
        m, p = self.modulation, self.params
        if m == Modulation.JITTERED:
            return self.base_pri * (1 + p.get("jitter", 0.1))
        if m == Modulation.SLIDING:
            return max(p["start"], p["end"])
        if m == Modulation.WOBULATED:
            return self.base_pri * (1 + p["amplitude"])
        if m in (Modulation.STAGGERED, Modulation.DWELL_SWITCH):
            return max(p["levels"])
        return self.base_pri

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "modulation": self.modulation.value,
            "base_pri": self.base_pri,
            "params": self.params,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EmitterSpec":
        return cls(d["id"], Modulation(d["modulation"]), float(d["base_pri"]), dict(d.get("params", {})), d.get("name", ""))


@dataclass(frozen=True)
class ToaSequence:
    toas: np.ndarray

    def __post_init__(self):
        toas = np.asarray(self.toas, dtype=np.float64)
        if toas.ndim != 1 or toas.size < 2:
            raise ValueError("a TOA sequence needs at least 2 pulses")
        if toas[0] < 0 or np.any(np.diff(toas) <= 0):
            raise ValueError("TOAs must be non-negative and strictly increasing")
        object.__setattr__(self, "toas", toas)

    def __len__(self) -> int:
        return self.toas.size


@dataclass(frozen=True)
class PriSequence:
    pris: np.ndarray
    label: int = -1
    domain_id: int = 0

    def __post_init__(self):
        pris = np.asarray(self.pris, dtype=np.float64)
        if pris.ndim != 1 or np.any(pris <= 0):
            raise ValueError("PRI values must be a 1-d array of positive numbers")
        object.__setattr__(self, "pris", pris)

    def __len__(self) -> int:
        return self.pris.size


@dataclass(frozen=True)
class ScenarioParams:
    rho_r: float
    rho_m: float
    rho_n: float

    def __post_init__(self):
        if not 0 <= self.rho_m < 1:
            raise ValueError(f"rho_m must be in [0, 1), got {self.rho_m}")
        if self.rho_n < 0 or self.rho_r < 0:
            raise ValueError("rho_n and rho_r must be >= 0")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.rho_r, self.rho_m, self.rho_n)


P_TRAIN = ScenarioParams(0.05, 0.2, 0.4)
P1 = ScenarioParams(0.02, 0.05, 0.2)
P2 = ScenarioParams(0.05, 0.2, 0.4)
P3 = ScenarioParams(0.05, 0.3, 0.6)
P4 = ScenarioParams(0.1, 0.5, 0.8)
PRESETS = {"train": P_TRAIN, "p1": P1, "p2": P2, "p3": P3, "p4": P4}


@dataclass
class CorruptionStats:
    dropped_per_period: np.ndarray
    kept_per_period: np.ndarray
    spurious_added: int = 0

    def __post_init__(self):
        self.dropped_per_period = np.asarray(self.dropped_per_period, dtype=np.int64)
        self.kept_per_period = np.asarray(self.kept_per_period, dtype=np.int64)
        if self.dropped_per_period.shape != self.kept_per_period.shape:
            raise ValueError("dropped and kept lists must have equal length")
        if np.any(self.dropped_per_period < 0) or np.any(self.kept_per_period < 0) or self.spurious_added < 0:
            raise ValueError("counts must be >= 0")


# ---------------------------------------------------------------------------
# roster


ROSTER_VERSION = "roster_v1"


def load_roster(path: str | Path | None = None) -> list[EmitterSpec]:
    """Read a roster JSON file; without a path, the shipped default roster."""
    if path is None:
        text = resources.files("pridg.data").joinpath(f"{ROSTER_VERSION}.json").read_text()
    else:
        text = Path(path).read_text()
    doc = json.loads(text)
    return [EmitterSpec.from_dict(d) for d in doc["emitters"]]


def save_roster(roster: Sequence[EmitterSpec], path: str | Path, version: str = ROSTER_VERSION) -> None:
    doc = {"version": version, "emitters": [s.to_dict() for s in roster]}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def default_roster() -> list[EmitterSpec]:
    return load_roster()


def emitter_name(spec: EmitterSpec) -> str:
    return spec.name or f"{spec.modulation.short}{spec.id}"


def normalization_scale(roster: Sequence[EmitterSpec]) -> float:
    """Global divisor applied to PRI values before they enter the network."""
    return 2.0 * max(s.max_pri for s in roster)


# ---------------------------------------------------------------------------
# clean generation and corruption


def _clean_pris(spec: EmitterSpec, n: int, offset: int, rng: np.random.Generator) -> np.ndarray:
    k = np.arange(offset, offset + n)
    m, p, base = spec.modulation, spec.params, spec.base_pri
    if m == Modulation.CONSTANT:
        return np.full(n, base, dtype=np.float64)
    if m == Modulation.JITTERED:
        j = p.get("jitter", 0.1)
        return base * (1 + rng.uniform(-j, j, size=n))
    if m == Modulation.SLIDING:
        steps = int(p["steps"])
        ramp = np.linspace(p["start"], p["end"], steps)
        return ramp[k % steps]
    if m == Modulation.WOBULATED:
        return base * (1 + p["amplitude"] * np.sin(2 * np.pi * k / p["period"]))
    if m == Modulation.STAGGERED:
        levels = np.asarray(p["levels"], dtype=np.float64)
        return levels[k % levels.size]
    if m == Modulation.DWELL_SWITCH:
        cycle = np.repeat(np.asarray(p["levels"], dtype=np.float64), p["dwells"])
        return cycle[k % cycle.size]
    raise ValueError(f"unknown modulation {m}")


def gen_clean_toa(spec: EmitterSpec, n_pulses: int, seed=None, offset: int = 0) -> ToaSequence:
    """Clean pulse train starting at t=0.

    ``offset`` is the index within the modulation cycle of the first interval.
    """
    if n_pulses < 2:
        raise ValueError("n_pulses must be >= 2")
    rng = np.random.default_rng(seed)
    pris = _clean_pris(spec, n_pulses - 1, offset, rng)
    return ToaSequence(np.concatenate([[0.0], np.cumsum(pris)]))


def toa_to_pri(toa: ToaSequence, label: int = -1, domain_id: int = 0) -> PriSequence:
    if not isinstance(toa, ToaSequence):
        toa = ToaSequence(toa)
    return PriSequence(np.diff(toa.toas), label, domain_id)


def drop_pulses(toa: ToaSequence, rho_m: float, seed=None, period: int = APERIODIC_WINDOW):
    """Independently lose each pulse after the first with probability ``rho_m``.

    Returns the surviving train and the per-period (lost, kept) counts.
    """
    if not 0 <= rho_m < 1:
        raise ValueError(f"rho_m must be in [0, 1), got {rho_m}")
    if period < 1:
        raise ValueError("period must be >= 1")
    rng = np.random.default_rng(seed)
    n = len(toa)
    lost = rng.random(n) < rho_m
    lost[0] = False
    # keep at least two pulses so the output is still a sequence
    if n - lost.sum() < 2:
        lost[np.flatnonzero(lost)[0]] = False
    n_periods = math.ceil(n / period)
    period_of = np.arange(n) // period
    dropped = np.bincount(period_of, weights=lost, minlength=n_periods).astype(np.int64)
    kept = np.bincount(period_of, weights=~lost, minlength=n_periods).astype(np.int64)
    return ToaSequence(toa.toas[~lost]), CorruptionStats(dropped, kept)


def missing_ratio(stats: CorruptionStats) -> float:
    a = int(stats.dropped_per_period.sum())
    total = a + int(stats.kept_per_period.sum())
    if total == 0:
        raise ValueError("missing ratio undefined for empty stats")
    return a / total


def add_spurious(toa: ToaSequence, rho_n: float, rho_m: float = 0.0, seed=None) -> ToaSequence:
    """Insert Poisson(rho_n * (1 - rho_m)) false pulses uniformly inside every gap."""
    if rho_n < 0:
        raise ValueError(f"rho_n must be >= 0, got {rho_n}")
    rng = np.random.default_rng(seed)
    t = toa.toas
    lam = rho_n * (1 - rho_m)
    counts = rng.poisson(lam, size=t.size - 1)
    total = int(counts.sum())
    if total == 0:
        return toa
    starts = np.repeat(t[:-1], counts)
    widths = np.repeat(np.diff(t), counts)
    while True:
        # open interval (0, 1) so inserted pulses never coincide with real ones
        u = rng.uniform(np.nextafter(0.0, 1.0), 1.0, size=total)
        merged = np.sort(np.concatenate([t, starts + u * widths]))
        if np.all(np.diff(merged) > 0):
            return ToaSequence(merged)


def add_measurement_error(pri: PriSequence, rho_r: float, seed=None) -> PriSequence:
    """Multiplicative Gaussian error ``p * (1 + eps)``, ``eps ~ N(0, rho_r^2)``.

    Non-positive results are redrawn.
    """
    if rho_r < 0:
        raise ValueError(f"rho_r must be >= 0, got {rho_r}")
    if rho_r == 0:
        return pri
    rng = np.random.default_rng(seed)
    return PriSequence(_perturb(pri.pris, rho_r, rng), pri.label, pri.domain_id)


def _perturb(values: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    out = values * (1 + sigma * rng.standard_normal(values.size))
    bad = out <= 0
    while bad.any():
        out[bad] = values[bad] * (1 + sigma * rng.standard_normal(int(bad.sum())))
        bad = out <= 0
    return out


def fit_length(values: np.ndarray, length: int) -> np.ndarray:
    """Truncate or zero-pad to exactly ``length`` values."""
    out = np.zeros(length, dtype=np.float64)
    n = min(length, values.size)
    out[:n] = values[:n]
    return out


def corrupted_stream(spec: EmitterSpec, scenario: ScenarioParams, n_pris: int, seed=None) -> np.ndarray:
    """Corrupted PRI stream of at least ``n_pris`` values (longer streams are truncated).

    Starts at a random phase of the modulation cycle.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    s_phase, s_clean, s_drop, s_spur, s_meas = ss.spawn(5)
    offset = int(np.random.default_rng(s_phase).integers(spec.period))
    n_pulses = int(math.ceil((n_pris + 1) / (1 - scenario.rho_m))) + 32
    while True:
        toa = gen_clean_toa(spec, n_pulses, s_clean, offset=offset)
        toa, _ = drop_pulses(toa, scenario.rho_m, s_drop, period=spec.period)
        toa = add_spurious(toa, scenario.rho_n, scenario.rho_m, s_spur)
        if len(toa) > n_pris:
            break
        n_pulses *= 2
    pri = add_measurement_error(toa_to_pri(toa), scenario.rho_r, s_meas)
    return pri.pris[:n_pris]


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    """Fixed-length PRI samples with labels, domain tags and optional pairing.

    ``x`` holds the network-facing window of ``seq_len`` PRIs per sample.
    ``tail`` optionally holds the continuation of each sample's stream; the
    augmenters draw from it when fusing intervals would otherwise leave a
    zero-padded end.  ``source_index`` maps augmented samples back to the
    source sample they came from (-1 for source samples).
    """

    x: np.ndarray
    labels: np.ndarray
    domains: np.ndarray
    scenario: ScenarioParams | None = None
    seed: object = None
    roster: list = field(default_factory=list)
    roster_version: str = ROSTER_VERSION
    tail: np.ndarray | None = None
    source_index: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.domains = np.asarray(self.domains, dtype=np.int64)
        if self.x.ndim != 2 or self.labels.shape != (len(self.x),) or self.domains.shape != (len(self.x),):
            raise ValueError("x must be (N, L) with one label and one domain per row")
        if self.source_index is None:
            self.source_index = np.full(len(self.x), -1, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.x)

    @property
    def seq_len(self) -> int:
        return self.x.shape[1]

    def __getitem__(self, i: int) -> PriSequence:
        row = self.x[i]
        return PriSequence(row[row > 0], int(self.labels[i]), int(self.domains[i]))

    @property
    def samples(self) -> list[PriSequence]:
        return [self[i] for i in range(len(self))]

    def stream(self, i: int) -> np.ndarray:
        """Full available PRI stream of sample ``i`` (window followed by tail)."""
        row = self.x[i]
        if self.tail is not None:
            row = np.concatenate([row, self.tail[i]])
        return row[row > 0]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.x[idx], self.labels[idx], self.domains[idx], self.scenario, self.seed, self.roster,
            self.roster_version, None if self.tail is None else self.tail[idx], self.source_index[idx],
        )

    def class_counts(self, n_classes: int | None = None) -> np.ndarray:
        return np.bincount(self.labels, minlength=n_classes or 0)


def make_dataset(
    roster: Sequence[EmitterSpec],
    scenario: ScenarioParams,
    n_per_class: int,
    seq_len: int = 128,
    seed: int = 0,
    tail_len: int | None = None,
) -> Dataset:
    """Balanced labeled dataset of corrupted PRI windows.

    Sample ``i`` of emitter ``e`` is generated from the seed tuple
    ``(*seed, e.id, i)`` (``seed`` may be an int or a tuple of ints), so every sample can be reproduced on its own.
    ``tail_len`` (default ``seq_len``) extra PRIs of each stream are kept in
    ``Dataset.tail``.
    """
    if not roster:
        raise ValueError("roster is empty")
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if seq_len < 8:
        raise ValueError("seq_len must be >= 8")
    tail_len = seq_len if tail_len is None else tail_len
    total = seq_len + tail_len
    base = [int(v) for v in np.atleast_1d(seed)]
    rows, labels = [], []
    for spec in roster:
        for i in range(n_per_class):
            rows.append(fit_length(corrupted_stream(spec, scenario, total, [*base, spec.id, i]), total))
            labels.append(spec.id)
    data = np.stack(rows)
    return Dataset(
        data[:, :seq_len],
        np.array(labels),
        np.zeros(len(labels), dtype=np.int64),
        scenario,
        seed,
        list(roster),
        tail=data[:, seq_len:] if tail_len else None,
    )


def save_dataset(ds: Dataset, out_dir: str | Path) -> None:
    """Write ``samples.csv`` (label,domain_id,p_0..p_{L-1}), ``meta.json`` and, if present, ``tail.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = np.column_stack([ds.labels, ds.domains, ds.x])
    header = ",".join(["label", "domain_id"] + [f"p_{i}" for i in range(ds.seq_len)])
    fmt = ["%d", "%d"] + ["%.6g"] * ds.seq_len
    np.savetxt(out / "samples.csv", table, fmt=fmt, delimiter=",", header=header, comments="")
    if ds.tail is not None and ds.tail.shape[1]:
        np.savetxt(out / "tail.csv", ds.tail, fmt="%.6g", delimiter=",")
    meta = {
        "format": "pridg-dataset/1",
        "scenario": None if ds.scenario is None else dict(zip(("rho_r", "rho_m", "rho_n"), ds.scenario.as_tuple())),
        "roster_version": ds.roster_version,
        "roster": [s.to_dict() for s in ds.roster],
        "seed": ds.seed,
        "seq_len": ds.seq_len,
        "n_samples": len(ds),
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_dataset(in_dir: str | Path) -> Dataset:
    src = Path(in_dir)
    meta = json.loads((src / "meta.json").read_text())
    table = np.loadtxt(src / "samples.csv", delimiter=",", skiprows=1, ndmin=2)
    tail = None
    if (src / "tail.csv").exists():
        tail = np.loadtxt(src / "tail.csv", delimiter=",", ndmin=2)
    sc = meta.get("scenario")
    return Dataset(
        table[:, 2:],
        table[:, 0].astype(np.int64),
        table[:, 1].astype(np.int64),
        None if sc is None else ScenarioParams(sc["rho_r"], sc["rho_m"], sc["rho_n"]),
        meta.get("seed"),
        [EmitterSpec.from_dict(d) for d in meta.get("roster", [])],
        meta.get("roster_version", ROSTER_VERSION),
        tail=tail,
    )
