"""Noise generators that move a PRI sequence into a simulated EW scene.

A generator is an ordered list of sub-operations acting on the pulse train
behind a PRI sequence:

* ``DropPulses(prob)`` loses each interior pulse with probability ``prob``;
  the two intervals around a lost pulse fuse into their sum.
* ``AddPulses(rate)`` inserts Poisson(rate) false pulses per interval at
  uniform positions, splitting it into parts that sum to the original.
* ``GaussianNoise(sigma)`` perturbs PRI values multiplicatively.

No operator shifts or rescales the sequence, so the cumulative time of every
surviving pulse is preserved by drop and add.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sim import Dataset, PriSequence, _perturb, fit_length


@dataclass(frozen=True)
class DropPulses:
    prob: float

    def __post_init__(self):
        if not 0 <= self.prob < 1:
            raise ValueError(f"drop prob must be in [0, 1), got {self.prob}")

    def apply(self, pris: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.prob == 0 or pris.size < 2:
            return pris
        lost = rng.random(pris.size - 1) < self.prob
        if not lost.any():
            return pris
        starts = np.concatenate([[0], np.flatnonzero(~lost) + 1])
        out = np.add.reduceat(pris, starts)
        # one- and two-element sums are already correctly rounded; longer spans need fsum
        ends = np.append(starts[1:], pris.size)
        for i in np.flatnonzero(ends - starts > 2):
            out[i] = math.fsum(pris[starts[i] : ends[i]])
        return out


@dataclass(frozen=True)
class AddPulses:
    rate: float

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError(f"add rate must be >= 0, got {self.rate}")

    def apply(self, pris: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.rate == 0:
            return pris
        counts = rng.poisson(self.rate, size=pris.size)
        total = int(counts.sum())
        if total == 0:
            return pris
        owner = np.repeat(np.arange(pris.size), counts)
        while True:
            u = rng.uniform(np.nextafter(0.0, 1.0), 1.0, size=total)
            order = np.lexsort((u, owner))
            # cuts on the ulp grid of their interval make every part an exact difference
            quantum = np.spacing(pris[owner])
            cuts = np.round(u[order] * pris[owner] / quantum) * quantum
            # parts per interval: [0, c_1), [c_1, c_2), ..., [c_k, p)
            n_parts = counts + 1
            ends = np.cumsum(n_parts)
            first = np.zeros(ends[-1], dtype=bool)
            first[ends - n_parts] = True
            last = np.zeros(ends[-1], dtype=bool)
            last[ends - 1] = True
            lo = np.zeros(ends[-1])
            hi = np.empty(ends[-1])
            lo[~first] = cuts
            hi[~last] = cuts
            hi[last] = pris
            parts = hi - lo
            if np.all(parts > 0):
                return parts


@dataclass(frozen=True)
class GaussianNoise:
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")

    def apply(self, pris: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.sigma == 0:
            return pris
        return _perturb(pris, self.sigma, rng)


OP_TYPES = (DropPulses, AddPulses, GaussianNoise)
OP_KEYS = {"drop": DropPulses, "add": AddPulses, "noise": GaussianNoise}

DEFAULT_RANGES = {"drop": (0.05, 0.5), "add": (0.1, 0.8), "noise": (0.01, 0.1)}


@dataclass(frozen=True)
class NoiseGenerator:
    id: int
    ops: tuple
    seed: object = None

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        if not self.ops:
            raise ValueError("a generator needs at least one sub-operation")
        if not all(isinstance(op, OP_TYPES) for op in self.ops):
            raise TypeError("unknown sub-operation")

    def to_dict(self) -> dict:
        return {"id": self.id, "seed": self.seed, "ops": [_op_to_dict(op) for op in self.ops]}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseGenerator":
        return cls(d["id"], tuple(_op_from_dict(o) for o in d["ops"]), d.get("seed"))


@dataclass
class GeneratorBank:
    generators: list = field(default_factory=list)

    def __post_init__(self):
        ids = [g.id for g in self.generators]
        if len(set(ids)) != len(ids):
            raise ValueError("generator ids must be distinct")
        if 0 in ids:
            raise ValueError("domain id 0 is reserved for the source domain")

    def __len__(self) -> int:
        return len(self.generators)

    def __iter__(self):
        return iter(self.generators)

    @property
    def n_domains(self) -> int:
        return 1 + (max(g.id for g in self.generators) if self.generators else 0)

    def to_json(self) -> str:
        return json.dumps({"format": "pridg-bank/1", "generators": [g.to_dict() for g in self.generators]}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "GeneratorBank":
        return cls([NoiseGenerator.from_dict(d) for d in json.loads(text)["generators"]])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "GeneratorBank":
        return cls.from_json(Path(path).read_text())


def _op_to_dict(op) -> dict:
    if isinstance(op, DropPulses):
        return {"op": "drop", "prob": op.prob}
    if isinstance(op, AddPulses):
        return {"op": "add", "rate": op.rate}
    return {"op": "noise", "sigma": op.sigma}


def _op_from_dict(d: dict):
    kind = d["op"]
    if kind == "drop":
        return DropPulses(d["prob"])
    if kind == "add":
        return AddPulses(d["rate"])
    if kind == "noise":
        return GaussianNoise(d["sigma"])
    raise ValueError(f"unknown sub-operation {kind!r}")


def sample_generator(config: dict | None, id: int, seed=None, require: str | None = None) -> NoiseGenerator:
    """Random non-empty subset of the configured sub-operations with uniform parameters.

    ``config`` maps ``"drop" | "add" | "noise"`` to a ``(low, high)`` range;
    only keys present are eligible.  ``require`` forces one key into the
    subset.  Ops come out in the fixed order drop, add, noise.
    """
    config = DEFAULT_RANGES if config is None else config
    if not config:
        raise ValueError("empty range config")
    for key, (lo, hi) in config.items():
        if key not in OP_KEYS:
            raise ValueError(f"unknown sub-operation {key!r}")
        if lo > hi:
            raise ValueError(f"range for {key!r} is inverted: {(lo, hi)}")
    if require is not None and require not in config:
        raise ValueError(f"required op {require!r} not in config")
    rng = np.random.default_rng(seed)
    keys = [k for k in OP_KEYS if k in config]
    while True:
        chosen = [k for k in keys if k == require or rng.random() < 0.5]
        if chosen:
            break
    ops = []
    for k in chosen:
        lo, hi = config[k]
        ops.append(OP_KEYS[k](float(rng.uniform(lo, hi)) if hi > lo else float(lo)))
    return NoiseGenerator(id, tuple(ops), seed)


def default_bank(seed=0, k: int = 3, ranges: dict | None = None) -> GeneratorBank:
    """``k`` generators with ids ``1..k``; generator ``i`` always includes
    drop, add or noise in rotation so the bank covers all three families.

    ``seed`` is an int or a list of ints; generator ``i`` is sampled from
    ``[*seed, i]``.
    """
    ranges = DEFAULT_RANGES if ranges is None else ranges
    keys = [key for key in OP_KEYS if key in ranges]
    base = [int(v) for v in seed] if isinstance(seed, (list, tuple)) else [int(seed)]
    gens = [
        sample_generator(ranges, i + 1, [*base, i + 1], require=keys[i % len(keys)])
        for i in range(k)
    ]
    return GeneratorBank(gens)


def transform_stream(g: NoiseGenerator, pris: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Apply every sub-operation of ``g`` to a positive PRI array."""
    for op in g.ops:
        pris = op.apply(pris, rng)
    return pris


def apply_generator(g: NoiseGenerator, x: PriSequence, seed=None, seq_len: int | None = None) -> PriSequence:
    """``x+ = G(x)``: same label, domain tag ``g.id``, length re-fixed to ``seq_len``.

    Without ``seq_len`` the output keeps whatever length the operations produce.
    """
    rng = np.random.default_rng(seed)
    out = transform_stream(g, x.pris, rng)
    if seq_len is not None:
        out = out[:seq_len]
    return PriSequence(out, x.label, g.id)


def build_augmented_set(s: Dataset, bank: GeneratorBank, seed=0) -> Dataset:
    """One augmented copy of every source sample per generator.

    Row ``k * len(s) + i`` is generator ``k`` applied to source sample ``i``;
    ``source_index`` records ``i``.  Each sample's full stream (window plus
    tail) is transformed before re-windowing, so fused intervals are refilled
    from the stream instead of being zero-padded.
    """
    if len(s) == 0:
        raise ValueError("source dataset is empty")
    if len(bank) == 0:
        raise ValueError("generator bank is empty")
    L = s.seq_len
    n = len(s)
    rows = np.zeros((len(bank) * n, L))
    domains = np.empty(len(bank) * n, dtype=np.int64)
    base = [int(v) for v in np.atleast_1d(seed)]
    streams = [s.stream(i) for i in range(n)]
    for k, g in enumerate(bank):
        for i, stream in enumerate(streams):
            rng = np.random.default_rng([*base, g.id, i])
            rows[k * n + i] = fit_length(transform_stream(g, stream, rng), L)
        domains[k * n : (k + 1) * n] = g.id
    return Dataset(
        rows,
        np.tile(s.labels, len(bank)),
        domains,
        s.scenario,
        s.seed,
        s.roster,
        s.roster_version,
        source_index=np.tile(np.arange(n), len(bank)),
    )
