"""Label corruption: symmetric, asymmetric (paired) and mixed noise."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NOISE_KINDS = ("symmetric", "asymmetric", "mixed")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    rho: float
    pair_map: dict[int, int] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; choose from {NOISE_KINDS}")
        _check_rho(self.rho)
        if self.kind != "symmetric" and self.pair_map is None:
            raise ValueError(f"{self.kind} noise needs a pair map")
        if self.pair_map is not None:
            check_pair_map(self.pair_map)


@dataclass
class CorruptionReport:
    n_total: int
    n_changed: int
    per_class_changed: np.ndarray = field(repr=False)

    @property
    def rate(self) -> float:
        return self.n_changed / self.n_total if self.n_total else 0.0

    @property
    def label_accuracy(self) -> float:
        return 1.0 - self.rate

    def summary(self) -> str:
        return (f"n_total={self.n_total} n_changed={self.n_changed} "
                f"rate={self.rate:.4f} label_accuracy={self.label_accuracy:.4f}")


def _check_rho(rho):
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must be in [0, 1], got {rho}")


def check_pair_map(pair_map: dict[int, int]) -> None:
    for a, b in pair_map.items():
        if pair_map.get(b) != a:
            raise ValueError(f"pair map is not an involution: {a}->{b} but {b}->{pair_map.get(b)}")


def adjacent_pairs(c: int) -> dict[int, int]:
    """Pair class 2j with 2j+1; with odd c the last class stays unpaired."""
    out = {}
    for j in range(0, c - 1, 2):
        out[j], out[j + 1] = j + 1, j
    return out


def parse_pair_map(text: str, c: int | None = None) -> dict[int, int]:
    """Parse ``"0:1,2:3"`` (each pair implies its reverse) or ``"adjacent"``."""
    text = text.strip()
    if text == "adjacent":
        if c is None:
            raise ValueError("'adjacent' pair map needs the class count")
        return adjacent_pairs(c)
    out: dict[int, int] = {}
    for item in filter(None, (t.strip() for t in text.split(","))):
        a, b = (int(v) for v in item.split(":"))
        for x, y in ((a, b), (b, a)):
            if out.get(x, y) != y:
                raise ValueError(f"class {x} paired twice")
            out[x] = y
    check_pair_map(out)
    return out


def _report(clean, noisy, c):
    changed = clean != noisy
    per = np.bincount(clean[changed], minlength=c) if c else np.zeros(0, dtype=np.int64)
    return CorruptionReport(len(clean), int(changed.sum()), per)


def _as_labels(labels):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise ValueError("labels must be a 1-D array of class indices")
    return labels


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def _symmetric_draw(labels, c, rho, rng):
    hit = rng.random(len(labels)) < rho
    repl = rng.integers(0, c, size=len(labels))
    return np.where(hit, repl, labels)


def _asymmetric_draw(labels, rho, pair_map, rng):
    partner = np.array([pair_map.get(int(l), int(l)) for l in labels], dtype=np.int64)
    hit = rng.random(len(labels)) < rho
    return np.where(hit, partner, labels)


def inject_symmetric(labels, c: int, rho: float, rng=None):
    """Replace each label, with probability rho, by a uniform draw over all c classes."""
    if c < 2:
        raise ValueError(f"c must be >= 2, got {c}")
    _check_rho(rho)
    labels = _as_labels(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    noisy = _symmetric_draw(labels, c, rho, _rng(rng))
    return noisy, _report(labels, noisy, c)


def inject_asymmetric(labels, rho: float, pair_map: dict[int, int], rng=None, c: int | None = None):
    """Flip each paired label to its partner with probability rho."""
    _check_rho(rho)
    check_pair_map(pair_map)
    labels = _as_labels(labels)
    noisy = _asymmetric_draw(labels, rho, pair_map, _rng(rng))
    if c is None:
        c = int(max(labels.max(initial=-1), max(pair_map, default=-1))) + 1
    return noisy, _report(labels, noisy, c)


def inject_mixed(labels, c: int, rho: float, pair_map: dict[int, int], rng=None):
    """Per sample, pick symmetric or asymmetric noise with probability 1/2 each."""
    if c < 2:
        raise ValueError(f"c must be >= 2, got {c}")
    _check_rho(rho)
    check_pair_map(pair_map)
    labels = _as_labels(labels)
    rng = _rng(rng)
    use_sym = rng.random(len(labels)) < 0.5
    sym = _symmetric_draw(labels, c, rho, rng)
    asym = _asymmetric_draw(labels, rho, pair_map, rng)
    noisy = np.where(use_sym, sym, asym)
    return noisy, _report(labels, noisy, c)


def inject(labels, c: int, spec: NoiseSpec, rng=None):
    """Dispatch on ``spec.kind``; ``rng`` defaults to ``spec.seed``."""
    rng = _rng(spec.seed if rng is None else rng)
    if spec.kind == "symmetric":
        return inject_symmetric(labels, c, spec.rho, rng)
    if spec.kind == "asymmetric":
        return inject_asymmetric(labels, spec.rho, spec.pair_map, rng, c=c)
    return inject_mixed(labels, c, spec.rho, spec.pair_map, rng)


def corruption_rate(clean, noisy) -> float:
    clean, noisy = np.asarray(clean), np.asarray(noisy)
    if clean.shape != noisy.shape:
        raise ValueError(f"length mismatch: {clean.shape} vs {noisy.shape}")
    if clean.size == 0:
        return 0.0
    return float(np.mean(clean != noisy))
