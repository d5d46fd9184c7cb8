"""Experiment configs (flat key=value files), end-to-end runs and sweeps."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .datasets import Dataset, load_csv, make_blobs, make_rings, split
from .noise import NOISE_KINDS, CorruptionReport, NoiseSpec, inject, parse_pair_map
from .rng import substream
from .trainer import MetricRow, TrainConfig, TrainState, train

SWEEP_PARAMS = ("q", "alpha", "rho", "weighting")
RESULT_COLUMNS = ["param", "value", "seed", "val_accuracy", "label_correction_accuracy"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    source: str = "blobs"  # blobs | rings | csv
    n: int = 1500
    c: int = 3
    d: int = 2
    spread: float = 0.25
    separation: float = 1.0
    path: str = ""


@dataclass(frozen=True)
class NoiseConfig:
    kind: str = "none"  # none | symmetric | asymmetric | mixed
    rho: float = 0.0
    pairs: str = ""  # "adjacent" or "0:1,2:3"


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    val_fraction: float = 0.1
    train: TrainConfig = field(default_factory=TrainConfig.desk)
    seed: int = 0
    out: str = "runs/latest"

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed, train=self.train.replace(seed=seed))


# ---------------------------------------------------------------------------
# key=value parsing


def _coerce(kind, text: str, key: str):
    text = text.strip()
    try:
        if kind in (int, "int"):
            return int(text)
        if kind in (float, "float"):
            return float(text)
        if kind in ("float | None", "int | None"):
            if text.lower() in ("", "none"):
                return None
            return (int if kind.startswith("int") else float)(text)
        if kind in ("tuple[int, ...]",):
            return tuple(int(t) for t in text.replace(" ", "").split(",") if t)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind}") from None


def _field_types(cls) -> dict[str, str]:
    return {f.name: f.type if isinstance(f.type, str) else f.type.__name__ for f in fields(cls)}


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def build_config(values: dict[str, str]) -> ExperimentConfig:
    """Turn flat ``section.key=value`` pairs into an :class:`ExperimentConfig`."""
    values = dict(values)
    sections: dict[str, dict[str, str]] = {"data": {}, "noise": {}, "split": {}, "train": {}, "": {}}
    for key, value in values.items():
        sec, _, name = key.rpartition(".")
        if sec not in sections:
            raise ConfigError(f"unknown config section {sec!r} in {key!r}")
        sections[sec][name] = value

    def section(cls, raw, prefix):
        types = _field_types(cls)
        kw = {}
        for k, v in raw.items():
            if k not in types:
                raise ConfigError(f"unknown key {prefix}.{k}")
            kw[k] = _coerce(types[k], v, f"{prefix}.{k}")
        return kw

    top = sections[""]
    for k in top:
        if k not in ("seed", "out"):
            raise ConfigError(f"unknown key {k}")
    seed = _coerce(int, top.get("seed", "0"), "seed")

    train_raw = dict(sections["train"])
    profile = train_raw.pop("profile", "desk")
    if profile not in ("desk", "full"):
        raise ConfigError(f"train.profile must be 'desk' or 'full', got {profile!r}")
    train_kw = section(TrainConfig, train_raw, "train")
    train_kw["seed"] = seed
    split_raw = sections["split"]
    for k in split_raw:
        if k != "val_fraction":
            raise ConfigError(f"unknown key split.{k}")
    try:
        tcfg = TrainConfig.desk(**train_kw) if profile == "desk" else TrainConfig(**train_kw)
        cfg = ExperimentConfig(
            data=DataConfig(**section(DataConfig, sections["data"], "data")),
            noise=NoiseConfig(**section(NoiseConfig, sections["noise"], "noise")),
            val_fraction=_coerce(float, split_raw.get("val_fraction", "0.1"), "split.val_fraction"),
            train=tcfg,
            seed=seed,
            out=top.get("out", "runs/latest"),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    validate(cfg)
    return cfg


def load_config(path: str | Path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    values = parse_config_text(Path(path).read_text(encoding="utf-8")) if path else {}
    values.update(overrides or {})
    return build_config(values)


def validate(cfg: ExperimentConfig) -> None:
    d = cfg.data
    if d.source not in ("blobs", "rings", "csv"):
        raise ConfigError(f"data.source must be blobs, rings or csv, got {d.source!r}")
    if d.source == "csv" and not d.path:
        raise ConfigError("data.path is required when data.source=csv")
    if d.source != "csv" and d.c < 2:
        raise ConfigError(f"data.c must be >= 2, got {d.c}")
    if d.source == "rings" and d.c not in (2, 3):
        raise ConfigError(f"data.c must be 2 or 3 for rings, got {d.c}")
    n = cfg.noise
    if n.kind not in ("none", *NOISE_KINDS):
        raise ConfigError(f"noise.kind must be none or one of {NOISE_KINDS}, got {n.kind!r}")
    if not 0.0 <= n.rho <= 1.0:
        raise ConfigError(f"noise.rho must be in [0, 1], got {n.rho}")
    if n.kind in ("asymmetric", "mixed") and not n.pairs:
        raise ConfigError(f"noise.pairs is required for noise.kind={n.kind}")
    if not 0.0 < cfg.val_fraction < 1.0:
        raise ConfigError(f"split.val_fraction must be in (0, 1), got {cfg.val_fraction}")


def dump_config(cfg: ExperimentConfig) -> str:
    lines = [f"seed={cfg.seed}", f"out={cfg.out}"]
    lines += [f"data.{k}={v}" for k, v in asdict(cfg.data).items()]
    lines += [f"noise.{k}={v}" for k, v in asdict(cfg.noise).items()]
    lines.append(f"split.val_fraction={cfg.val_fraction!r}")
    lines.append("train.profile=full")  # every field is written explicitly
    for k, v in asdict(cfg.train).items():
        if k == "seed":
            continue
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"train.{k}={v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# pipeline


def generate(data: DataConfig, seed) -> Dataset:
    if data.source == "blobs":
        return make_blobs(data.n, data.c, data.d, data.spread, seed, data.separation)
    if data.source == "rings":
        return make_rings(data.n, data.c, seed)
    return load_csv(data.path)


def noise_spec(noise: NoiseConfig, c: int, seed: int = 0) -> NoiseSpec | None:
    if noise.kind == "none":
        return None
    pairs = parse_pair_map(noise.pairs, c) if noise.pairs else None
    return NoiseSpec(noise.kind, noise.rho, pairs, seed)


def prepare_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset, CorruptionReport | None]:
    """Generate or load, hold out clean validation data, corrupt the rest."""
    ds = generate(cfg.data, substream(cfg.seed, "data"))
    tr, va = split(ds, cfg.val_fraction, substream(cfg.seed, "split"))
    report = None
    spec = noise_spec(cfg.noise, ds.n_classes, cfg.seed)
    if spec is not None:
        tr.noisy_labels, report = inject(tr.clean_labels, ds.n_classes, spec, substream(cfg.seed, "noise"))
    return tr, va, report


@dataclass
class RunResult:
    state: TrainState
    train: Dataset
    val: Dataset
    report: CorruptionReport | None

    @property
    def history(self) -> list[MetricRow]:
        return self.state.history

    @property
    def original_label_accuracy(self) -> float:
        return 1.0 if self.report is None else self.report.label_accuracy


def run(cfg: ExperimentConfig, checkpoint_dir=None, callback=None) -> RunResult:
    tr, va, report = prepare_data(cfg)
    state = train(cfg.train, tr, va, callback=callback, checkpoint_dir=checkpoint_dir)
    return RunResult(state, tr, va, report)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics_csv(history: Iterable[MetricRow], path: str | Path) -> None:
    cols = MetricRow.columns()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in history:
            w.writerow([_fmt(getattr(row, c)) for c in cols])


def sweep_point(base: ExperimentConfig, param: str, value, seed: int) -> ExperimentConfig:
    """Config for one grid point; Q = 0 means plain cross-entropy (alpha = 0)."""
    cfg = base.with_seed(seed)
    if param == "q":
        q = int(value)
        tcfg = cfg.train.replace(q=q, alpha=cfg.train.alpha if q > 0 else 0.0)
        return replace(cfg, train=tcfg)
    if param == "alpha":
        return replace(cfg, train=cfg.train.replace(alpha=float(value)))
    if param == "weighting":
        return replace(cfg, train=cfg.train.replace(weighting=str(value)))
    if param == "rho":
        return replace(cfg, noise=replace(cfg.noise, rho=float(value)))
    raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMS}, got {param!r}")


def _sweep_job(args):
    base, param, value, seed = args
    res = run(sweep_point(base, param, value, seed))
    last = res.history[-1]
    return {"param": param, "value": value, "seed": seed,
            "val_accuracy": last.val_accuracy,
            "label_correction_accuracy": last.label_correction_accuracy}


def sweep(base: ExperimentConfig, param: str, grid: list, seeds: list[int], jobs: int = 1) -> list[dict]:
    """One train+eval run per (grid value, seed), returned in grid order."""
    if not grid:
        raise ConfigError("sweep grid is empty")
    if not seeds:
        raise ConfigError("sweep needs at least one seed")
    for v in grid:  # fail early on a bad grid value
        sweep_point(base, param, v, seeds[0])
    tasks = [(base, param, v, s) for v in grid for s in seeds]
    if jobs > 1:
        from multiprocessing import Pool
        with Pool(jobs) as pool:
            return pool.map(_sweep_job, tasks)
    return [_sweep_job(t) for t in tasks]


def write_results_csv(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in RESULT_COLUMNS])


def summarize(rows: list[dict]) -> dict:
    """Mean and standard error of validation accuracy per grid value."""
    out = {}
    for v in dict.fromkeys(r["value"] for r in rows):
        accs = np.array([r["val_accuracy"] for r in rows if r["value"] == v])
        se = accs.std(ddof=1) / np.sqrt(len(accs)) if len(accs) > 1 else 0.0
        out[v] = (float(accs.mean()), float(se))
    return out
