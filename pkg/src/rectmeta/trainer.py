"""Two-phase training loop: cross-entropy warm-up, then CE + rectified meta-loss.

After ``start_epoch`` warm-up epochs, every mini-batch gets Q pseudo-labelled
copies. The network takes one plain gradient step on each copy, and the KL
divergence between the original and stepped predictions is weighted and
averaged into the meta-loss. The outer update is momentum SGD with weight
decay and a step learning-rate schedule.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .datasets import Dataset
from .losses import (WEIGHTING_MODES, RectConfig, cross_entropy, kl_consistency, meta_loss,
                     rectify, total_loss)
from .metrics import accuracy, label_correction_accuracy
from .model import ModelSpec, ParamSet, features, init_params, predict_node
from .pseudo_labels import K_NN, build_neighbor_index, generate_q_sets
from .rng import substream


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters. Defaults are the full-scale protocol; see :meth:`desk`."""

    alpha: float = 0.5
    beta: float | None = None  # None -> same as gamma
    gamma: float = 0.2
    q: int = 10
    m: int | None = None  # None -> ceil(batch_size / 4)
    batch_size: int = 64
    c_shape: float = 10.0
    start_epoch: int = 20
    epochs: int = 120
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_decay: float = 0.1
    lr_period: int = 40
    order: str = "first"
    weighting: str = "rectified"
    k_nn: int = K_NN
    neighbor_space: str = "penultimate"
    hidden: tuple[int, ...] = (32,)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.gamma <= 0 or self.inner_lr < 0:
            raise ValueError("learning rates must be positive")
        if self.q < 0:
            raise ValueError(f"q must be >= 0, got {self.q}")
        if self.q == 0 and self.alpha > 0:
            raise ValueError("q = 0 leaves no meta-loss; set alpha = 0 for plain cross-entropy")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.m is not None and not 0 <= self.m <= self.batch_size:
            raise ValueError(f"m must be in [0, batch_size], got {self.m}")
        if not 0 <= self.start_epoch <= self.epochs:
            raise ValueError("start_epoch must be in [0, epochs]")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not 0.0 < self.lr_decay <= 1.0 or self.lr_period < 1:
            raise ValueError("lr_decay must be in (0, 1] and lr_period >= 1")
        if self.order not in ("first", "second"):
            raise ValueError(f"order must be 'first' or 'second', got {self.order!r}")
        if self.weighting not in WEIGHTING_MODES:
            raise ValueError(f"weighting must be one of {WEIGHTING_MODES}")
        if self.neighbor_space not in ("penultimate", "input"):
            raise ValueError("neighbor_space must be 'penultimate' or 'input'")
        RectConfig(self.c_shape, self.weighting)

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Minutes-scale profile: smaller batches, 30 epochs, decay every 10."""
        base = dict(batch_size=32, epochs=30, lr_period=10, start_epoch=5)
        base.update(overrides)
        return cls(**base)

    @property
    def inner_lr(self) -> float:
        return self.gamma if self.beta is None else self.beta

    @property
    def meta_batch(self) -> int:
        return math.ceil(self.batch_size / 4) if self.m is None else self.m

    @property
    def rect(self) -> RectConfig:
        return RectConfig(self.c_shape, self.weighting)

    @property
    def uses_meta(self) -> bool:
        return self.alpha > 0 and self.q > 0

    def lr_at(self, epoch: int) -> float:
        return self.gamma * self.lr_decay ** (epoch // self.lr_period)

    def replace(self, **kw) -> "TrainConfig":
        return replace(self, **kw)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class MetricRow:
    epoch: int
    lr: float
    ce_loss: float
    meta_loss: float
    total_loss: float
    mean_u: float
    mean_s: float
    val_accuracy: float
    label_correction_accuracy: float
    wall_time: float

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class TrainState:
    params: ParamSet
    velocity: list[np.ndarray]
    epoch: int = 0
    history: list[MetricRow] = field(default_factory=list)
    pseudo_rng: np.random.Generator | None = None

    @classmethod
    def fresh(cls, spec: ModelSpec, cfg: TrainConfig) -> "TrainState":
        params = init_params(spec, substream(cfg.seed, "init"))
        return cls(params, [np.zeros_like(a) for a in params.arrays],
                   pseudo_rng=substream(cfg.seed, "pseudo"))


@dataclass
class StepStats:
    ce: float
    meta: float
    total: float
    us: list[float]
    ss: list[float]


def one_hot(labels: np.ndarray, c: int) -> np.ndarray:
    return np.eye(c)[np.asarray(labels)]


def _finite(stats: StepStats):
    if not all(math.isfinite(v) for v in (stats.ce, stats.meta, stats.total)):
        raise TrainingDiverged(f"non-finite loss: ce={stats.ce} meta={stats.meta}")


def sgd_update(state: TrainState, grads: list[np.ndarray], lr: float, cfg: TrainConfig) -> None:
    """theta <- theta - lr * v,  v <- momentum * v + (g + wd * theta)."""
    for i, (p, g) in enumerate(zip(state.params.arrays, grads)):
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p
        v = cfg.momentum * state.velocity[i] + g if cfg.momentum else g
        state.velocity[i] = v
        p -= lr * v
        if not np.isfinite(p).all():
            raise TrainingDiverged("parameters became non-finite")


def ce_gradient(params: ParamSet, x: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
    tape = ad.Tape()
    th = [tape.param(a) for a in params.arrays]
    loss = cross_entropy(predict_node(th, tape.const(x)), tape.const(y))
    r = ad.backward(tape, loss)
    return r.loss, r.grads


def warmup_step(state: TrainState, x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
                lr: float | None = None) -> StepStats:
    """One momentum-SGD step on cross-entropy alone."""
    loss, grads = ce_gradient(state.params, x, y)
    stats = StepStats(loss, 0.0, loss, [], [])
    _finite(stats)
    sgd_update(state, grads, cfg.lr_at(state.epoch) if lr is None else lr, cfg)
    return stats


def inner_update(theta: ParamSet, x: np.ndarray, y_pseudo: np.ndarray, beta: float) -> ParamSet:
    """phi = theta - beta * grad CE(F(x, theta), y_pseudo); no momentum, no decay."""
    loss, grads = ce_gradient(theta, x, y_pseudo)
    phi = [a - beta * g for a, g in zip(theta.arrays, grads)]
    if not all(np.isfinite(p).all() for p in phi):
        raise TrainingDiverged("inner update produced non-finite parameters")
    return ParamSet(theta.spec, phi)


def neighbor_features(params: ParamSet, x: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    return features(params, x) if cfg.neighbor_space == "penultimate" else x


def meta_objective(theta: list[ad.Node], x: np.ndarray, y: np.ndarray, pseudo: list[np.ndarray],
                   cfg: TrainConfig, alpha: float):
    """Record (1-alpha) CE + alpha * meta-loss; returns (total, ce, meta, us)."""
    tape = theta[0].tape
    xn = tape.const(x)
    p_o = predict_node(theta, xn)
    ce = cross_entropy(p_o, tape.const(y))
    us = []
    for y_hat in pseudo:
        inner = cross_entropy(p_o, tape.const(y_hat))
        phi = ad.inner_step(theta, inner, cfg.inner_lr, cfg.order)
        us.append(kl_consistency(p_o, predict_node(phi, xn)))
    meta = meta_loss(us, cfg.rect)
    return total_loss(ce, meta, alpha), ce, meta, us


def meta_gradient(params: ParamSet, x: np.ndarray, y: np.ndarray, pseudo: list[np.ndarray],
                  cfg: TrainConfig, alpha: float | None = None):
    """Gradient of the blended objective at ``params``; returns (grads, StepStats)."""
    if not pseudo:
        raise ValueError("meta step needs at least one pseudo-label set (q >= 1)")
    alpha = cfg.alpha if alpha is None else alpha
    tape = ad.Tape()
    th = [tape.param(a) for a in params.arrays]
    tot, ce, meta, us = meta_objective(th, x, y, pseudo, cfg, alpha)
    grads = [g.value.copy() for g in ad.grad(tot, th)]
    uvals = [u.item() for u in us]
    svals = [rectify(max(u, 0.0), cfg.rect) for u in uvals]
    return grads, StepStats(ce.item(), meta.item(), tot.item(), uvals, svals)


def make_pseudo_sets(state: TrainState, x: np.ndarray, y: np.ndarray, cfg: TrainConfig):
    index = build_neighbor_index(neighbor_features(state.params, x, cfg), cfg.k_nn)
    m = min(cfg.meta_batch, x.shape[0])
    return generate_q_sets(y, index, m, cfg.q, state.pseudo_rng)


def meta_step(state: TrainState, x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
              lr: float | None = None, pseudo: list[np.ndarray] | None = None) -> StepStats:
    """Pseudo-label the batch, build the blended objective, take one SGD step."""
    if cfg.q < 1:
        raise ValueError("meta step needs q >= 1")
    if pseudo is None:
        pseudo = make_pseudo_sets(state, x, y, cfg).labels
    grads, stats = meta_gradient(state.params, x, y, pseudo, cfg)
    _finite(stats)
    sgd_update(state, grads, cfg.lr_at(state.epoch) if lr is None else lr, cfg)
    return stats


def batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def train_epoch(state: TrainState, data: Dataset, cfg: TrainConfig) -> list[StepStats]:
    c = data.n_classes
    labels = data.train_labels
    lr = cfg.lr_at(state.epoch)
    meta_phase = state.epoch >= cfg.start_epoch and cfg.uses_meta
    out = []
    for idx in batches(len(data), cfg.batch_size, substream(cfg.seed, "shuffle", state.epoch)):
        x, y = data.features[idx], one_hot(labels[idx], c)
        if meta_phase and len(idx) >= 2:
            out.append(meta_step(state, x, y, cfg, lr))
        else:
            out.append(warmup_step(state, x, y, cfg, lr))
    return out


def train(cfg: TrainConfig, data: Dataset, val: Dataset | None = None,
          callback: Callable[[TrainState, MetricRow], None] | None = None,
          checkpoint_dir: str | Path | None = None,
          state: TrainState | None = None) -> TrainState:
    """Run ``cfg.epochs`` epochs on ``data.train_labels``.

    Clean labels of ``data`` (and ``val``) are only read by the metric
    recorder after each epoch.
    """
    if len(data) == 0:
        raise ValueError("training set is empty")
    spec = ModelSpec(data.dim, cfg.hidden, data.n_classes)
    if state is None:
        state = TrainState.fresh(spec, cfg)
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
    while state.epoch < cfg.epochs:
        t0 = time.perf_counter()
        steps = train_epoch(state, data, cfg)
        n_meta = sum(1 for s in steps if s.us)
        us = [u for s in steps for u in s.us]
        ss = [v for s in steps for v in s.ss]
        row = MetricRow(
            epoch=state.epoch,
            lr=cfg.lr_at(state.epoch),
            ce_loss=float(np.mean([s.ce for s in steps])),
            meta_loss=float(np.mean([s.meta for s in steps if s.us])) if n_meta else 0.0,
            total_loss=float(np.mean([s.total for s in steps])),
            mean_u=float(np.mean(us)) if us else 0.0,
            mean_s=float(np.mean(ss)) if ss else 0.0,
            val_accuracy=accuracy(state.params, val).accuracy if val is not None and len(val) else float("nan"),
            label_correction_accuracy=label_correction_accuracy(state.params, data.features, data.clean_labels),
            wall_time=time.perf_counter() - t0,
        )
        state.history.append(row)
        if checkpoint_dir is not None:
            state.params.save(checkpoint_dir / f"epoch_{state.epoch:03d}.params")
        if callback is not None:
            callback(state, row)
        state.epoch += 1
    return state


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
