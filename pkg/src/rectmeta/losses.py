"""Scalar losses: cross-entropy, KL consistency, rectified meta-loss.

Each function accepts either tape nodes (and returns a 1x1 node that can be
differentiated) or plain arrays/floats (and returns a float).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad

PROB_FLOOR = 1e-12
WEIGHTING_MODES = ("rectified", "flat", "increasing", "decreasing")
# tolerated round-off below zero for a consistency value
_NEG_TOL = 1e-12


@dataclass(frozen=True)
class RectConfig:
    c_shape: float = 10.0
    mode: str = "rectified"

    def __post_init__(self):
        if not self.c_shape > 0:
            raise ValueError(f"c_shape must be positive, got {self.c_shape}")
        if self.mode not in WEIGHTING_MODES:
            raise ValueError(f"unknown weighting mode {self.mode!r}; choose from {WEIGHTING_MODES}")


def _lift(*xs):
    """Return (nodes, was_plain). Plain inputs go on a scratch tape."""
    for x in xs:
        if isinstance(x, ad.Node):
            tape = x.tape
            return [x if isinstance(x, ad.Node) else tape.const(x) for x in xs], False
    tape = ad.Tape()
    return [tape.const(x) for x in xs], True


def _out(node: ad.Node, plain: bool):
    return node.item() if plain else node


def _check_one_hot(y: np.ndarray):
    ok = ((y == 0.0) | (y == 1.0)).all(axis=1) & (y.sum(axis=1) == 1.0)
    if not ok.all():
        raise ValueError(f"label row {int(np.flatnonzero(~ok)[0])} is not one-hot")


def cross_entropy(probs, labels):
    """Mean over rows of -sum_j y_ij log p_ij, with p clamped at 1e-12."""
    (p, y), plain = _lift(probs, labels)
    if p.shape != y.shape:
        raise ad.ShapeError(f"probs {p.shape} vs labels {y.shape}")
    _check_one_hot(y.value)
    logp = ad.log(ad.clamp(p, PROB_FLOOR, 1.0))
    ce = -ad.mean(ad.row_sum(y * logp))
    return _out(ce, plain)


def kl_consistency(p_o, p_i):
    """KL(p_o || p_i) per row, averaged over rows."""
    (po, pi), plain = _lift(p_o, p_i)
    if po.shape != pi.shape:
        raise ad.ShapeError(f"kl: {po.shape} vs {pi.shape}")
    lo = ad.log(ad.clamp(po, PROB_FLOOR, 1.0))
    li = ad.log(ad.clamp(pi, PROB_FLOOR, 1.0))
    return _out(ad.mean(ad.row_sum(po * (lo - li))), plain)


def rectify(u, cfg: RectConfig = RectConfig()):
    """Weight a consistency value.

    rectified:  u * exp(-c u)         (peaks at u = 1/c)
    flat:       u
    increasing: u^2 / (u + 1/c)       (focal-style, favours large u)
    decreasing: u / (1 + c u)         (self-paced style, saturates)
    """
    (un,), plain = _lift(u)
    if un.shape != (1, 1):
        raise ad.ShapeError(f"rectify expects a scalar, got {un.shape}")
    if un.item() < -_NEG_TOL:
        raise ValueError(f"consistency value must be >= 0, got {un.item()}")
    c = cfg.c_shape
    if cfg.mode == "rectified":
        s = un * ad.exp(un * -c)
    elif cfg.mode == "flat":
        s = un
    elif cfg.mode == "increasing":
        s = (un * un) / (un + 1.0 / c)
    else:
        s = un / (un * c + 1.0)
    return _out(s, plain)


def meta_loss(us: Sequence, cfg: RectConfig = RectConfig()):
    """Average rectified consistency over the Q synthetic batches."""
    if len(us) == 0:
        raise ValueError("meta_loss needs at least one consistency value")
    if not any(isinstance(u, ad.Node) for u in us):
        return math.fsum(rectify(float(u), cfg) for u in us) / len(us)
    acc = None
    for u in us:  # fixed summation order
        s = rectify(u, cfg)
        acc = s if acc is None else acc + s
    return acc * (1.0 / len(us))


def total_loss(ce, meta, alpha: float):
    """(1 - alpha) * ce + alpha * meta."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if isinstance(ce, ad.Node) or isinstance(meta, ad.Node):
        (c, m), _ = _lift(ce, meta)
        return c * (1.0 - alpha) + m * alpha
    return (1.0 - alpha) * float(ce) + alpha * float(meta)
