"""Feed-forward softmax classifier used as the trainable network."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad

_MAGIC = b"RMPARAM1"


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden: tuple[int, ...]
    n_classes: int
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {self.n_classes}")
        if any(h < 1 for h in self.hidden):
            raise ValueError(f"hidden widths must be >= 1, got {self.hidden}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.n_classes]

    @property
    def shapes(self) -> list[tuple[int, int]]:
        out = []
        sizes = self.layer_sizes
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            out += [(fan_in, fan_out), (1, fan_out)]
        return out


@dataclass
class ParamSet:
    """Weights and biases as ``[W0, b0, W1, b1, ...]``."""

    spec: ModelSpec
    arrays: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        shapes = self.spec.shapes
        if len(self.arrays) != len(shapes):
            raise ValueError(f"expected {len(shapes)} arrays, got {len(self.arrays)}")
        arrays = []
        for a, s in zip(self.arrays, shapes):
            a = np.asarray(a, dtype=np.float64)
            if a.shape != s:
                raise ValueError(f"parameter shape {a.shape} does not match {s}")
            if not np.isfinite(a).all():
                raise ad.NonFiniteError("non-finite parameter")
            arrays.append(a)
        self.arrays = arrays

    def copy(self) -> "ParamSet":
        return ParamSet(self.spec, [a.copy() for a in self.arrays])

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays)

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays])

    @classmethod
    def from_flat(cls, spec: ModelSpec, flat: np.ndarray) -> "ParamSet":
        flat = np.asarray(flat, dtype=np.float64)
        arrays, pos = [], 0
        for s in spec.shapes:
            n = s[0] * s[1]
            arrays.append(flat[pos:pos + n].reshape(s).copy())
            pos += n
        if pos != flat.size:
            raise ValueError(f"flat vector has {flat.size} entries, spec needs {pos}")
        return cls(spec, arrays)

    def save(self, path: str | Path) -> None:
        """Write a checkpoint: magic, spec header, little-endian float64 data."""
        s = self.spec
        header = [s.input_dim, s.n_classes, len(s.hidden), *s.hidden]
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack(f"<{len(header)}I", *header))
            fh.write(self.flatten().astype("<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "ParamSet":
        raw = Path(path).read_bytes()
        if raw[:8] != _MAGIC:
            raise ValueError(f"{path}: not a parameter checkpoint")
        d, c, nh = struct.unpack_from("<3I", raw, 8)
        hidden = struct.unpack_from(f"<{nh}I", raw, 20)
        spec = ModelSpec(d, hidden, c)
        flat = np.frombuffer(raw, dtype="<f8", offset=20 + 4 * nh)
        return cls.from_flat(spec, flat.astype(np.float64))


def init_params(spec: ModelSpec, seed: int | np.random.Generator) -> ParamSet:
    """Glorot-uniform weights, zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    arrays = []
    for i, shape in enumerate(spec.shapes):
        if i % 2 == 0:
            fan_in, fan_out = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            arrays.append(rng.uniform(-limit, limit, size=shape))
        else:
            arrays.append(np.zeros(shape))
    return ParamSet(spec, arrays)


def _check_inputs(spec: ModelSpec, x: np.ndarray | ad.Node):
    if x.shape[1] != spec.input_dim:
        raise ad.ShapeError(f"inputs have {x.shape[1]} columns, model expects {spec.input_dim}")


# tape versions, used for training


def hidden_nodes(params: Sequence[ad.Node], x: ad.Node) -> ad.Node:
    h = x
    for i in range(0, len(params) - 2, 2):
        h = ad.relu(h @ params[i] + params[i + 1])
    return h


def logits_node(params: Sequence[ad.Node], x: ad.Node) -> ad.Node:
    return hidden_nodes(params, x) @ params[-2] + params[-1]


def predict_node(params: Sequence[ad.Node], x: ad.Node) -> ad.Node:
    return ad.softmax_rows(logits_node(params, x))


# plain numpy versions, used for evaluation and neighbour search


def features(params: ParamSet, inputs: np.ndarray) -> np.ndarray:
    """Penultimate-layer activations (the raw inputs if there is no hidden layer)."""
    _check_inputs(params.spec, inputs)
    h = np.asarray(inputs, dtype=np.float64)
    a = params.arrays
    for i in range(0, len(a) - 2, 2):
        h = np.maximum(h @ a[i] + a[i + 1], 0.0)
    return h


def logits(params: ParamSet, inputs: np.ndarray) -> np.ndarray:
    return features(params, inputs) @ params.arrays[-2] + params.arrays[-1]


def predict(params: ParamSet, inputs: np.ndarray) -> np.ndarray:
    z = logits(params, inputs)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)
