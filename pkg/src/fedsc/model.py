"""Two-layer ReLU MLP feature extractor plus linear classifier, trained by
hand-derived backprop and SGD with momentum.

The feature extractor maps inputs x to z = W2 relu(W1 x + b1) + b2; the
classifier maps z to logits = V z + c.  All arithmetic is float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    InvalidArgumentError,
    MalformedHeaderError,
    NonfiniteGradientError,
    ShapeMismatchError,
    TruncatedFileError,
)

_MAGIC = b"FSP1"
_HEADER = struct.Struct("<4sIIII")

# weight fields in declaration (and checkpoint) order
_FIELDS = ("w1", "b1", "w2", "b2", "v", "c")


@dataclass
class ModelParams:
    """Extractor and classifier weights plus SGD momentum buffers."""

    w1: np.ndarray  # (d_in, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden, d)
    b2: np.ndarray  # (d,)
    v: np.ndarray   # (d, num_classes)
    c: np.ndarray   # (num_classes,)
    momentum: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name in _FIELDS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.w1.ndim != 2 or self.w2.ndim != 2 or self.v.ndim != 2:
            raise ShapeMismatchError("weight matrices must be 2-d")
        if (
            self.b1.shape != (self.w1.shape[1],)
            or self.w2.shape[0] != self.w1.shape[1]
            or self.b2.shape != (self.w2.shape[1],)
            or self.v.shape[0] != self.w2.shape[1]
            or self.c.shape != (self.v.shape[1],)
        ):
            raise ShapeMismatchError("inconsistent parameter shapes")
        if not self.momentum:
            self.momentum = {
                name: np.zeros_like(getattr(self, name)) for name in _FIELDS
            }

    @property
    def d_in(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.w2.shape[1]

    @property
    def num_classes(self) -> int:
        return self.v.shape[1]

    def copy(self, reset_momentum: bool = False) -> "ModelParams":
        momentum = (
            {} if reset_momentum
            else {k: v.copy() for k, v in self.momentum.items()}
        )
        return ModelParams(*(getattr(self, f).copy() for f in _FIELDS), momentum)

    def weights(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _FIELDS}

    def flat(self) -> np.ndarray:
        """All weights (no momentum) concatenated, in declaration order."""
        return np.concatenate([getattr(self, f).ravel() for f in _FIELDS])

    def extractor_flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, f).ravel() for f in _FIELDS[:4]])


@dataclass
class Gradients:
    """Per-parameter loss gradients, same shapes as the weights."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    v: np.ndarray
    c: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, f).ravel() for f in _FIELDS])


@dataclass
class FeatureBatch:
    """Forward-pass cache: inputs, hidden pre-activations, and features."""

    inputs: np.ndarray   # (n, d_in) float64
    pre1: np.ndarray     # (n, hidden) before relu
    act1: np.ndarray     # (n, hidden) after relu
    z: np.ndarray        # (n, d) features
    labels: np.ndarray | None = None  # 1-based, optional


@dataclass
class OptimizerConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-5
    batch_size: int = 64

    def __post_init__(self):
        if self.learning_rate < 0:
            raise InvalidArgumentError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise InvalidArgumentError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise InvalidArgumentError("weight_decay must be >= 0")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")


def init_params(
    d_in: int, hidden: int, feature_dim: int, num_classes: int, seed: int = 0
) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    if min(d_in, hidden, feature_dim, num_classes) < 1:
        raise InvalidArgumentError("all layer sizes must be >= 1")
    rng = np.random.default_rng(seed)

    def layer(fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    return ModelParams(
        layer(d_in, hidden), np.zeros(hidden),
        layer(hidden, feature_dim), np.zeros(feature_dim),
        layer(feature_dim, num_classes), np.zeros(num_classes),
    )


def forward_features(
    params: ModelParams, inputs: np.ndarray, labels: np.ndarray | None = None
) -> FeatureBatch:
    """Run the extractor; caches activations for backward."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.d_in:
        raise DimensionMismatchError(
            f"inputs of shape {x.shape} do not match d_in={params.d_in}"
        )
    pre1 = x @ params.w1 + params.b1
    act1 = np.maximum(pre1, 0.0)
    z = act1 @ params.w2 + params.b2
    y = None if labels is None else np.asarray(labels, dtype=np.int64)
    return FeatureBatch(x, pre1, act1, z, y)


def forward_logits(params: ModelParams, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != params.feature_dim:
        raise DimensionMismatchError(
            f"features of shape {z.shape} do not match feature_dim={params.feature_dim}"
        )
    return z @ params.v + params.c


def backward(
    params: ModelParams,
    batch: FeatureBatch,
    grad_z: np.ndarray | None,
    grad_logits: np.ndarray | None,
) -> Gradients:
    """Backpropagate upstream feature and logit gradients to the parameters.

    ``grad_z`` hits the extractor output directly; ``grad_logits`` flows
    through the classifier and then into the extractor as well.  Either may
    be None, meaning zero.
    """
    n = batch.z.shape[0]
    gz = np.zeros_like(batch.z) if grad_z is None else np.asarray(grad_z, np.float64)
    if gz.shape != batch.z.shape:
        raise ShapeMismatchError(f"grad_z shape {gz.shape} != {batch.z.shape}")

    if grad_logits is None:
        gv = np.zeros_like(params.v)
        gc = np.zeros_like(params.c)
        gz_total = gz
    else:
        gl = np.asarray(grad_logits, dtype=np.float64)
        if gl.shape != (n, params.num_classes):
            raise ShapeMismatchError(
                f"grad_logits shape {gl.shape} != {(n, params.num_classes)}"
            )
        gv = batch.z.T @ gl
        gc = gl.sum(axis=0)
        gz_total = gz + gl @ params.v.T

    gw2 = batch.act1.T @ gz_total
    gb2 = gz_total.sum(axis=0)
    ga1 = gz_total @ params.w2.T
    gpre1 = ga1 * (batch.pre1 > 0.0)
    gw1 = batch.inputs.T @ gpre1
    gb1 = gpre1.sum(axis=0)

    grads = Gradients(gw1, gb1, gw2, gb2, gv, gc)
    if not np.isfinite(grads.flat()).all():
        raise NonfiniteGradientError("gradient contains NaN or Inf")
    return grads


def sgd_step(
    params: ModelParams, grads: Gradients, config: OptimizerConfig
) -> ModelParams:
    """One SGD-with-momentum update; weight decay is added to the gradient.

    buf <- momentum * buf + (grad + weight_decay * param)
    param <- param - learning_rate * buf
    """
    if not np.isfinite(grads.flat()).all():
        raise NonfiniteGradientError("gradient contains NaN or Inf")
    new = params.copy()
    for name in _FIELDS:
        p = getattr(new, name)
        g = getattr(grads, name) + config.weight_decay * p
        buf = config.momentum * new.momentum[name] + g
        new.momentum[name] = buf
        setattr(new, name, p - config.learning_rate * buf)
    return new


def evaluate_accuracy(params: ModelParams, features: np.ndarray,
                      labels: np.ndarray) -> float:
    """Fraction of samples whose argmax logit matches the 1-based label."""
    z = forward_features(params, features).z
    pred = np.argmax(forward_logits(params, z), axis=1) + 1
    return float(np.mean(pred == np.asarray(labels)))


def save_params(path, params: ModelParams) -> None:
    """Write the FSP1 container: dims header, then f32 weights and momentum
    buffers in declaration order."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, params.d_in, params.hidden,
                              params.feature_dim, params.num_classes))
        for name in _FIELDS:
            fh.write(getattr(params, name).astype("<f4").tobytes())
        for name in _FIELDS:
            fh.write(params.momentum[name].astype("<f4").tobytes())


def load_params(path) -> ModelParams:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise MalformedHeaderError(f"{path}: header truncated at {len(raw)} bytes")
    magic, d_in, hidden, feature_dim, num_classes = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise MalformedHeaderError(f"{path}: bad magic {magic!r}")
    if min(d_in, hidden, feature_dim, num_classes) < 1:
        raise DimensionMismatchError(f"{path}: header declares a zero dimension")
    shapes = [
        (d_in, hidden), (hidden,), (hidden, feature_dim), (feature_dim,),
        (feature_dim, num_classes), (num_classes,),
    ]
    total = sum(int(np.prod(s)) for s in shapes)
    expected = _HEADER.size + 2 * total * 4
    if len(raw) != expected:
        raise TruncatedFileError(
            f"{path}: expected {expected} bytes, found {len(raw)}"
        )
    flat = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    arrays = []
    at = 0
    for shape in shapes + shapes:
        size = int(np.prod(shape))
        arrays.append(flat[at : at + size].reshape(shape))
        at += size
    momentum = dict(zip(_FIELDS, arrays[6:]))
    return ModelParams(*arrays[:6], momentum)
