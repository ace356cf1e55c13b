"""Local training objective: cross-entropy plus two prototype terms.

RPCL pulls a sample's features toward every relational prototype of its own
class and away from other classes' (an InfoNCE-style contrast over
distance-normalized cosine similarities); CPDR penalizes the distance to the
class's consistent prototype.  The total loss is the unweighted sum
CE + RPCL + CPDR, with optional term weights for ablations.

Per-sample functions are the readable reference; ``total_loss`` runs a
vectorized batch path that the tests pin against them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateVectorError,
    DimensionMismatchError,
    EmptyFeatureSetError,
    InvalidArgumentError,
    LabelOutOfRangeError,
    NoNegativePrototypeError,
    NoPositivePrototypeError,
)
from .model import FeatureBatch, ModelParams, forward_logits
from .prototypes import ConsistentSet, RelationalSet

_EPS = 1e-12


@dataclass
class SimilarityContext:
    """Per-prototype distance normalizers U[j, k] plus the temperature."""

    u: np.ndarray      # (num_classes, num_clients)
    valid: np.ndarray  # (num_classes, num_clients) bool
    tau: float = 0.05

    def __post_init__(self):
        if self.tau <= 0:
            raise InvalidArgumentError("tau must be > 0")


@dataclass
class LossBreakdown:
    """Batch-mean loss terms and upstream gradients for backprop.

    ``total == ce + rpcl + cpdr`` (term weights folded in); ``grad_z`` and
    ``grad_logits`` are gradients of the batch-mean total.
    """

    ce: float
    rpcl: float
    cpdr: float
    total: float
    grad_z: np.ndarray       # (n, d)
    grad_logits: np.ndarray  # (n, num_classes)


def similarity(z: np.ndarray, r: np.ndarray, u: float) -> float:
    """Distance-normalized cosine similarity cos(z, r) / u."""
    z = np.asarray(z, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    zn, rn = np.linalg.norm(z), np.linalg.norm(r)
    if zn < _EPS or rn < _EPS:
        raise DegenerateVectorError("zero-norm vector in similarity")
    if u <= 0:
        raise InvalidArgumentError("normalizer u must be > 0")
    return float(z @ r / (zn * rn * u))


def compute_normalizers(
    features: np.ndarray, relational: RelationalSet, tau: float = 0.05
) -> SimilarityContext:
    """Mean distance from a client's features to each relational prototype.

    U[j, k] averages ||z_q - r[j, k]|| over all the client's features, the
    scale that divides the cosine in RPCL.  Recomputed from a feature
    snapshot at every epoch start.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise EmptyFeatureSetError("need a nonempty (n, d) feature matrix")
    num_classes, num_clients, d = relational.r.shape
    if feats.shape[1] != d:
        raise DimensionMismatchError(
            f"features dim {feats.shape[1]} != prototype dim {d}"
        )
    # ||z - r||^2 = ||z||^2 + ||r||^2 - 2 z.r, clipped against rounding
    r_flat = relational.r.reshape(-1, d)
    sq = (
        np.sum(feats**2, axis=1)[:, None]
        + np.sum(r_flat**2, axis=1)[None, :]
        - 2.0 * feats @ r_flat.T
    )
    u = np.sqrt(np.maximum(sq, 0.0)).mean(axis=0).reshape(num_classes, num_clients)
    return SimilarityContext(u, relational.valid.copy(), tau)


def _check_label(label: int, num_classes: int) -> int:
    if not 1 <= label <= num_classes:
        raise LabelOutOfRangeError(f"label {label} outside 1..{num_classes}")
    return label - 1


def rpcl_loss_and_grad(
    z: np.ndarray,
    label: int,
    relational: RelationalSet,
    context: SimilarityContext,
) -> tuple[float, np.ndarray]:
    """Contrastive loss of one sample against the relational prototypes.

    Positives are the valid prototypes of the sample's class, negatives every
    other class's valid prototype.  Returns the loss and its gradient in z,
    holding prototypes and normalizers fixed.
    """
    z = np.asarray(z, dtype=np.float64)
    num_classes, num_clients, d = relational.r.shape
    j = _check_label(label, num_classes)
    zn = np.linalg.norm(z)
    if zn < _EPS:
        raise DegenerateVectorError("zero-norm feature vector")

    scores, grads, positive = [], [], []
    for q in range(num_classes):
        for k in range(num_clients):
            if not (relational.valid[q, k] and context.valid[q, k]):
                continue
            r = relational.r[q, k]
            rn = np.linalg.norm(r)
            if rn < _EPS:
                raise DegenerateVectorError("zero-norm relational prototype")
            u = context.u[q, k]
            if u <= 0:
                raise InvalidArgumentError("normalizer u must be > 0")
            cos = float(z @ r / (zn * rn))
            scores.append(cos / u)
            grads.append((r / rn - cos * z / zn) / (zn * u))
            positive.append(q == j)

    positive = np.array(positive, dtype=bool)
    if not positive.any():
        raise NoPositivePrototypeError(f"no relational prototype for class {label}")
    if positive.all():
        raise NoNegativePrototypeError(f"no negative prototype against class {label}")

    s = np.array(scores) / context.tau
    shift = s.max()
    w = np.exp(s - shift)
    s_all = w.sum()
    s_pos = w[positive].sum()
    loss = float(np.log(s_all) - np.log(s_pos))
    coef = (w / s_all - positive * (w / s_pos)) / context.tau
    grad = np.zeros_like(z)
    for c, g in zip(coef, grads):
        grad += c * g
    return loss, grad


def cpdr_loss_and_grad(
    z: np.ndarray, label: int, consistent: ConsistentSet, norm: str = "l1"
) -> tuple[float, np.ndarray]:
    """Distance from features to the class's consistent prototype.

    ``norm="l1"`` sums coordinate-wise absolute differences (the default);
    ``norm="l2"`` uses the Euclidean distance instead.
    """
    z = np.asarray(z, dtype=np.float64)
    j = _check_label(label, consistent.o.shape[0])
    if not consistent.present[j]:
        raise NoPositivePrototypeError(f"no consistent prototype for class {label}")
    diff = z - consistent.o[j]
    if norm == "l1":
        return float(np.abs(diff).sum()), np.sign(diff)
    if norm == "l2":
        dist = float(np.linalg.norm(diff))
        grad = diff / dist if dist > _EPS else np.zeros_like(diff)
        return dist, grad
    raise InvalidArgumentError(f"unknown cpdr norm '{norm}'")


def ce_loss_and_grad(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy of one sample; gradient is softmax - onehot."""
    logits = np.asarray(logits, dtype=np.float64)
    j = _check_label(label, logits.shape[0])
    shifted = logits - logits.max()
    lse = float(np.log(np.exp(shifted).sum()))
    probs = np.exp(shifted - lse)
    grad = probs.copy()
    grad[j] -= 1.0
    return lse - float(shifted[j]), grad


def _rpcl_batch(
    z: np.ndarray,
    labels: np.ndarray,
    relational: RelationalSet,
    context: SimilarityContext,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized RPCL over a batch; samples without a valid positive or
    negative contribute zero."""
    n, d = z.shape
    num_classes, num_clients = relational.valid.shape
    valid = (relational.valid & context.valid).ravel()
    if not valid.any():
        return np.zeros(n), np.zeros_like(z)

    r_flat = relational.r.reshape(-1, d)[valid]
    u_flat = context.u.ravel()[valid]
    class_of = np.repeat(np.arange(num_classes), num_clients)[valid]

    zn = np.linalg.norm(z, axis=1)
    if (zn < _EPS).any():
        raise DegenerateVectorError("zero-norm feature vector in batch")
    rn = np.linalg.norm(r_flat, axis=1)
    if (rn < _EPS).any():
        raise DegenerateVectorError("zero-norm relational prototype")
    z_hat = z / zn[:, None]
    r_hat = r_flat / rn[:, None]
    cos = z_hat @ r_hat.T                       # (n, P)
    s = cos / u_flat[None, :] / context.tau

    pos = class_of[None, :] == (labels - 1)[:, None]   # (n, P)
    pos_count = pos.sum(axis=1)
    neg_count = pos.shape[1] - pos_count
    active = (pos_count > 0) & (neg_count > 0)

    shift = s.max(axis=1, keepdims=True)
    w = np.exp(s - shift)
    s_all = w.sum(axis=1)
    s_pos = np.where(pos, w, 0.0).sum(axis=1)
    losses = np.where(active, np.log(s_all) - np.log(np.maximum(s_pos, _EPS)), 0.0)

    coef = (w / s_all[:, None] - pos * (w / np.maximum(s_pos, _EPS)[:, None]))
    coef /= context.tau
    coef *= active[:, None]
    coef_u = coef / u_flat[None, :]
    grad = (coef_u @ r_hat - (coef_u * cos).sum(axis=1)[:, None] * z_hat)
    grad /= zn[:, None]
    return losses, grad


def _cpdr_batch(
    z: np.ndarray, labels: np.ndarray, consistent: ConsistentSet, norm: str
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized CPDR; samples of classes without a prototype contribute zero."""
    idx = labels - 1
    active = consistent.present[idx]
    diff = z - consistent.o[idx]
    if norm == "l1":
        losses = np.abs(diff).sum(axis=1)
        grad = np.sign(diff)
    elif norm == "l2":
        losses = np.linalg.norm(diff, axis=1)
        grad = diff / np.maximum(losses, _EPS)[:, None]
    else:
        raise InvalidArgumentError(f"unknown cpdr norm '{norm}'")
    return losses * active, grad * active[:, None]


def _ce_batch(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    idx = labels - 1
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    losses = lse - shifted[np.arange(len(idx)), idx]
    grad = np.exp(shifted - lse[:, None])
    grad[np.arange(len(idx)), idx] -= 1.0
    return losses, grad


def total_loss(
    batch: FeatureBatch,
    relational: RelationalSet | None,
    consistent: ConsistentSet | None,
    context: SimilarityContext | None,
    params: ModelParams,
    rpcl_weight: float = 1.0,
    cpdr_weight: float = 1.0,
    cpdr_norm: str = "l1",
) -> LossBreakdown:
    """Batch-mean composite loss CE + RPCL + CPDR with upstream gradients.

    The prototype terms apply only when ``relational``/``consistent`` (and
    ``context``) are given, and per sample only where the sample's class has
    valid prototypes; otherwise they contribute zero, which makes a run
    without prototypes identical to plain cross-entropy training.
    """
    if batch.labels is None:
        raise InvalidArgumentError("batch must carry labels")
    labels = batch.labels
    num_classes = params.num_classes
    if labels.min() < 1 or labels.max() > num_classes:
        raise LabelOutOfRangeError(f"labels outside 1..{num_classes}")
    n = batch.z.shape[0]
    logits = forward_logits(params, batch.z)

    ce_losses, ce_grad = _ce_batch(logits, labels)
    if relational is not None and context is not None:
        rpcl_losses, rpcl_grad = _rpcl_batch(batch.z, labels, relational, context)
    else:
        rpcl_losses, rpcl_grad = np.zeros(n), np.zeros_like(batch.z)
    if consistent is not None:
        cpdr_losses, cpdr_grad = _cpdr_batch(batch.z, labels, consistent, cpdr_norm)
    else:
        cpdr_losses, cpdr_grad = np.zeros(n), np.zeros_like(batch.z)

    ce = float(ce_losses.mean())
    rpcl = rpcl_weight * float(rpcl_losses.mean())
    cpdr = cpdr_weight * float(cpdr_losses.mean())
    grad_z = (rpcl_weight * rpcl_grad + cpdr_weight * cpdr_grad) / n
    grad_logits = ce_grad / n
    return LossBreakdown(ce, rpcl, cpdr, ce + rpcl + cpdr, grad_z, grad_logits)
