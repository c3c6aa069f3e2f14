"""The convexified convolutional score function and its training objective.

The sole trainable object is a coefficient matrix of shape (q, P * d2):
per-class blocks of P patch-coefficient columns, concatenated along columns
(column index k * P + p for class k, patch p).  The nuclear norm is taken of
this full matrix, so a single spectral constraint couples filters across
patches and classes.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadHeaderError,
    BadLabelError,
    EmptyBatchError,
    ShapeMismatchError,
)

PARAMS_MAGIC = b"CCNA"
PARAMS_VERSION = 1


@dataclass(frozen=True)
class CcnnParams:
    """Coefficient matrix plus the shape metadata needed to apply it."""

    coeffs: np.ndarray  # (feature_dim q, patch_count P * num_classes d2)
    patch_count: int
    num_classes: int

    def __post_init__(self):
        q, cols = self.coeffs.shape
        if cols != self.patch_count * self.num_classes:
            raise ShapeMismatchError(
                f"coefficient matrix has {cols} columns, expected "
                f"{self.patch_count} * {self.num_classes}"
            )

    @property
    def feature_dim(self):
        return self.coeffs.shape[0]

    def class_blocks(self):
        """View of the coefficients with axes (q, num_classes, patch_count)."""
        q = self.feature_dim
        return self.coeffs.reshape(q, self.num_classes, self.patch_count)

    def digest(self):
        """Hex digest of the serialized coefficients (for provenance logs)."""
        h = hashlib.sha256()
        h.update(struct.pack("<3I", self.feature_dim, self.patch_count, self.num_classes))
        h.update(np.ascontiguousarray(self.coeffs, dtype="<f8").tobytes())
        return h.hexdigest()


def zero_params(feature_dim, patch_count, num_classes):
    return CcnnParams(
        coeffs=np.zeros((feature_dim, patch_count * num_classes)),
        patch_count=patch_count,
        num_classes=num_classes,
    )


def score(params, patches):
    """Per-class logits for one patch matrix (P, q): sum_p <A_p^(k), z_p>."""
    if patches.shape != (params.patch_count, params.feature_dim):
        raise ShapeMismatchError(
            f"patch matrix shape {patches.shape}, expected "
            f"({params.patch_count}, {params.feature_dim})"
        )
    return np.einsum("pq,qkp->k", patches, params.class_blocks())


def score_batch(params, patches):
    """Logits for a batch of patch matrices (n, P, q) -> (n, d2)."""
    if patches.shape[1:] != (params.patch_count, params.feature_dim):
        raise ShapeMismatchError(
            f"patch batch shape {patches.shape}, expected "
            f"(*, {params.patch_count}, {params.feature_dim})"
        )
    return np.einsum("ipq,qkp->ik", patches, params.class_blocks())


def softmax_probs(logits):
    """Row-wise stable softmax; works on a single vector or a batch."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _log_probs(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def log_loss(logits, label):
    """Cross entropy -log softmax(logits)[label], in log-sum-exp form."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[-1]:
        raise BadLabelError(f"label {label} out of range for {logits.shape[-1]} classes")
    return float(-_log_probs(logits)[label])


def mean_log_loss(params, patches, labels):
    """Average cross entropy of a patch batch."""
    logp = _log_probs(score_batch(params, patches))
    return float(-logp[np.arange(len(labels)), labels].mean())


def data_gradient(params, patches, labels):
    """Gradient of the batch-mean cross entropy with respect to the coefficients.

    Column block (p, k) receives (softmax_k - 1{k == label}) z_p(x) / n
    summed over the batch.
    """
    if len(patches) == 0:
        raise EmptyBatchError("gradient of an empty batch")
    probs = softmax_probs(score_batch(params, patches))
    delta = probs.copy()
    delta[np.arange(len(labels)), labels] -= 1.0
    delta /= len(labels)
    q = params.feature_dim
    grad = np.einsum("ik,ipq->qkp", delta, patches)
    return grad.reshape(q, params.num_classes * params.patch_count)


def save_params(params, path):
    """Serialize: magic CCNA, version, dims (q, P, d2), row-major f64 LE."""
    with open(path, "wb") as fh:
        fh.write(PARAMS_MAGIC)
        fh.write(
            struct.pack(
                "<4I",
                PARAMS_VERSION,
                params.feature_dim,
                params.patch_count,
                params.num_classes,
            )
        )
        fh.write(np.ascontiguousarray(params.coeffs, dtype="<f8").tobytes())


def load_params(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != PARAMS_MAGIC:
            raise BadHeaderError(f"{path}: bad magic {magic!r}")
        version, q, p, d2 = struct.unpack("<4I", fh.read(16))
        if version != PARAMS_VERSION:
            raise BadHeaderError(f"{path}: unsupported version {version}")
        payload = fh.read(8 * q * p * d2)
        if len(payload) != 8 * q * p * d2:
            raise BadHeaderError(f"{path}: truncated payload")
        coeffs = np.frombuffer(payload, dtype="<f8").reshape(q, p * d2)
    return CcnnParams(coeffs=coeffs.copy(), patch_count=p, num_classes=d2)
