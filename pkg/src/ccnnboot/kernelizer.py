"""Kernel features for the non-linear model via Nystrom approximation.

Instead of the full patch-pair Gram matrix, draw m anchor patches, factor
their Gram matrix, and map any patch z to
transform @ k(z, anchors).  Inner products of these features reproduce the
kernel exactly on the anchors and approximate it elsewhere, with feature
dimension m' <= m (eigenvalues below cutoff dropped).

Anchors may come from a secondary patch pool so the features are independent
of the training samples.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadHeaderError,
    InsufficientAnchorsError,
    RankDeficientError,
    ShapeMismatchError,
)
from .patching import PatchSet

FEATURE_MAP_MAGIC = b"CCNK"
FEATURE_MAP_VERSION = 1

# Relative eigenvalue cutoff for the anchor Gram factorization.
EIGENVALUE_CUTOFF = 1e-10


@dataclass(frozen=True)
class KernelConfig:
    gamma: float
    anchor_count: int
    secondary_pool: np.ndarray | None = None  # (N, q) patch vectors

    def __post_init__(self):
        if self.gamma <= 0:
            raise ShapeMismatchError("gamma must be positive")
        if self.anchor_count < 1:
            raise ShapeMismatchError("anchor_count must be at least 1")


@dataclass(frozen=True)
class KernelFeatureMap:
    anchors: np.ndarray  # (m, q)
    transform: np.ndarray  # (m', m)
    gamma: float

    @property
    def feature_dim(self):
        return self.transform.shape[0]


def rbf_kernel(u, v, gamma):
    """Gaussian radial kernel exp(-gamma * ||u - v||^2) between row sets."""
    sq = (
        np.sum(u**2, axis=1)[:, None]
        + np.sum(v**2, axis=1)[None, :]
        - 2.0 * u @ v.T
    )
    return np.exp(-gamma * np.maximum(sq, 0.0))


def patch_pool(pset):
    """All patch vectors of a PatchSet as one (n * P, q) pool."""
    n, p, q = pset.patches.shape
    return pset.patches.reshape(n * p, q)


def build_feature_map(pool, cfg, seed):
    """Draw anchors and factor their Gram matrix into a feature transform.

    ``pool`` is an (N, q) array of candidate patch vectors; anchors come from
    ``cfg.secondary_pool`` instead when it is set.
    """
    source = cfg.secondary_pool if cfg.secondary_pool is not None else pool
    if len(source) < cfg.anchor_count:
        raise InsufficientAnchorsError(
            f"need {cfg.anchor_count} anchors, pool has {len(source)}"
        )
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(source), size=cfg.anchor_count, replace=False)
    anchors = np.ascontiguousarray(source[idx], dtype=np.float64)
    gram = rbf_kernel(anchors, anchors, cfg.gamma)
    eigvals, eigvecs = np.linalg.eigh(gram)
    keep = eigvals > EIGENVALUE_CUTOFF * eigvals.max()
    if not keep.any():
        raise RankDeficientError("all anchor Gram eigenvalues below cutoff")
    # Descending order so feature 0 carries the largest eigenvalue.
    eigvals = eigvals[keep][::-1]
    eigvecs = eigvecs[:, keep][:, ::-1]
    transform = eigvecs.T / np.sqrt(eigvals)[:, None]
    return KernelFeatureMap(anchors=anchors, transform=transform, gamma=cfg.gamma)


def featurize_rows(fmap, rows):
    """Map (k, q) patch vectors to (k, m') kernel features."""
    if rows.shape[1] != fmap.anchors.shape[1]:
        raise ShapeMismatchError(
            f"patch dimension {rows.shape[1]} != anchor dimension "
            f"{fmap.anchors.shape[1]}"
        )
    return rbf_kernel(rows, fmap.anchors, fmap.gamma) @ fmap.transform.T


def featurize(fmap, patches):
    """Replace each row of one patch matrix (P, q) by its kernel feature."""
    return featurize_rows(fmap, patches)


def featurize_set(fmap, pset):
    """Featurize every sample of a PatchSet; downstream code is unchanged."""
    n, p, q = pset.patches.shape
    flat = featurize_rows(fmap, pset.patches.reshape(n * p, q))
    return PatchSet(
        patches=flat.reshape(n, p, fmap.feature_dim),
        labels=pset.labels,
        num_classes=pset.num_classes,
    )


def save_feature_map(fmap, path):
    """Serialize: magic CCNK, version, m, m', patch dim, gamma, payload f64 LE."""
    m, q = fmap.anchors.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAP_MAGIC)
        fh.write(struct.pack("<4I", FEATURE_MAP_VERSION, m, fmap.feature_dim, q))
        fh.write(struct.pack("<d", fmap.gamma))
        fh.write(np.ascontiguousarray(fmap.anchors, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(fmap.transform, dtype="<f8").tobytes())


def load_feature_map(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAP_MAGIC:
            raise BadHeaderError(f"{path}: bad magic {magic!r}")
        version, m, m_prime, q = struct.unpack("<4I", fh.read(16))
        if version != FEATURE_MAP_VERSION:
            raise BadHeaderError(f"{path}: unsupported version {version}")
        (gamma,) = struct.unpack("<d", fh.read(8))
        anchors = np.frombuffer(fh.read(8 * m * q), dtype="<f8").reshape(m, q)
        transform = np.frombuffer(fh.read(8 * m_prime * m), dtype="<f8").reshape(
            m_prime, m
        )
    return KernelFeatureMap(
        anchors=anchors.copy(), transform=transform.copy(), gamma=gamma
    )
