"""Patch extraction: turn images into matrices of vectorized sub-windows.

Patches are enumerated row-major over the grid of top-left corners and each
patch is flattened row-major over (row, col, channel).  The order is
arbitrary but frozen: warm starts are only meaningful if coefficient rows
keep their meaning across fits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import MisalignedStrideError, ShapeMismatchError


@dataclass(frozen=True)
class PatchConfig:
    patch_size: int
    stride: int

    def __post_init__(self):
        if self.patch_size < 1 or self.stride < 1:
            raise MisalignedStrideError("patch size and stride must be positive")


@dataclass(frozen=True)
class PatchSet:
    """A dataset converted to patch matrices.

    ``patches`` has shape (n, P, q) with q the per-patch feature dimension;
    this is the representation the model and trainer consume.
    """

    patches: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.patches.ndim != 3:
            raise ShapeMismatchError(
                f"patches must be 3-D (n, P, q), got {self.patches.shape}"
            )
        if len(self.labels) != len(self.patches):
            raise ShapeMismatchError("patch/label count mismatch")

    def __len__(self):
        return len(self.patches)

    @property
    def patch_count(self):
        return self.patches.shape[1]

    @property
    def feature_dim(self):
        return self.patches.shape[2]

    def subset(self, indices):
        return PatchSet(self.patches[indices], self.labels[indices], self.num_classes)


def patch_count(image_size, cfg):
    """Number of patches per axis squared: ((l1 - l2)/s + 1)^2."""
    if cfg.patch_size > image_size:
        raise MisalignedStrideError(
            f"patch size {cfg.patch_size} exceeds image size {image_size}"
        )
    if (image_size - cfg.patch_size) % cfg.stride != 0:
        raise MisalignedStrideError(
            f"stride {cfg.stride} does not tile image size {image_size} "
            f"with patch size {cfg.patch_size}"
        )
    per_axis = (image_size - cfg.patch_size) // cfg.stride + 1
    return per_axis * per_axis


def extract_patches(pixels, cfg):
    """Patch matrix of one image tensor (h, w, c) -> (P, q)."""
    h, w, c = pixels.shape
    if h != w:
        raise ShapeMismatchError(f"images must be square, got {h}x{w}")
    count = patch_count(h, cfg)
    l2 = cfg.patch_size
    windows = sliding_window_view(pixels, (l2, l2), axis=(0, 1))
    windows = windows[:: cfg.stride, :: cfg.stride]
    # windows axes: (row, col, channel, patch_row, patch_col)
    windows = np.moveaxis(windows, 2, 4)
    out = windows.reshape(count, l2 * l2 * c)
    return np.ascontiguousarray(out)


def patchify(data, cfg):
    """Convert a whole Dataset into a PatchSet (vectorized over samples)."""
    n, h, w, c = data.inputs.shape
    if h != w:
        raise ShapeMismatchError(f"images must be square, got {h}x{w}")
    count = patch_count(h, cfg)
    l2 = cfg.patch_size
    windows = sliding_window_view(data.inputs, (l2, l2), axis=(1, 2))
    windows = windows[:, :: cfg.stride, :: cfg.stride]
    # axes: (sample, row, col, channel, patch_row, patch_col)
    windows = np.moveaxis(windows, 3, 5)
    patches = np.ascontiguousarray(windows.reshape(n, count, l2 * l2 * c))
    return PatchSet(patches, data.labels.copy(), data.num_classes)
