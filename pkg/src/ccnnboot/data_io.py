"""Dataset loading and generation.

Supports the IDX binary image format (big-endian, standard MNIST layout),
a little-endian "CCNF" feature-bundle format for pre-extracted convolution
features, synthetic logistic / separable-margin data, and deterministic
resampling with replacement.

All randomness goes through ``numpy.random.default_rng`` (PCG64); every
stochastic operation takes an explicit 64-bit seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadHeaderError,
    CountMismatchError,
    EmptyDatasetError,
    MalformedMagicError,
    RejectionCapError,
    TruncatedFileError,
)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
FEATURE_MAGIC = b"CCNF"
FEATURE_VERSION = 1

SOURCE_RAW = "raw-image"
SOURCE_FEATURE = "extracted-feature"
SOURCE_SYNTHETIC = "synthetic"

# Bounded termination for separable-margin rejection sampling.
REJECTION_CAP = 10**6


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of samples sharing one shape.

    ``inputs`` has shape (n, height, width, channels) with float64 values;
    raw images are stored rescaled to [0, 1].  Synthetic vector data uses
    height == width == 1 with the vector along the channel axis.
    """

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    source_kind: str = SOURCE_RAW

    def __post_init__(self):
        if self.inputs.ndim != 4:
            raise BadHeaderError(
                f"inputs must be 4-D (n, h, w, c), got shape {self.inputs.shape}"
            )
        if len(self.inputs) == 0:
            raise EmptyDatasetError("dataset must contain at least one sample")
        if len(self.labels) != len(self.inputs):
            raise CountMismatchError(
                f"{len(self.inputs)} samples but {len(self.labels)} labels"
            )
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise CountMismatchError(
                f"labels must lie in [0, {self.num_classes})"
            )

    def __len__(self):
        return len(self.inputs)

    @property
    def sample_shape(self):
        return self.inputs.shape[1:]


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for synthetic binary-classification data.

    ``noise_kind`` is "logistic" (labels drawn Bernoulli(sigmoid(<w, x>)))
    or "separable-margin" (labels sign(<w, x>), draws with
    abs(<w, x>) < margin_width rejected).
    """

    input_dim: int
    true_coefficients: np.ndarray
    noise_kind: str = "logistic"
    margin_width: float = 0.0
    seed: int = 0

    def __post_init__(self):
        coeffs = np.asarray(self.true_coefficients, dtype=np.float64)
        object.__setattr__(self, "true_coefficients", coeffs)
        if coeffs.shape != (self.input_dim,):
            raise BadHeaderError(
                f"true_coefficients must have length {self.input_dim}"
            )
        if self.noise_kind not in ("logistic", "separable-margin"):
            raise BadHeaderError(f"unknown noise kind {self.noise_kind!r}")
        if self.margin_width < 0:
            raise BadHeaderError("margin_width must be nonnegative")


def _read_exact(fh, count, path):
    buf = fh.read(count)
    if len(buf) != count:
        raise TruncatedFileError(
            f"{path}: expected {count} more bytes, got {len(buf)}"
        )
    return buf


def load_idx(image_path, label_path, num_classes=None):
    """Load an IDX image/label file pair into a Dataset.

    Pixels are rescaled to [0, 1] by division by 255.  ``num_classes``
    defaults to max(label) + 1.
    """
    with open(image_path, "rb") as fh:
        magic, n, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, image_path))
        if magic != IDX_IMAGE_MAGIC:
            raise MalformedMagicError(
                f"{image_path}: image magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"
            )
        raw = _read_exact(fh, n * rows * cols, image_path)
        pixels = np.frombuffer(raw, dtype=np.uint8).reshape(n, rows, cols, 1)
    with open(label_path, "rb") as fh:
        magic, n_labels = struct.unpack(">II", _read_exact(fh, 8, label_path))
        if magic != IDX_LABEL_MAGIC:
            raise MalformedMagicError(
                f"{label_path}: label magic {magic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"
            )
        if n_labels != n:
            raise CountMismatchError(
                f"{n} images but {n_labels} labels"
            )
        labels = np.frombuffer(_read_exact(fh, n, label_path), dtype=np.uint8)
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    return Dataset(
        inputs=pixels.astype(np.float64) / 255.0,
        labels=labels.astype(np.int64),
        num_classes=num_classes,
        source_kind=SOURCE_RAW,
    )


def write_idx(data, image_path, label_path):
    """Write a single-channel Dataset back out as an IDX pair.

    Pixels are rescaled by 255; exact inverse of load_idx for files it read.
    """
    n, rows, cols, channels = data.inputs.shape
    if channels != 1:
        raise BadHeaderError("IDX export requires single-channel images")
    pixels = np.rint(data.inputs[..., 0] * 255.0).astype(np.uint8)
    with open(image_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, rows, cols))
        fh.write(pixels.tobytes())
    with open(label_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABEL_MAGIC, n))
        fh.write(data.labels.astype(np.uint8).tobytes())


def load_features(path):
    """Load a CCNF feature bundle written by write_features."""
    with open(path, "rb") as fh:
        header = _read_exact(fh, 4 + 6 * 4, path)
        if header[:4] != FEATURE_MAGIC:
            raise BadHeaderError(f"{path}: bad magic {header[:4]!r}")
        version, n, h, w, c, d2 = struct.unpack("<6I", header[4:])
        if version != FEATURE_VERSION:
            raise BadHeaderError(f"{path}: unsupported version {version}")
        if n == 0 or h == 0 or w == 0 or c == 0 or d2 == 0:
            raise BadHeaderError(f"{path}: zero dimension in header")
        labels = np.frombuffer(_read_exact(fh, 4 * n, path), dtype="<u4")
        values = np.frombuffer(_read_exact(fh, 4 * n * h * w * c, path), dtype="<f4")
        if fh.read(1):
            raise TruncatedFileError(f"{path}: trailing bytes after payload")
    if labels.max() >= d2:
        raise BadHeaderError(f"{path}: label exceeds declared class count {d2}")
    return Dataset(
        inputs=values.astype(np.float64).reshape(n, h, w, c),
        labels=labels.astype(np.int64),
        num_classes=int(d2),
        source_kind=SOURCE_FEATURE,
    )


def write_features(data, path):
    """Write a Dataset as a CCNF feature bundle (little-endian f32)."""
    n, h, w, c = data.inputs.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<6I", FEATURE_VERSION, n, h, w, c, data.num_classes))
        fh.write(data.labels.astype("<u4").tobytes())
        fh.write(data.inputs.astype("<f4").tobytes())


def resample_indices(n, size, seed):
    """Uniform with-replacement index draw; pure function of (n, size, seed)."""
    rng = np.random.default_rng(seed)
    return rng.integers(0, n, size=size)


def resample(data, size, seed):
    """Bootstrap resample: ``size`` draws with replacement, deterministic."""
    if len(data) == 0:
        raise EmptyDatasetError("cannot resample an empty dataset")
    idx = resample_indices(len(data), size, seed)
    return Dataset(
        inputs=data.inputs[idx],
        labels=data.labels[idx],
        num_classes=data.num_classes,
        source_kind=data.source_kind,
    )


def generate_synthetic(spec, n):
    """Draw n i.i.d. standard-normal inputs and labels per the spec's mode.

    Inputs are stored with shape (n, 1, 1, input_dim) so the rest of the
    pipeline treats each vector as a single-patch sample.
    """
    rng = np.random.default_rng(spec.seed)
    w = spec.true_coefficients
    if spec.noise_kind == "logistic":
        x = rng.standard_normal((n, spec.input_dim))
        p = 1.0 / (1.0 + np.exp(-(x @ w)))
        y = (rng.random(n) < p).astype(np.int64)
    else:
        x = np.empty((n, spec.input_dim))
        y = np.empty(n, dtype=np.int64)
        accepted = 0
        drawn = 0
        while accepted < n:
            block = rng.standard_normal((max(n - accepted, 64), spec.input_dim))
            drawn += len(block)
            margins = block @ w
            keep = np.abs(margins) >= spec.margin_width
            take = min(int(keep.sum()), n - accepted)
            x[accepted : accepted + take] = block[keep][:take]
            y[accepted : accepted + take] = (margins[keep][:take] > 0).astype(np.int64)
            accepted += take
            if drawn >= 10_000 and accepted < drawn * 1e-3:
                raise RejectionCapError(
                    f"acceptance rate below 1e-3 after {drawn} draws"
                )
            if drawn > REJECTION_CAP * n:
                raise RejectionCapError(f"rejection cap hit after {drawn} draws")
    return Dataset(
        inputs=x.reshape(n, 1, 1, spec.input_dim),
        labels=y,
        num_classes=2,
        source_kind=SOURCE_SYNTHETIC,
    )
