"""Forward-only convolutional network for transfer-learning features.

Weight bundles arrive from external training tools (CCNW files or a JSON
manifest plus raw arrays); this module evaluates them, slices off the output
of the last convolution stage as features, and implements the
perturb-until-random-guess weight randomization.

All convolutions use valid (no) padding.  Layers carry no bias terms.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import data_io
from .errors import (
    BadHeaderError,
    CalibrationFailedError,
    NoConvLayerError,
    NonFiniteInputError,
    NonpositiveSigmaError,
    ShapeMismatchError,
)

BUNDLE_MAGIC = b"CCNW"
BUNDLE_VERSION = 1

_TAG_CONV = 1
_TAG_RELU = 2
_TAG_MAXPOOL = 3
_TAG_FLATTEN = 4
_TAG_DENSE = 5
_TAG_SOFTMAX = 6

PERTURB_MAX_ATTEMPTS = 20


@dataclass(frozen=True)
class ConvLayer:
    weights: np.ndarray  # (kh, kw, in_channels, out_channels)
    stride: int = 1


@dataclass(frozen=True)
class ReluLayer:
    pass


@dataclass(frozen=True)
class MaxPoolLayer:
    size: int
    stride: int


@dataclass(frozen=True)
class FlattenLayer:
    pass


@dataclass(frozen=True)
class DenseLayer:
    weights: np.ndarray  # (in_features, out_features)


@dataclass(frozen=True)
class SoftmaxLayer:
    pass


@dataclass(frozen=True)
class WeightBundle:
    layers: tuple

    def __post_init__(self):
        for layer in self.layers:
            if isinstance(layer, (ConvLayer, DenseLayer)) and not np.isfinite(
                layer.weights
            ).all():
                raise NonFiniteInputError("bundle contains non-finite weights")


def _conv2d(x, layer):
    kh, kw, in_c, out_c = layer.weights.shape
    h, w, c = x.shape
    if c != in_c:
        raise ShapeMismatchError(f"conv expects {in_c} channels, got {c}")
    if h < kh or w < kw:
        raise ShapeMismatchError(
            f"input {h}x{w} smaller than kernel {kh}x{kw}"
        )
    windows = sliding_window_view(x, (kh, kw), axis=(0, 1))
    windows = windows[:: layer.stride, :: layer.stride]
    # windows axes: (out_row, out_col, channel, kh, kw)
    return np.einsum("rcmij,ijmo->rco", windows, layer.weights)


def _maxpool(x, layer):
    h, w, c = x.shape
    if h < layer.size or w < layer.size:
        raise ShapeMismatchError("input smaller than pool window")
    windows = sliding_window_view(x, (layer.size, layer.size), axis=(0, 1))
    windows = windows[:: layer.stride, :: layer.stride]
    return windows.max(axis=(-2, -1))


def _apply_layer(x, layer):
    if isinstance(layer, ConvLayer):
        return _conv2d(x, layer)
    if isinstance(layer, ReluLayer):
        return np.maximum(x, 0.0)
    if isinstance(layer, MaxPoolLayer):
        return _maxpool(x, layer)
    if isinstance(layer, FlattenLayer):
        return x.reshape(-1)
    if isinstance(layer, DenseLayer):
        if x.ndim != 1 or x.shape[0] != layer.weights.shape[0]:
            raise ShapeMismatchError(
                f"dense expects {layer.weights.shape[0]} features, got {x.shape}"
            )
        return x @ layer.weights
    if isinstance(layer, SoftmaxLayer):
        shifted = x - x.max()
        e = np.exp(shifted)
        return e / e.sum()
    raise ShapeMismatchError(f"unknown layer {layer!r}")


def forward(bundle, pixels):
    """Evaluate the full network on one (h, w, c) input."""
    x = np.asarray(pixels, dtype=np.float64)
    for layer in bundle.layers:
        x = _apply_layer(x, layer)
        if not np.isfinite(x).all():
            raise NonFiniteInputError(
                f"non-finite activation after {type(layer).__name__}"
            )
    return x


def _feature_cutoff(bundle):
    """Index one past the last conv layer and any relu/pool directly after it."""
    last_conv = None
    for i, layer in enumerate(bundle.layers):
        if isinstance(layer, ConvLayer):
            last_conv = i
    if last_conv is None:
        raise NoConvLayerError("bundle contains no convolution layer")
    end = last_conv + 1
    while end < len(bundle.layers) and isinstance(
        bundle.layers[end], (ReluLayer, MaxPoolLayer)
    ):
        end += 1
    return end


def extract_features(bundle, data):
    """Run every sample up to the last conv stage; keep labels.

    Output is an extracted-feature Dataset, writable as a feature bundle.
    """
    end = _feature_cutoff(bundle)
    features = []
    for pixels in data.inputs:
        x = pixels
        for layer in bundle.layers[:end]:
            x = _apply_layer(x, layer)
        features.append(x)
    stacked = np.stack(features)
    return data_io.Dataset(
        inputs=stacked,
        labels=data.labels.copy(),
        num_classes=data.num_classes,
        source_kind=data_io.SOURCE_FEATURE,
    )


def accuracy(bundle, data):
    """Top-1 accuracy of the full network over a labeled dataset."""
    hits = 0
    for pixels, label in zip(data.inputs, data.labels):
        hits += int(np.argmax(forward(bundle, pixels)) == label)
    return hits / len(data)


@dataclass(frozen=True)
class PerturbSpec:
    sigma: float
    target_accuracy: float
    calibration_data: data_io.Dataset
    seed: int = 0

    def __post_init__(self):
        if self.sigma <= 0:
            raise NonpositiveSigmaError("sigma must be positive")
        if not 0 < self.target_accuracy <= 1:
            raise NonpositiveSigmaError("target_accuracy must lie in (0, 1]")


@dataclass(frozen=True)
class PerturbResult:
    bundle: WeightBundle
    sigma: float
    accuracy: float
    attempts: int


def perturb(bundle, spec):
    """Add Gaussian noise to every weight until accuracy drops to the target.

    The noise scale doubles on each failed attempt, up to
    PERTURB_MAX_ATTEMPTS tries.
    """
    rng = np.random.default_rng(spec.seed)
    sigma = spec.sigma
    for attempt in range(1, PERTURB_MAX_ATTEMPTS + 1):
        noisy_layers = []
        for layer in bundle.layers:
            if isinstance(layer, ConvLayer):
                noisy_layers.append(
                    ConvLayer(
                        weights=layer.weights
                        + rng.normal(0.0, sigma, size=layer.weights.shape),
                        stride=layer.stride,
                    )
                )
            elif isinstance(layer, DenseLayer):
                noisy_layers.append(
                    DenseLayer(
                        weights=layer.weights
                        + rng.normal(0.0, sigma, size=layer.weights.shape)
                    )
                )
            else:
                noisy_layers.append(layer)
        candidate = WeightBundle(layers=tuple(noisy_layers))
        acc = accuracy(candidate, spec.calibration_data)
        if acc <= spec.target_accuracy:
            return PerturbResult(
                bundle=candidate, sigma=sigma, accuracy=acc, attempts=attempt
            )
        sigma *= 2.0
    raise CalibrationFailedError(
        f"accuracy stayed above {spec.target_accuracy} after "
        f"{PERTURB_MAX_ATTEMPTS} attempts"
    )


def save_bundle(bundle, path):
    """Serialize: magic CCNW, version, layer count, per-layer tag+shape+f32."""
    with open(path, "wb") as fh:
        fh.write(BUNDLE_MAGIC)
        fh.write(struct.pack("<2I", BUNDLE_VERSION, len(bundle.layers)))
        for layer in bundle.layers:
            if isinstance(layer, ConvLayer):
                kh, kw, in_c, out_c = layer.weights.shape
                fh.write(struct.pack("<6I", _TAG_CONV, kh, kw, in_c, out_c, layer.stride))
                fh.write(layer.weights.astype("<f4").tobytes())
            elif isinstance(layer, ReluLayer):
                fh.write(struct.pack("<I", _TAG_RELU))
            elif isinstance(layer, MaxPoolLayer):
                fh.write(struct.pack("<3I", _TAG_MAXPOOL, layer.size, layer.stride))
            elif isinstance(layer, FlattenLayer):
                fh.write(struct.pack("<I", _TAG_FLATTEN))
            elif isinstance(layer, DenseLayer):
                n_in, n_out = layer.weights.shape
                fh.write(struct.pack("<3I", _TAG_DENSE, n_in, n_out))
                fh.write(layer.weights.astype("<f4").tobytes())
            elif isinstance(layer, SoftmaxLayer):
                fh.write(struct.pack("<I", _TAG_SOFTMAX))
            else:
                raise ShapeMismatchError(f"cannot serialize layer {layer!r}")


def _read_array(fh, shape, path):
    count = int(np.prod(shape))
    payload = fh.read(4 * count)
    if len(payload) != 4 * count:
        raise BadHeaderError(f"{path}: truncated weight payload")
    return np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(shape)


def load_bundle(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != BUNDLE_MAGIC:
            raise BadHeaderError(f"{path}: bad magic {magic!r}")
        version, count = struct.unpack("<2I", fh.read(8))
        if version != BUNDLE_VERSION:
            raise BadHeaderError(f"{path}: unsupported version {version}")
        layers = []
        for _ in range(count):
            (tag,) = struct.unpack("<I", fh.read(4))
            if tag == _TAG_CONV:
                kh, kw, in_c, out_c, stride = struct.unpack("<5I", fh.read(20))
                layers.append(
                    ConvLayer(_read_array(fh, (kh, kw, in_c, out_c), path), stride)
                )
            elif tag == _TAG_RELU:
                layers.append(ReluLayer())
            elif tag == _TAG_MAXPOOL:
                size, stride = struct.unpack("<2I", fh.read(8))
                layers.append(MaxPoolLayer(size, stride))
            elif tag == _TAG_FLATTEN:
                layers.append(FlattenLayer())
            elif tag == _TAG_DENSE:
                n_in, n_out = struct.unpack("<2I", fh.read(8))
                layers.append(DenseLayer(_read_array(fh, (n_in, n_out), path)))
            elif tag == _TAG_SOFTMAX:
                layers.append(SoftmaxLayer())
            else:
                raise BadHeaderError(f"{path}: unknown layer tag {tag}")
    return WeightBundle(layers=tuple(layers))


def bundle_from_manifest(manifest_path):
    """Build a bundle from a JSON manifest plus raw f32 little-endian arrays.

    Manifest schema: {"layers": [...]} where each entry has a "kind" and
    kind-specific fields; conv/dense entries name a sibling "weights" file
    and a "shape" list.  This is the converter contract for external
    training tools.
    """
    manifest_path = Path(manifest_path)
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    layers = []
    for entry in manifest["layers"]:
        kind = entry["kind"]
        if kind == "conv":
            shape = tuple(entry["shape"])
            raw = (manifest_path.parent / entry["weights"]).read_bytes()
            weights = np.frombuffer(raw, dtype="<f4").astype(np.float64)
            layers.append(
                ConvLayer(weights.reshape(shape), stride=int(entry.get("stride", 1)))
            )
        elif kind == "relu":
            layers.append(ReluLayer())
        elif kind == "maxpool":
            layers.append(MaxPoolLayer(int(entry["size"]), int(entry["stride"])))
        elif kind == "flatten":
            layers.append(FlattenLayer())
        elif kind == "dense":
            shape = tuple(entry["shape"])
            raw = (manifest_path.parent / entry["weights"]).read_bytes()
            weights = np.frombuffer(raw, dtype="<f4").astype(np.float64)
            layers.append(DenseLayer(weights.reshape(shape)))
        elif kind == "softmax":
            layers.append(SoftmaxLayer())
        else:
            raise BadHeaderError(f"unknown manifest layer kind {kind!r}")
    return WeightBundle(layers=tuple(layers))
