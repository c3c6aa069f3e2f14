"""Warm-start bootstrap chain and percentile prediction intervals.

The chain fits a base model, then for each replicate resamples the training
set with replacement and refits starting from the previous replicate's
coefficients (``warm-chain``) or from the base fit (``parallel-from-base``).
Test-set softmax probabilities from every replicate form the prediction
cube; per-(sample, class) percentile intervals come from its bootstrap axis.

Quantiles use linear interpolation between order statistics (numpy's
``linear`` rule): at probability t the value is taken at fractional rank
(B - 1) * t of the sorted replicate values.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import model, trainer
from .data_io import resample_indices
from .errors import (
    BadAlphaError,
    BadHeaderError,
    CcnnBootError,
    ShapeMismatchError,
    SizeMismatchError,
)

CUBE_MAGIC = b"CCNP"

MODE_WARM_CHAIN = "warm-chain"
MODE_PARALLEL = "parallel-from-base"


@dataclass(frozen=True)
class BootstrapConfig:
    num_bootstraps: int
    alpha: float
    trainer: trainer.TrainerConfig
    seed: int
    chain_mode: str = MODE_WARM_CHAIN
    # Optional separate config for the base fit; replicates often need far
    # fewer epochs than the cold base fit thanks to warm starts.
    base_trainer: trainer.TrainerConfig | None = None

    def __post_init__(self):
        if self.num_bootstraps < 2:
            raise ShapeMismatchError("need at least 2 bootstraps")
        if not 0 < self.alpha < 1:
            raise BadAlphaError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.chain_mode not in (MODE_WARM_CHAIN, MODE_PARALLEL):
            raise ShapeMismatchError(f"unknown chain mode {self.chain_mode!r}")


@dataclass(frozen=True)
class PredictionCube:
    """Probabilities (num_bootstraps, num_test, num_classes)."""

    probs: np.ndarray

    def __post_init__(self):
        if self.probs.ndim != 3:
            raise ShapeMismatchError("cube must be 3-D (B, n', d2)")

    @property
    def num_bootstraps(self):
        return self.probs.shape[0]

    @property
    def num_samples(self):
        return self.probs.shape[1]

    @property
    def num_classes(self):
        return self.probs.shape[2]

    def mean_probs(self):
        return self.probs.mean(axis=0)


@dataclass(frozen=True)
class IntervalTable:
    lower: np.ndarray  # (n', d2)
    upper: np.ndarray
    level: float  # 1 - alpha

    def __post_init__(self):
        if self.lower.shape != self.upper.shape:
            raise ShapeMismatchError("lower/upper shape mismatch")

    def widths(self):
        return self.upper - self.lower


def _replicate_seeds(seed, b):
    """Independent (resample, trainer) seeds for replicate b, order-free."""
    ss = np.random.SeedSequence(entropy=(int(seed), int(b)))
    resample_seed, trainer_seed = ss.generate_state(2, dtype=np.uint64)
    return int(resample_seed), int(trainer_seed)


def run_bootstrap(train_set, test_set, cfg):
    """Algorithm: base fit, then B resample-and-refit replicates.

    Returns the prediction cube and the coefficient digests of every
    replicate (base digest first).
    """
    if train_set.feature_dim != test_set.feature_dim or (
        train_set.patch_count != test_set.patch_count
    ):
        raise ShapeMismatchError("train/test patch shapes differ")
    n = len(train_set)
    base_cfg = cfg.base_trainer if cfg.base_trainer is not None else cfg.trainer
    base = trainer.fit(train_set, base_cfg)
    digests = [base.params.digest()]
    cube = np.empty(
        (cfg.num_bootstraps, len(test_set), train_set.num_classes)
    )
    previous = base.params
    for b in range(1, cfg.num_bootstraps + 1):
        resample_seed, trainer_seed = _replicate_seeds(cfg.seed, b)
        idx = resample_indices(n, n, resample_seed)
        replicate_data = train_set.subset(idx)
        init = previous if cfg.chain_mode == MODE_WARM_CHAIN else base.params
        replicate_cfg = replace(cfg.trainer, seed=trainer_seed)
        try:
            result = trainer.fit(replicate_data, replicate_cfg, init=init)
        except CcnnBootError as exc:
            raise type(exc)(f"bootstrap replicate {b}: {exc}") from exc
        cube[b - 1] = model.softmax_probs(
            model.score_batch(result.params, test_set.patches)
        )
        digests.append(result.params.digest())
        previous = result.params
    return PredictionCube(probs=cube), digests


def intervals(cube, alpha):
    """Percentile interval per (sample, class): quantiles alpha/2, 1 - alpha/2."""
    if not 0 < alpha < 1:
        raise BadAlphaError(f"alpha must lie in (0, 1), got {alpha}")
    if cube.num_bootstraps < 2:
        raise ShapeMismatchError("need at least 2 bootstraps for intervals")
    lower = np.quantile(cube.probs, alpha / 2.0, axis=0, method="linear")
    upper = np.quantile(cube.probs, 1.0 - alpha / 2.0, axis=0, method="linear")
    return IntervalTable(lower=lower, upper=upper, level=1.0 - alpha)


@dataclass(frozen=True)
class IntervalRecord:
    sample_index: int
    true_label: int
    predicted_class: int
    lower: np.ndarray  # per class
    upper: np.ndarray
    width: np.ndarray

    @property
    def true_class_interval(self):
        return (self.lower[self.true_label], self.upper[self.true_label])


def interval_report(cube, table, labels):
    """Per-sample records: argmax-of-mean prediction plus per-class intervals."""
    if cube.num_samples != len(labels) or table.lower.shape[0] != len(labels):
        raise SizeMismatchError(
            f"cube has {cube.num_samples} samples, table "
            f"{table.lower.shape[0]}, labels {len(labels)}"
        )
    predicted = cube.mean_probs().argmax(axis=1)
    records = []
    for i, label in enumerate(labels):
        records.append(
            IntervalRecord(
                sample_index=i,
                true_label=int(label),
                predicted_class=int(predicted[i]),
                lower=table.lower[i].copy(),
                upper=table.upper[i].copy(),
                width=(table.upper[i] - table.lower[i]).copy(),
            )
        )
    return records


def write_report_csv(records, path, alpha):
    """Interval report CSV, one row per (sample, class)."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# alpha={alpha!r}\n")
        writer = csv.writer(fh)
        writer.writerow(
            ["sampleIndex", "trueLabel", "predictedClass", "class", "lower", "upper", "width"]
        )
        for rec in records:
            for k in range(len(rec.lower)):
                writer.writerow(
                    [
                        rec.sample_index,
                        rec.true_label,
                        rec.predicted_class,
                        k,
                        repr(float(rec.lower[k])),
                        repr(float(rec.upper[k])),
                        repr(float(rec.width[k])),
                    ]
                )


def read_report_csv(path):
    """Parse a report CSV back into (alpha, records)."""
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# alpha="):
            raise BadHeaderError(f"{path}: missing alpha header line")
        alpha = float(first.split("=", 1)[1])
        reader = csv.DictReader(fh)
        rows = list(reader)
    by_sample = {}
    for row in rows:
        by_sample.setdefault(int(row["sampleIndex"]), []).append(row)
    records = []
    for i in sorted(by_sample):
        rows_i = sorted(by_sample[i], key=lambda r: int(r["class"]))
        records.append(
            IntervalRecord(
                sample_index=i,
                true_label=int(rows_i[0]["trueLabel"]),
                predicted_class=int(rows_i[0]["predictedClass"]),
                lower=np.array([float(r["lower"]) for r in rows_i]),
                upper=np.array([float(r["upper"]) for r in rows_i]),
                width=np.array([float(r["width"]) for r in rows_i]),
            )
        )
    return alpha, records


def save_cube(cube, path):
    """Persist: magic CCNP, dims (B, n', d2) as u32, f32 LE payload."""
    b, n, d2 = cube.probs.shape
    with open(path, "wb") as fh:
        fh.write(CUBE_MAGIC)
        fh.write(struct.pack("<3I", b, n, d2))
        fh.write(cube.probs.astype("<f4").tobytes())


def load_cube(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CUBE_MAGIC:
            raise BadHeaderError(f"{path}: bad magic {magic!r}")
        b, n, d2 = struct.unpack("<3I", fh.read(12))
        payload = fh.read(4 * b * n * d2)
        if len(payload) != 4 * b * n * d2:
            raise BadHeaderError(f"{path}: truncated payload")
    probs = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return PredictionCube(probs=probs.reshape(b, n, d2))


def export_histograms(cube, out_dir, sample_indices=None):
    """One CSV of B probabilities per (sample, class), for histogram plots."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if sample_indices is None:
        sample_indices = range(cube.num_samples)
    paths = []
    for i in sample_indices:
        for k in range(cube.num_classes):
            path = out / f"hist_sample{i:04d}_class{k}.csv"
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["probability"])
                for value in cube.probs[:, i, k]:
                    writer.writerow([repr(float(value))])
            paths.append(path)
    return paths
