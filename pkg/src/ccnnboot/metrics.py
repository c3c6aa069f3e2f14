"""Evaluation metrics and the empirical bootstrap-consistency harness.

The headline score is the average log-likelihood of the observations:
(1/B) sum_b sum_i log pp[b, i, y_i].  It sums over test samples and averages
over bootstraps, so values scale with test-set size; larger (closer to 0)
is better.

The consistency harness compares two empirical CDFs of prediction
deviations: the Monte-Carlo sampling distribution (many independent
datasets, each fit to convergence, measured against a large-sample
reference fit) and the bootstrap distribution (replicate fits on one
dataset, measured against that dataset's fit).  Their sup-distance should
shrink as the sample size grows.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace

import numpy as np

from . import data_io, trainer
from .errors import InsufficientRunsError, SizeMismatchError
from .patching import PatchSet

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class EvalSummary:
    avg_log_likelihood: float
    avg_interval_length: float
    se_log_likelihood: float
    se_interval_length: float

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(
                {
                    "avgLogLikelihood": self.avg_log_likelihood,
                    "avgIntervalLength": self.avg_interval_length,
                    "seLogLikelihood": self.se_log_likelihood,
                    "seIntervalLength": self.se_interval_length,
                },
                fh,
                indent=2,
            )
            fh.write("\n")

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            raw = json.load(fh)
        return cls(
            avg_log_likelihood=raw["avgLogLikelihood"],
            avg_interval_length=raw["avgIntervalLength"],
            se_log_likelihood=raw["seLogLikelihood"],
            se_interval_length=raw["seIntervalLength"],
        )


def avg_log_likelihood(cube, labels):
    """(1/B) sum_b sum_i log pp[b, i, y_i], probabilities floored at 1e-12."""
    if cube.num_samples != len(labels):
        raise SizeMismatchError(
            f"cube has {cube.num_samples} samples, got {len(labels)} labels"
        )
    picked = cube.probs[:, np.arange(cube.num_samples), labels]
    return float(np.log(np.maximum(picked, PROB_FLOOR)).sum() / cube.num_bootstraps)


def per_bootstrap_log_likelihood(cube, labels):
    """sum_i log pp[b, i, y_i] for each bootstrap b."""
    if cube.num_samples != len(labels):
        raise SizeMismatchError("cube/label size mismatch")
    picked = cube.probs[:, np.arange(cube.num_samples), labels]
    return np.log(np.maximum(picked, PROB_FLOOR)).sum(axis=1)


def avg_interval_length(table):
    """Mean of (upper - lower) over every (sample, class) pair."""
    return float(table.widths().mean())


def standard_error(values):
    """Sample standard deviation over sqrt(count)."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2:
        raise InsufficientRunsError("standard error needs at least 2 values")
    return float(values.std(ddof=1) / np.sqrt(len(values)))


def summarize(cube, table, labels):
    """EvalSummary for one run.

    Standard errors are taken across bootstraps (log-likelihood) and across
    per-sample mean widths (interval length).
    """
    return EvalSummary(
        avg_log_likelihood=avg_log_likelihood(cube, labels),
        avg_interval_length=avg_interval_length(table),
        se_log_likelihood=standard_error(per_bootstrap_log_likelihood(cube, labels)),
        se_interval_length=standard_error(table.widths().mean(axis=1)),
    )


def ks_distance(a, b):
    """Two-sample Kolmogorov-Smirnov statistic sup_z |F_a(z) - F_b(z)|."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / len(a)
    fb = np.searchsorted(b, grid, side="right") / len(b)
    return float(np.abs(fa - fb).max())


@dataclass(frozen=True)
class ConsistencyRow:
    n: int
    ks: float
    seed: int


def _as_patches(data):
    """Synthetic vector datasets become single-patch sets."""
    n = len(data)
    dim = int(np.prod(data.sample_shape))
    return PatchSet(
        patches=data.inputs.reshape(n, 1, dim),
        labels=data.labels,
        num_classes=data.num_classes,
    )


def _derived_seed(*parts):
    ss = np.random.SeedSequence(entropy=tuple(int(p) for p in parts))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _probe_value(params, probe):
    """Scalar prediction at the probe point: class-1 minus class-0 logit."""
    blocks = params.class_blocks()  # (q, 2, 1)
    return float(probe @ (blocks[:, 1, 0] - blocks[:, 0, 0]))


def _fit_value(data, cfg, probe, fit_seed, init=None):
    pset = _as_patches(data)
    result = trainer.fit(pset, replace(cfg, seed=fit_seed), init=init)
    return result, _probe_value(result.params, probe)


def consistency_check(
    spec,
    n_grid,
    mc_reps,
    num_bootstraps,
    cfg,
    probe,
    seed=0,
    ref_factor=50,
    ref_repeats=1,
):
    """Per-n KS distances between sampling and bootstrap deviation CDFs.

    The population-optimal prediction is proxied by averaging the probe
    values of ``ref_repeats`` independent fits, each on a dataset of size
    ref_factor * max(n_grid); averaging cuts the reference error by
    sqrt(ref_repeats) without fitting one enormous dataset.  (That error
    shifts the sampling CDF as a whole, so it must be small relative to the
    deviation spread at the largest n.)  Bootstrap replicates are
    warm-started from the previous replicate, mirroring the interval
    procedure.
    """
    probe = np.asarray(probe, dtype=np.float64)
    n_ref = ref_factor * max(n_grid)
    ref_values = []
    for rep in range(ref_repeats):
        ref_data = data_io.generate_synthetic(
            replace(spec, seed=_derived_seed(seed, 0, rep)), n_ref
        )
        _, value = _fit_value(ref_data, cfg, probe, _derived_seed(seed, 1, rep))
        ref_values.append(value)
    f_ref = float(np.mean(ref_values))
    rows = []
    for n in n_grid:
        mc_values = np.empty(mc_reps)
        for rep in range(mc_reps):
            data = data_io.generate_synthetic(
                replace(spec, seed=_derived_seed(seed, 2, n, rep)), n
            )
            _, value = _fit_value(data, cfg, probe, _derived_seed(seed, 3, n, rep))
            mc_values[rep] = value - f_ref
        base_data = data_io.generate_synthetic(
            replace(spec, seed=_derived_seed(seed, 4, n)), n
        )
        base_result, f_hat = _fit_value(
            base_data, cfg, probe, _derived_seed(seed, 5, n)
        )
        boot_values = np.empty(num_bootstraps)
        previous = base_result.params
        base_pset = _as_patches(base_data)
        for b in range(num_bootstraps):
            idx = data_io.resample_indices(n, n, _derived_seed(seed, 6, n, b))
            result = trainer.fit(
                base_pset.subset(idx),
                replace(cfg, seed=_derived_seed(seed, 7, n, b)),
                init=previous,
            )
            boot_values[b] = _probe_value(result.params, probe) - f_hat
            previous = result.params
        rows.append(ConsistencyRow(n=n, ks=ks_distance(mc_values, boot_values), seed=seed))
    return rows


def write_consistency_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "ksDistance", "seed"])
        for row in rows:
            writer.writerow([row.n, repr(row.ks), row.seed])
