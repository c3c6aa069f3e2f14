"""Mini-batch gradient descent for the convex training problem.

Two modes:

* ``constrained``: projected SGD on the data term under a nuclear-norm ball
  of radius ``radius`` (each step projects back onto the ball);
* ``penalized``: plain SGD on data term + penalty * smoothed nuclear norm
  (the smoothing makes the objective differentiable, so no prox is needed).

Batches are sequential slices of a seed-shuffled permutation per epoch, so a
fit is a pure function of (data, config, init).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import model, spectral
from .errors import NonFiniteObjectiveError, ShapeMismatchError

MODE_CONSTRAINED = "constrained"
MODE_PENALIZED = "penalized"

# Abort when the objective exceeds this multiple of its initial value.
DIVERGENCE_FACTOR = 10.0


@dataclass(frozen=True)
class TrainerConfig:
    mode: str
    step_size: float
    batch_size: int
    epochs: int
    seed: int
    radius: float | None = None  # constrained mode: nuclear-ball radius
    penalty: float | None = None  # penalized mode: regularization weight
    smoothing: float | None = None  # penalized mode: smoothing parameter
    step_decay: float = 1.0  # geometric per-epoch decay in (0, 1]

    def __post_init__(self):
        if self.mode not in (MODE_CONSTRAINED, MODE_PENALIZED):
            raise ShapeMismatchError(f"unknown trainer mode {self.mode!r}")
        if self.mode == MODE_CONSTRAINED and (self.radius is None or self.radius <= 0):
            raise ShapeMismatchError("constrained mode requires a positive radius")
        if self.mode == MODE_PENALIZED and (
            self.penalty is None
            or self.penalty <= 0
            or self.smoothing is None
            or self.smoothing <= 0
        ):
            raise ShapeMismatchError(
                "penalized mode requires positive penalty and smoothing"
            )
        if self.step_size <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ShapeMismatchError("invalid step size, batch size, or epochs")
        if not 0 < self.step_decay <= 1:
            raise ShapeMismatchError("step_decay must lie in (0, 1]")


@dataclass(frozen=True)
class FitResult:
    params: model.CcnnParams
    final_objective: float
    objective_trace: list  # one entry per epoch, after the epoch's steps
    nuclear_norm_trace: list
    iterations: int  # total gradient steps taken


def objective(pset, cfg, params):
    """The exact quantity ``fit`` minimizes for this config."""
    value = model.mean_log_loss(params, pset.patches, pset.labels)
    if cfg.mode == MODE_PENALIZED:
        value += cfg.penalty * spectral.smoothed_nuclear_norm(
            params.coeffs, cfg.smoothing
        )
    return value


def fit(pset, cfg, init=None):
    """Run the configured number of epochs from ``init`` (default zero matrix)."""
    n, p, q = pset.patches.shape
    if init is None:
        params = model.zero_params(q, p, pset.num_classes)
    else:
        if init.coeffs.shape != (q, p * pset.num_classes):
            raise ShapeMismatchError(
                f"init shape {init.coeffs.shape}, data implies "
                f"({q}, {p * pset.num_classes})"
            )
        params = init
    a = params.coeffs.copy()
    initial = objective(pset, cfg, params)
    trace = []
    norms = []
    rng = np.random.default_rng(cfg.seed)
    eta = cfg.step_size
    steps = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            current = model.CcnnParams(a, p, pset.num_classes)
            grad = model.data_gradient(current, pset.patches[idx], pset.labels[idx])
            if cfg.mode == MODE_CONSTRAINED:
                a = spectral.project_nuclear_ball(a - eta * grad, cfg.radius)
            else:
                grad = grad + cfg.penalty * spectral.smoothed_nuclear_norm_grad(
                    a, cfg.smoothing
                )
                a = a - eta * grad
            steps += 1
        current = model.CcnnParams(a, p, pset.num_classes)
        value = objective(pset, cfg, current)
        if not np.isfinite(value) or value > DIVERGENCE_FACTOR * max(initial, 1e-12):
            raise NonFiniteObjectiveError(
                f"objective diverged at epoch {epoch} (value {value})"
            )
        trace.append(value)
        norms.append(spectral.nuclear_norm(a))
        eta *= cfg.step_decay
    final = trace[-1] if trace else initial
    return FitResult(
        params=model.CcnnParams(a, p, pset.num_classes),
        final_objective=final,
        objective_trace=trace,
        nuclear_norm_trace=norms,
        iterations=steps,
    )


@dataclass(frozen=True)
class WarmColdReport:
    cold: FitResult
    warm: FitResult
    objective_gap: float
    param_distance: float


def warm_vs_cold_check(pset, cfg, init_scale=0.1, init_seed=1):
    """Fit from zero and from a random init; report agreement.

    Convexity means both runs should reach the same objective value; the
    report exposes the gap so callers can assert on it.
    """
    cold = fit(pset, cfg, init=None)
    n, p, q = pset.patches.shape
    rng = np.random.default_rng(init_seed)
    a0 = init_scale * rng.standard_normal((q, p * pset.num_classes))
    if cfg.mode == MODE_CONSTRAINED:
        a0 = spectral.project_nuclear_ball(a0, cfg.radius)
    warm = fit(pset, cfg, init=model.CcnnParams(a0, p, pset.num_classes))
    return WarmColdReport(
        cold=cold,
        warm=warm,
        objective_gap=abs(cold.final_objective - warm.final_objective),
        param_distance=float(
            np.linalg.norm(cold.params.coeffs - warm.params.coeffs)
        ),
    )


def export_trace_csv(result, path):
    """Write the per-epoch objective and nuclear norm as CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "objective", "nuclearNorm"])
        for epoch, (obj, nn) in enumerate(
            zip(result.objective_trace, result.nuclear_norm_trace)
        ):
            writer.writerow([epoch, repr(obj), repr(nn)])
