import csv
import math

import numpy as np
import pytest
from scipy import optimize

from ccnnboot import model, spectral, trainer
from ccnnboot.errors import NonFiniteObjectiveError, ShapeMismatchError
from conftest import make_patchset


def penalized_cfg(**kwargs):
    defaults = dict(
        mode=trainer.MODE_PENALIZED,
        step_size=0.3,
        batch_size=1000,
        epochs=200,
        seed=0,
        penalty=0.1,
        smoothing=0.1,
    )
    defaults.update(kwargs)
    return trainer.TrainerConfig(**defaults)


def constrained_cfg(**kwargs):
    defaults = dict(
        mode=trainer.MODE_CONSTRAINED,
        step_size=0.3,
        batch_size=1000,
        epochs=100,
        seed=0,
        radius=2.0,
    )
    defaults.update(kwargs)
    return trainer.TrainerConfig(**defaults)


class TestObjective:
    def test_zero_params_is_log_num_classes(self):
        pset = make_patchset(n=30, d2=3)
        params = model.zero_params(pset.feature_dim, pset.patch_count, 3)
        assert trainer.objective(pset, penalized_cfg(), params) == pytest.approx(
            math.log(3.0)
        )

    def test_constrained_mode_is_pure_data_term(self, rng):
        pset = make_patchset(n=20)
        params = model.CcnnParams(
            rng.standard_normal((pset.feature_dim, pset.patch_count * 2)),
            pset.patch_count,
            2,
        )
        expected = model.mean_log_loss(params, pset.patches, pset.labels)
        assert trainer.objective(pset, constrained_cfg(), params) == pytest.approx(expected)

    def test_matches_naive_per_sample_loop(self, rng):
        pset = make_patchset(n=15, p=2, q=3, d2=2)
        cfg = penalized_cfg(penalty=0.07, smoothing=0.2)
        params = model.CcnnParams(
            rng.standard_normal((3, 4)), 2, 2
        )
        total = 0.0
        for i in range(len(pset)):
            total += model.log_loss(
                model.score(params, pset.patches[i]), int(pset.labels[i])
            )
        expected = total / len(pset) + 0.07 * spectral.smoothed_nuclear_norm(
            params.coeffs, 0.2
        )
        assert trainer.objective(pset, cfg, params) == pytest.approx(expected, abs=1e-10)


class TestFit:
    def test_zero_epochs_returns_init(self, rng):
        pset = make_patchset()
        init = model.CcnnParams(
            rng.standard_normal((pset.feature_dim, pset.patch_count * 2)),
            pset.patch_count,
            2,
        )
        result = trainer.fit(pset, penalized_cfg(epochs=0), init=init)
        np.testing.assert_array_equal(result.params.coeffs, init.coeffs)
        assert result.iterations == 0

    def test_constrained_iterates_always_feasible(self):
        pset = make_patchset(n=60, q=5)
        cfg = constrained_cfg(radius=1.5, epochs=20, batch_size=10)
        result = trainer.fit(pset, cfg)
        assert spectral.nuclear_norm(result.params.coeffs) <= 1.5 * (1 + 1e-9)

    def test_penalized_matches_independent_solver(self):
        # independent oracle: scipy BFGS on an independently coded objective
        pset = make_patchset(n=200, p=1, q=5, d2=2, seed=3)
        lam, mu = 0.1, 0.1
        x = pset.patches[:, 0, :]
        y = pset.labels

        def oracle_objective(flat):
            a = flat.reshape(5, 2)
            logits = x @ a
            shifted = logits - logits.max(axis=1, keepdims=True)
            logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
            data = -logp[np.arange(len(y)), y].mean()
            s = np.linalg.svd(a, compute_uv=False)
            huber = np.where(s <= mu, s**2 / (2 * mu), s - mu / 2).sum()
            return data + lam * huber

        best = optimize.minimize(
            oracle_objective, np.zeros(10), method="BFGS", options={"gtol": 1e-10}
        ).fun
        cfg = penalized_cfg(penalty=lam, smoothing=mu, epochs=600, step_size=0.5)
        result = trainer.fit(pset, cfg)
        assert abs(result.final_objective - best) < 1e-3

    def test_determinism_bit_identical(self):
        pset = make_patchset(n=50)
        cfg = penalized_cfg(epochs=15, batch_size=8)
        a = trainer.fit(pset, cfg)
        b = trainer.fit(pset, cfg)
        np.testing.assert_array_equal(a.params.coeffs, b.params.coeffs)
        assert a.objective_trace == b.objective_trace

    def test_full_batch_trace_monotone(self):
        pset = make_patchset(n=80, q=6)
        cfg = penalized_cfg(epochs=60, step_size=0.1)
        result = trainer.fit(pset, cfg)
        diffs = np.diff(result.objective_trace)
        assert (diffs <= 1e-10).all()

    def test_divergence_guard_names_epoch(self):
        pset = make_patchset(n=30)
        cfg = penalized_cfg(step_size=500.0, epochs=50)
        with pytest.raises(NonFiniteObjectiveError, match="epoch"):
            trainer.fit(pset, cfg)

    def test_init_shape_mismatch(self):
        pset = make_patchset()
        bad = model.zero_params(pset.feature_dim + 1, pset.patch_count, 2)
        with pytest.raises(ShapeMismatchError):
            trainer.fit(pset, penalized_cfg(), init=bad)

    def test_single_separable_sample_drives_loss_to_zero(self):
        pset = make_patchset(n=1, q=3, seed=5)
        cfg = constrained_cfg(radius=50.0, epochs=400, step_size=1.0)
        result = trainer.fit(pset, cfg)
        assert result.final_objective < 1e-3


class TestWarmVsCold:
    def test_objective_gap_small_on_convex_instance(self):
        pset = make_patchset(n=100, q=5, seed=2)
        cfg = penalized_cfg(epochs=500, step_size=0.5)
        report = trainer.warm_vs_cold_check(pset, cfg)
        assert report.objective_gap <= 1e-4

    def test_identical_runs_bit_identical(self):
        pset = make_patchset(n=40)
        cfg = penalized_cfg(epochs=10)
        a = trainer.warm_vs_cold_check(pset, cfg, init_seed=7)
        b = trainer.warm_vs_cold_check(pset, cfg, init_seed=7)
        np.testing.assert_array_equal(a.warm.params.coeffs, b.warm.params.coeffs)
        assert a.objective_gap == b.objective_gap


class TestTraceExport:
    def test_csv_round_trip(self, tmp_path):
        pset = make_patchset(n=30)
        result = trainer.fit(pset, penalized_cfg(epochs=5))
        path = tmp_path / "trace.csv"
        trainer.export_trace_csv(result, path)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 5
        assert [float(r["objective"]) for r in rows] == result.objective_trace
        assert [float(r["nuclearNorm"]) for r in rows] == result.nuclear_norm_trace
