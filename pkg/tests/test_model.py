import math

import numpy as np
import pytest

from ccnnboot import model
from ccnnboot.errors import BadLabelError, EmptyBatchError, ShapeMismatchError


def naive_score(params, patches):
    """Triple-loop oracle over (class, patch, feature)."""
    q, _ = params.coeffs.shape
    out = np.zeros(params.num_classes)
    for k in range(params.num_classes):
        for p in range(params.patch_count):
            col = params.coeffs[:, k * params.patch_count + p]
            for j in range(q):
                out[k] += col[j] * patches[p, j]
    return out


class TestScore:
    def test_zero_coefficients(self):
        params = model.zero_params(3, 2, 4)
        np.testing.assert_array_equal(
            model.score(params, np.ones((2, 3))), np.zeros(4)
        )

    def test_single_inner_product(self):
        params = model.CcnnParams(
            coeffs=np.array([[1.0], [2.0]]), patch_count=1, num_classes=1
        )
        assert model.score(params, np.array([[1.0, 2.0]]))[0] == pytest.approx(5.0)

    def test_matches_naive_oracle(self, rng):
        q, p, d2 = 6, 4, 3
        params = model.CcnnParams(
            coeffs=rng.standard_normal((q, p * d2)), patch_count=p, num_classes=d2
        )
        patches = rng.standard_normal((p, q))
        np.testing.assert_allclose(
            model.score(params, patches), naive_score(params, patches), atol=1e-12
        )

    def test_linearity_in_coefficients(self, rng):
        q, p, d2 = 4, 3, 2
        a = rng.standard_normal((q, p * d2))
        b = rng.standard_normal((q, p * d2))
        patches = rng.standard_normal((p, q))
        alpha, beta = 1.7, -0.3
        combined = model.CcnnParams(alpha * a + beta * b, p, d2)
        separate = alpha * model.score(
            model.CcnnParams(a, p, d2), patches
        ) + beta * model.score(model.CcnnParams(b, p, d2), patches)
        np.testing.assert_allclose(
            model.score(combined, patches), separate, atol=1e-12
        )

    def test_shape_mismatch(self):
        params = model.zero_params(3, 2, 2)
        with pytest.raises(ShapeMismatchError):
            model.score(params, np.ones((2, 4)))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(
            model.softmax_probs(np.zeros(10)), np.full(10, 0.1), atol=1e-12
        )

    def test_closed_form(self):
        np.testing.assert_allclose(
            model.softmax_probs(np.array([math.log(3.0), 0.0])), [0.75, 0.25]
        )

    def test_no_overflow(self):
        probs = model.softmax_probs(np.array([1000.0, 0.0]))
        assert np.isfinite(probs).all()
        np.testing.assert_allclose(probs, [1.0, 0.0], atol=1e-300)

    def test_rows_sum_to_one(self, rng):
        probs = model.softmax_probs(rng.standard_normal((7, 5)) * 10)
        np.testing.assert_allclose(probs.sum(axis=1), np.ones(7), atol=1e-12)


class TestLogLoss:
    def test_equal_logits(self):
        assert model.log_loss(np.zeros(2), 0) == pytest.approx(math.log(2.0))
        assert model.log_loss(np.zeros(5), 3) == pytest.approx(math.log(5.0))

    def test_binary_reproduces_logistic_log_loss(self):
        # logits (0, f) make class 1 the sigmoid(f) class
        for f in (-2.0, -1.0, 0.0, 1.0, 2.0):
            p = 1.0 / (1.0 + math.exp(-f))
            assert model.log_loss(np.array([0.0, f]), 1) == pytest.approx(
                -math.log(p), abs=1e-12
            )
            assert model.log_loss(np.array([0.0, f]), 0) == pytest.approx(
                -math.log(1.0 - p), abs=1e-12
            )

    def test_saturation(self):
        logits = np.zeros(4)
        logits[2] = 50.0
        assert model.log_loss(logits, 2) < 1e-20

    def test_nonnegative(self, rng):
        for _ in range(50):
            logits = rng.standard_normal(4) * 5
            assert model.log_loss(logits, int(rng.integers(0, 4))) >= 0.0

    def test_bad_label(self):
        with pytest.raises(BadLabelError):
            model.log_loss(np.zeros(3), 3)


class TestDataGradient:
    def test_uniform_softmax_single_sample(self, rng):
        q, p = 3, 2
        params = model.zero_params(q, p, 2)
        patches = rng.standard_normal((1, p, q))
        grad = model.data_gradient(params, patches, np.array([0]))
        blocks = grad.reshape(q, 2, p)
        for pp in range(p):
            np.testing.assert_allclose(
                blocks[:, 0, pp], -0.5 * patches[0, pp], atol=1e-12
            )
            np.testing.assert_allclose(
                blocks[:, 1, pp], 0.5 * patches[0, pp], atol=1e-12
            )

    def test_finite_differences(self, rng):
        q, p, d2, n = 4, 3, 3, 6
        params = model.CcnnParams(
            coeffs=rng.standard_normal((q, p * d2)) * 0.3, patch_count=p, num_classes=d2
        )
        patches = rng.standard_normal((n, p, q))
        labels = rng.integers(0, d2, size=n)
        grad = model.data_gradient(params, patches, labels)
        h = 1e-6
        for _ in range(100):
            d = rng.standard_normal((q, p * d2))
            d /= np.linalg.norm(d)
            plus = model.mean_log_loss(
                model.CcnnParams(params.coeffs + h * d, p, d2), patches, labels
            )
            minus = model.mean_log_loss(
                model.CcnnParams(params.coeffs - h * d, p, d2), patches, labels
            )
            numeric = (plus - minus) / (2 * h)
            analytic = np.sum(grad * d)
            assert abs(analytic - numeric) <= 1e-5 * max(1.0, abs(numeric))

    def test_duplicated_sample_matches_single(self, rng):
        q, p, d2 = 3, 2, 2
        params = model.CcnnParams(
            coeffs=rng.standard_normal((q, p * d2)), patch_count=p, num_classes=d2
        )
        patches = rng.standard_normal((1, p, q))
        labels = np.array([1])
        single = model.data_gradient(params, patches, labels)
        double = model.data_gradient(
            params, np.repeat(patches, 2, axis=0), np.array([1, 1])
        )
        np.testing.assert_allclose(single, double, atol=1e-12)

    def test_class_columns_sum_to_zero(self, rng):
        q, p, d2, n = 4, 3, 4, 5
        params = model.CcnnParams(
            coeffs=rng.standard_normal((q, p * d2)), patch_count=p, num_classes=d2
        )
        patches = rng.standard_normal((n, p, q))
        labels = rng.integers(0, d2, size=n)
        grad = model.data_gradient(params, patches, labels).reshape(q, d2, p)
        np.testing.assert_allclose(grad.sum(axis=1), np.zeros((q, p)), atol=1e-12)

    def test_empty_batch(self):
        params = model.zero_params(2, 1, 2)
        with pytest.raises(EmptyBatchError):
            model.data_gradient(params, np.zeros((0, 1, 2)), np.zeros(0, dtype=int))


class TestSerialization:
    def test_round_trip(self, tmp_path, rng):
        params = model.CcnnParams(
            coeffs=rng.standard_normal((5, 12)), patch_count=4, num_classes=3
        )
        path = tmp_path / "params.ccna"
        model.save_params(params, path)
        back = model.load_params(path)
        np.testing.assert_array_equal(back.coeffs, params.coeffs)
        assert back.patch_count == 4
        assert back.num_classes == 3
        assert back.digest() == params.digest()

    def test_digest_distinguishes(self, rng):
        a = model.CcnnParams(rng.standard_normal((2, 2)), 1, 2)
        b = model.CcnnParams(a.coeffs + 1e-12, 1, 2)
        assert a.digest() != b.digest()
