import numpy as np
import pytest
from scipy import optimize

from ccnnboot import spectral
from ccnnboot.errors import (
    NonFiniteInputError,
    NonpositiveMuError,
    NonpositiveRadiusError,
)


def sup_smoothed_norm(a, mu, iters=4000):
    """Direct maximization of sup_{||Z||_2 <= 1} Tr(A^T Z) - mu/2 ||Z||_F^2.

    Projected gradient ascent; projection onto the spectral-norm unit ball
    clips singular values at 1.
    """
    z = np.zeros_like(a)
    step = 0.5 / (mu + 1.0)
    for _ in range(iters):
        z = z + step * (a - mu * z)
        u, s, vt = np.linalg.svd(z, full_matrices=False)
        z = (u * np.minimum(s, 1.0)) @ vt
    return np.sum(a * z) - mu / 2.0 * np.sum(z**2)


class TestNuclearNorm:
    def test_zero_matrix(self):
        assert spectral.nuclear_norm(np.zeros((3, 4))) == 0.0

    def test_diagonal(self):
        assert spectral.nuclear_norm(np.diag([3.0, 1.0])) == pytest.approx(4.0)

    def test_matches_eigendecomposition_oracle(self, rng):
        a = rng.standard_normal((5, 7))
        eigvals = np.linalg.eigvalsh(a.T @ a)
        expected = np.sqrt(np.abs(eigvals)).sum()
        assert spectral.nuclear_norm(a) == pytest.approx(expected, rel=1e-8)

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteInputError):
            spectral.nuclear_norm(np.array([[np.nan, 0.0]]))


class TestSmoothedNuclearNorm:
    def test_scalar_analytic(self):
        # sup over z in [-1, 1] of 5z - z^2 is attained at z=1, value 4
        assert spectral.smoothed_nuclear_norm(np.array([[5.0]]), 2.0) == pytest.approx(4.0)

    def test_zero_matrix(self):
        for mu in (0.1, 1.0, 7.0):
            assert spectral.smoothed_nuclear_norm(np.zeros((2, 3)), mu) == 0.0

    def test_matches_sup_definition(self, rng):
        a = rng.standard_normal((4, 4))
        mu = 0.5
        direct = sup_smoothed_norm(a, mu)
        assert spectral.smoothed_nuclear_norm(a, mu) == pytest.approx(direct, abs=1e-6)

    def test_nonpositive_mu(self):
        with pytest.raises(NonpositiveMuError):
            spectral.smoothed_nuclear_norm(np.eye(2), 0.0)

    def test_gap_bound_and_monotone_convergence(self, rng):
        a = rng.standard_normal((6, 4))
        plain = spectral.nuclear_norm(a)
        previous_gap = np.inf
        for mu in (1.0, 0.1, 0.01):
            smoothed = spectral.smoothed_nuclear_norm(a, mu)
            gap = plain - smoothed
            assert 0.0 <= gap <= mu * min(a.shape) / 2.0 + 1e-12
            assert gap <= previous_gap + 1e-12
            previous_gap = gap

    def test_convexity(self, rng):
        for _ in range(20):
            a = rng.standard_normal((3, 5))
            b = rng.standard_normal((3, 5))
            t = rng.random()
            mixed = spectral.smoothed_nuclear_norm(t * a + (1 - t) * b, 0.3)
            bound = t * spectral.smoothed_nuclear_norm(a, 0.3) + (
                1 - t
            ) * spectral.smoothed_nuclear_norm(b, 0.3)
            assert mixed <= bound + 1e-9


class TestSmoothedNuclearNormGrad:
    def test_zero_matrix(self):
        np.testing.assert_array_equal(
            spectral.smoothed_nuclear_norm_grad(np.zeros((3, 2)), 1.0), np.zeros((3, 2))
        )

    def test_per_singular_value_rule(self):
        grad = spectral.smoothed_nuclear_norm_grad(np.diag([5.0, 0.5]), 1.0)
        np.testing.assert_allclose(grad, np.diag([1.0, 0.5]), atol=1e-12)

    def test_directional_finite_differences(self, rng):
        mu = 0.4
        h = 1e-6
        for _ in range(100):
            a = rng.standard_normal((6, 4))
            d = rng.standard_normal((6, 4))
            d /= np.linalg.norm(d)
            grad = spectral.smoothed_nuclear_norm_grad(a, mu)
            analytic = np.sum(grad * d)
            numeric = (
                spectral.smoothed_nuclear_norm(a + h * d, mu)
                - spectral.smoothed_nuclear_norm(a - h * d, mu)
            ) / (2 * h)
            assert abs(analytic - numeric) <= 1e-5 * max(1.0, abs(numeric))


class TestProjectNuclearBall:
    def test_feasible_point_unchanged(self, rng):
        a = rng.standard_normal((3, 3))
        a *= 0.5 / spectral.nuclear_norm(a)
        np.testing.assert_allclose(spectral.project_nuclear_ball(a, 1.0), a)

    def test_two_value_hand_projection(self):
        out = spectral.project_nuclear_ball(np.diag([3.0, 1.0]), 2.0)
        np.testing.assert_allclose(out, np.diag([2.0, 0.0]), atol=1e-12)

    def test_matches_qp_oracle_on_singular_values(self, rng):
        a = rng.standard_normal((5, 5))
        radius = 1.0
        u, sigma, vt = np.linalg.svd(a)
        # QP: min ||s - sigma||^2 s.t. s >= 0, sum(s) <= radius
        res = optimize.minimize(
            lambda s: np.sum((s - sigma) ** 2),
            x0=np.full(5, radius / 5),
            jac=lambda s: 2 * (s - sigma),
            bounds=[(0, None)] * 5,
            constraints=[{"type": "ineq", "fun": lambda s: radius - s.sum()}],
            method="SLSQP",
            options={"ftol": 1e-14, "maxiter": 500},
        )
        expected = (u * res.x) @ vt
        out = spectral.project_nuclear_ball(a, radius)
        assert np.linalg.norm(out - expected) <= 1e-6

    def test_feasibility_and_idempotence(self, rng):
        for _ in range(20):
            a = rng.standard_normal((4, 6)) * 3
            out = spectral.project_nuclear_ball(a, 2.0)
            assert spectral.nuclear_norm(out) <= 2.0 * (1 + 1e-9)
            np.testing.assert_allclose(
                spectral.project_nuclear_ball(out, 2.0), out, atol=1e-9
            )

    def test_nonpositive_radius(self):
        with pytest.raises(NonpositiveRadiusError):
            spectral.project_nuclear_ball(np.eye(2), 0.0)


class TestProjectL1Ball:
    def test_inside_unchanged(self):
        v = np.array([0.2, 0.3])
        np.testing.assert_array_equal(spectral.project_l1_ball(v, 1.0), v)

    def test_simple_threshold(self):
        np.testing.assert_allclose(
            spectral.project_l1_ball(np.array([3.0, 1.0]), 2.0), [2.0, 0.0]
        )
