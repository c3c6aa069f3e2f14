"""Nuclear-norm machinery: plain and smoothed norms, gradient, projection.

The smoothed norm is the Moreau-type envelope
sup over spectral-norm-bounded Z of Tr(A^T Z) - mu/2 * frob(Z)^2, evaluated
in closed form as
a Huber function of the singular values (verified numerically against the
sup definition in the test suite).
"""

from __future__ import annotations

import numpy as np

from .errors import (
    NonFiniteInputError,
    NonpositiveMuError,
    NonpositiveRadiusError,
)

# Singular values below SVD_TOLERANCE * sigma_max are treated as zero when
# reconstructing projections, for numerical rank stability.
SVD_TOLERANCE = 1e-12


def _check_finite(a):
    if not np.isfinite(a).all():
        raise NonFiniteInputError("matrix contains non-finite entries")


def nuclear_norm(a):
    """Sum of singular values."""
    _check_finite(a)
    return float(np.linalg.svd(a, compute_uv=False).sum())


def _huber(sigma, mu):
    small = sigma <= mu
    return np.where(small, sigma**2 / (2.0 * mu), sigma - mu / 2.0)


def smoothed_nuclear_norm(a, mu):
    """Smoothed nuclear norm: sum of Huber-smoothed singular values."""
    _check_finite(a)
    if mu <= 0:
        raise NonpositiveMuError(f"mu must be positive, got {mu}")
    sigma = np.linalg.svd(a, compute_uv=False)
    return float(_huber(sigma, mu).sum())


def smoothed_nuclear_norm_grad(a, mu):
    """Gradient of the smoothed nuclear norm: U diag(min(sigma/mu, 1)) V^T."""
    _check_finite(a)
    if mu <= 0:
        raise NonpositiveMuError(f"mu must be positive, got {mu}")
    u, sigma, vt = np.linalg.svd(a, full_matrices=False)
    clipped = np.minimum(sigma / mu, 1.0)
    return (u * clipped) @ vt


def project_l1_ball(v, radius):
    """Euclidean projection of a nonnegative vector onto the l1 ball.

    Sort-and-threshold simplex algorithm (Duchi et al. style), O(k log k).
    """
    if radius <= 0:
        raise NonpositiveRadiusError(f"radius must be positive, got {radius}")
    v = np.asarray(v, dtype=np.float64)
    if v.sum() <= radius:
        return v.copy()
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    ks = np.arange(1, len(v) + 1)
    rho = np.nonzero(u * ks > css - radius)[0][-1]
    theta = (css[rho] - radius) / (rho + 1)
    return np.maximum(v - theta, 0.0)


def project_nuclear_ball(a, radius, svd_tolerance=SVD_TOLERANCE):
    """Frobenius-nearest matrix with nuclear norm at most ``radius``.

    SVD, project the singular-value vector onto the l1 ball, reconstruct.
    """
    _check_finite(a)
    if radius <= 0:
        raise NonpositiveRadiusError(f"radius must be positive, got {radius}")
    sigma_all = np.linalg.svd(a, compute_uv=False)
    if sigma_all.sum() <= radius:
        return a.copy()
    u, sigma, vt = np.linalg.svd(a, full_matrices=False)
    if sigma[0] > 0:
        sigma = np.where(sigma < svd_tolerance * sigma[0], 0.0, sigma)
    projected = project_l1_ball(sigma, radius)
    return (u * projected) @ vt
