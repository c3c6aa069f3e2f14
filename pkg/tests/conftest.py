import numpy as np
import pytest

from ccnnboot import data_io, patching


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_patchset(n=40, p=1, q=4, d2=2, seed=0):
    """Random patch set with labels tied to a linear rule (learnable)."""
    gen = np.random.default_rng(seed)
    patches = gen.standard_normal((n, p, q))
    w = gen.standard_normal(q)
    margins = patches.sum(axis=1) @ w
    labels = (margins > 0).astype(np.int64) % d2
    if d2 > 2:
        # spread labels over all classes by quantile binning of the margin
        edges = np.quantile(margins, np.linspace(0, 1, d2 + 1)[1:-1])
        labels = np.searchsorted(edges, margins).astype(np.int64)
    return patching.PatchSet(patches=patches, labels=labels, num_classes=d2)


def logistic_dataset(n, dim=4, seed=0, scale=2.0):
    coeffs = np.zeros(dim)
    coeffs[0] = scale
    spec = data_io.SyntheticSpec(
        input_dim=dim, true_coefficients=coeffs, noise_kind="logistic", seed=seed
    )
    return data_io.generate_synthetic(spec, n)


def as_patches(data):
    n = len(data)
    dim = int(np.prod(data.sample_shape))
    return patching.PatchSet(
        patches=data.inputs.reshape(n, 1, dim),
        labels=data.labels,
        num_classes=data.num_classes,
    )
