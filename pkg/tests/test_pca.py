import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from retparity.errors import DegenerateData, DimensionMismatch, InvalidParameter
from retparity.pca import fit_pca, project_groups


def test_one_dimensional_data_recovers_axis():
    t = np.linspace(-3, 3, 50)
    x = np.zeros((50, 3))
    x[:, 1] = t
    fit = fit_pca(x, 2)
    np.testing.assert_allclose(np.abs(fit.components[0]), [0, 1, 0], atol=1e-9)
    proj = fit.project(x)
    np.testing.assert_allclose(proj[:, 1], 0.0, atol=1e-9)
    assert fit.explained_ratio[0] == pytest.approx(1.0)


def test_isotropic_sample_splits_variance_evenly():
    x = np.random.default_rng(0).normal(size=(4000, 2))
    fit = fit_pca(x, 2)
    ref = np.sort(np.linalg.eigvalsh(np.cov(x.T)))[::-1]
    np.testing.assert_allclose(fit.variances, ref, rtol=1e-6)
    assert fit.explained_ratio == pytest.approx([0.5, 0.5], abs=0.05)


def test_separated_clusters_stay_apart():
    rng = np.random.default_rng(1)
    a = rng.normal(0.0, 0.3, size=(100, 5))
    b = rng.normal(0.0, 0.3, size=(120, 5)) + np.array([4, -2, 0, 1, 0])
    fit, proj, labels = project_groups([a, b], 2)
    assert labels.tolist() == [0] * 100 + [1] * 120
    c0, c1 = proj[labels == 0].mean(axis=0), proj[labels == 1].mean(axis=0)
    spread = max(np.linalg.norm(proj[labels == g] - c, axis=1).mean() for g, c in ((0, c0), (1, c1)))
    assert np.linalg.norm(c0 - c1) > spread


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(2, 6), st.integers(3, 40))
def test_components_orthonormal_and_ordered(seed, d, n):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d)) * rng.uniform(0.1, 3.0, size=d)
    k = min(d, 3)
    fit = fit_pca(x, k)
    np.testing.assert_allclose(fit.components @ fit.components.T, np.eye(k), atol=1e-8)
    proj = fit.project(x)
    v = proj.var(axis=0, ddof=1)
    assert np.all(np.diff(v) <= 1e-9 * max(1.0, v[0]))
    ref = np.sort(np.linalg.eigvalsh(np.cov(x.T)))[::-1][:k]
    np.testing.assert_allclose(fit.variances, ref, rtol=1e-5, atol=1e-9)
    for comp in fit.components:
        assert comp[np.flatnonzero(np.abs(comp) > 1e-12)[0]] > 0


def test_deterministic():
    x = np.random.default_rng(2).normal(size=(30, 4))
    a, b = fit_pca(x, 2), fit_pca(x.copy(), 2)
    np.testing.assert_array_equal(a.components, b.components)


def test_errors():
    with pytest.raises(DegenerateData):
        fit_pca(np.ones((10, 3)), 2)
    with pytest.raises(InvalidParameter):
        fit_pca(np.random.default_rng(0).normal(size=(5, 2)), 3)
    with pytest.raises(DimensionMismatch):
        fit_pca(np.zeros(4), 1)
    with pytest.raises(DimensionMismatch):
        project_groups([np.zeros((3, 2)), np.zeros((3, 4))])
