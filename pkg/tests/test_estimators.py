import numpy as np
import pytest
from sklearn.base import clone

from drocluster.clustering import ami
from drocluster.datamodel import generate_block_model
from drocluster.estimators import (
    ACCClustering,
    ColumnStandardizer,
    DROSubspaceClustering,
    HierarchicalDROACC,
    KMedoidsClustering,
    LassoSubspaceClustering,
    MinVariancePortfolio,
)


@pytest.fixture(scope="module")
def block_data():
    panel, truth, _ = generate_block_model(3, 24, 80, noise_var=0.1, seed=8)
    return panel.values, truth


ESTIMATORS = [
    DROSubspaceClustering(n_clusters=3, n_draws=300, random_state=0),
    LassoSubspaceClustering(n_clusters=3, lambda_grid=[20.0, 5.0, 1.0], random_state=0),
    ACCClustering(n_clusters=3),
    KMedoidsClustering(n_clusters=3, random_state=0),
]


@pytest.mark.parametrize("est", ESTIMATORS, ids=lambda e: type(e).__name__)
def test_params_round_trip(est):
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    twin.set_params(n_clusters=4)
    assert twin.n_clusters == 4 and est.n_clusters == 3


@pytest.mark.parametrize("est", ESTIMATORS, ids=lambda e: type(e).__name__)
def test_fit_predict_labels_columns(est, block_data):
    X, truth = block_data
    labels = clone(est).fit_predict(X)
    assert labels.shape == (X.shape[1],)
    assert set(labels) <= set(range(3))


def test_dro_estimator_matches_functional_pipeline(block_data):
    from drocluster.clustering import spectral_cluster, symmetrize
    from drocluster.datamodel import standardize
    from drocluster.delta import select_delta
    from drocluster.solver import admm_fit

    X, _ = block_data
    est = DROSubspaceClustering(n_clusters=3, n_draws=300, random_state=1).fit(X)
    s_delta, s_km = (int(v) for v in np.random.default_rng(1).integers(2**31 - 1, size=2))
    panel = standardize(X)
    delta = select_delta(panel, 0.05, 300, seed=s_delta).delta
    coef, _ = admm_fit(panel, delta)
    part = spectral_cluster(symmetrize(coef), 3, seed=s_km)
    assert est.delta_ == delta
    np.testing.assert_array_equal(est.labels_, part.labels)
    fixed = DROSubspaceClustering(n_clusters=3, delta=delta, random_state=1).fit(X)
    assert fixed.delta_estimate_ is None
    np.testing.assert_array_equal(fixed.coef_, est.coef_)


def test_dro_estimator_separated_blocks():
    panel, truth, _ = generate_block_model(3, 24, 80, factor_counts=1, noise_var=0.05,
                                           seed=8)
    est = DROSubspaceClustering(n_clusters=3, n_draws=300, random_state=1).fit(panel.values)
    assert ami(est.labels_, truth) == 1.0
    assert np.all(np.diag(est.coef_) == 0)


def test_hierarchical_estimator(block_data):
    X, _ = block_data
    est = HierarchicalDROACC(n_top=3, n_sub=2, n_draws=300, random_state=0).fit(X)
    assert est.labels_.shape == (X.shape[1],)
    assert len(est.top_labels_) == X.shape[1]


def test_standardizer(rng):
    X = 3 + 2 * rng.standard_normal((20, 4))
    Z = ColumnStandardizer().fit_transform(X)
    np.testing.assert_allclose(Z.std(axis=0, ddof=1), 1.0)
    np.testing.assert_allclose(Z.mean(axis=0), 0.0, atol=1e-14)


def test_min_variance_portfolio(rng):
    R = rng.standard_normal((200, 3)) * [0.01, 0.02, 0.03]
    model = MinVariancePortfolio().fit(R)
    assert model.weights_.sum() == pytest.approx(1.0)
    assert model.weights_[0] > model.weights_[2]
    np.testing.assert_allclose(model.predict(R), R @ model.weights_)
