"""scikit-learn style wrappers.

All clusterers here group the *columns* (variables) of ``X``, so
``labels_`` has one entry per feature rather than per sample.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import baselines
from .clustering import spectral_cluster, symmetrize
from .datamodel import standardize
from .delta import select_delta
from .portfolio import hierarchical_cluster, min_variance_weights
from .solver import SolverOptions, admm_fit


class ColumnStandardizer(TransformerMixin, BaseEstimator):
    """Center columns and scale them to unit sample standard deviation (ddof=1)."""

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=2)
        self.mean_ = X.mean(axis=0)
        self.scale_ = X.std(axis=0, ddof=1)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "scale_")
        X = check_array(X)
        return (X - self.mean_) / np.where(self.scale_ > 0, self.scale_, 1.0)


class _ColumnClusterer(ClusterMixin, BaseEstimator):
    def fit_predict(self, X, y=None):
        return self.fit(X).labels_

    def _panel(self, X):
        X = check_array(X, ensure_min_samples=2, ensure_min_features=2)
        self.n_features_in_ = X.shape[1]
        return standardize(X)


class DROSubspaceClustering(_ColumnClusterer):
    """Distributionally robust nodewise regression followed by spectral clustering.

    Parameters
    ----------
    n_clusters : int
    delta : float or "auto"
        Wasserstein radius; ``"auto"`` picks it from the data.
    alpha : float
        Quantile level for the automatic radius.
    n_draws : int
        Monte Carlo draws for the automatic radius.
    upsilon : {"wishart", "full"}
    rho, tol_abs, tol_rel, max_iter : ADMM settings
    random_state : int or None

    Attributes
    ----------
    labels_ : ndarray of shape (n_features,)
    coef_ : ndarray of shape (n_features, n_features)
    similarity_ : ndarray of shape (n_features, n_features)
    delta_ : float
    solver_state_ : AdmmState
    """

    def __init__(self, n_clusters=2, delta="auto", alpha=0.05, n_draws=1000,
                 upsilon="wishart", rho=1.0, tol_abs=1e-6, tol_rel=1e-4,
                 max_iter=5000, random_state=None):
        self.n_clusters = n_clusters
        self.delta = delta
        self.alpha = alpha
        self.n_draws = n_draws
        self.upsilon = upsilon
        self.rho = rho
        self.tol_abs = tol_abs
        self.tol_rel = tol_rel
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y=None):
        panel = self._panel(X)
        rng = np.random.default_rng(self.random_state)
        delta_seed, km_seed = (int(s) for s in rng.integers(2**31 - 1, size=2))
        if isinstance(self.delta, str) and self.delta == "auto":
            self.delta_estimate_ = select_delta(panel, self.alpha, self.n_draws,
                                                self.upsilon, seed=delta_seed)
            self.delta_ = self.delta_estimate_.delta
        else:
            self.delta_estimate_ = None
            self.delta_ = float(self.delta)
        opts = SolverOptions(rho=self.rho, tol_abs=self.tol_abs,
                             tol_rel=self.tol_rel, max_iter=self.max_iter)
        coef, self.solver_state_ = admm_fit(panel, self.delta_, opts)
        self.coef_ = np.array(coef.values)
        C = symmetrize(coef)
        self.similarity_ = np.array(C.values)
        self.labels_ = spectral_cluster(C, self.n_clusters, seed=km_seed).labels.copy()
        return self


class LassoSubspaceClustering(_ColumnClusterer):
    """Nodewise Lasso (sparse subspace clustering) with a common penalty.

    ``lam=None`` selects the penalty by row-wise cross-validation.
    """

    def __init__(self, n_clusters=2, lam=None, cv_folds=5, lambda_grid=None,
                 random_state=None):
        self.n_clusters = n_clusters
        self.lam = lam
        self.cv_folds = cv_folds
        self.lambda_grid = lambda_grid
        self.random_state = random_state

    def fit(self, X, y=None):
        panel = self._panel(X)
        rng = np.random.default_rng(self.random_state)
        cv_seed, km_seed = (int(s) for s in rng.integers(2**31 - 1, size=2))
        if self.lam is None:
            cfg = baselines.LassoConfig(cv_folds=self.cv_folds,
                                        lambda_grid=self.lambda_grid, seed=cv_seed)
            self.lam_ = baselines.lasso_cv(panel, cfg)
        else:
            self.lam_ = float(self.lam)
        coef = baselines.lasso_nodewise(panel, self.lam_)
        self.coef_ = np.array(coef.values)
        C = symmetrize(coef)
        self.similarity_ = np.array(C.values)
        self.labels_ = spectral_cluster(C, self.n_clusters, seed=km_seed).labels.copy()
        return self


class ACCClustering(_ColumnClusterer):
    """Average-linkage clustering on the cord dissimilarity."""

    def __init__(self, n_clusters=2):
        self.n_clusters = n_clusters

    def fit(self, X, y=None):
        panel = self._panel(X)
        D = baselines.cord_dissimilarity(panel)
        self.dissimilarity_ = np.array(D.values)
        self.labels_ = baselines.acc_cluster(D, self.n_clusters).labels.copy()
        return self


class KMedoidsClustering(_ColumnClusterer):
    """PAM on the ``1 - rho^2`` distance between variables."""

    def __init__(self, n_clusters=2, random_state=None):
        self.n_clusters = n_clusters
        self.random_state = random_state

    def fit(self, X, y=None):
        panel = self._panel(X)
        D = baselines.one_minus_rho_squared(panel)
        result = baselines.pam(D, self.n_clusters, seed=self.random_state)
        self.dissimilarity_ = np.array(D.values)
        self.medoid_indices_ = result.medoids
        self.inertia_ = result.cost
        self.labels_ = result.partition.labels.copy()
        return self


class HierarchicalDROACC(_ColumnClusterer):
    """DRO spectral clusters at the top level, ACC sub-clusters within each."""

    def __init__(self, n_top=2, n_sub=2, alpha=0.05, n_draws=1000, upsilon="wishart",
                 log_returns=False, random_state=None):
        self.n_top = n_top
        self.n_sub = n_sub
        self.alpha = alpha
        self.n_draws = n_draws
        self.upsilon = upsilon
        self.log_returns = log_returns
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=2, ensure_min_features=2)
        self.n_features_in_ = X.shape[1]
        info = {}
        part = hierarchical_cluster(X, self.n_top, self.n_sub, alpha=self.alpha,
                                    M=self.n_draws, delta_method=self.upsilon,
                                    seed=self.random_state,
                                    log_returns=self.log_returns, info=info)
        self.delta_ = info.get("delta")
        self.top_labels_ = np.asarray(info["top_labels"])
        self.labels_ = part.labels.copy()
        return self


class MinVariancePortfolio(BaseEstimator):
    """Long-only minimum-variance weights from a ``T x k`` return matrix."""

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=2)
        self.n_features_in_ = X.shape[1]
        cov = np.atleast_2d(np.cov(X, rowvar=False, ddof=1))
        self.covariance_ = cov
        self.weights_ = min_variance_weights(cov).weights.copy()
        return self

    def predict(self, X):
        """Portfolio return per row."""
        check_is_fitted(self, "weights_")
        return check_array(X) @ self.weights_
