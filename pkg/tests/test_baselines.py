import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from drocluster.baselines import (
    CORD,
    DissimilarityMatrix,
    LassoConfig,
    acc_cluster,
    cord_dissimilarity,
    default_lambda_grid,
    lambda_max,
    lasso_cv,
    lasso_kkt_residual,
    lasso_nodewise,
    one_minus_rho_squared,
    pam,
)
from drocluster.clustering import ami
from drocluster.datamodel import Partition, generate_block_model, standardize
from drocluster.exceptions import InsufficientVariables, InvalidFolds, InvalidInput

from conftest import random_panel


# ---------------------------------------------------------------- lasso


def test_zero_above_lambda_max(small_panel):
    lam = lambda_max(small_panel) * 1.0001
    np.testing.assert_array_equal(lasso_nodewise(small_panel, lam).values, 0.0)


def test_nonzero_just_below_lambda_max(small_panel):
    lam = lambda_max(small_panel) * 0.99
    assert np.count_nonzero(lasso_nodewise(small_panel, lam).values) > 0


def test_lambda_zero_is_least_squares(rng):
    X = standardize(rng.standard_normal((50, 6))).values
    B = lasso_nodewise(X, 0.0).values
    for j in range(6):
        rest = [k for k in range(6) if k != j]
        b, *_ = np.linalg.lstsq(X[:, rest], X[:, j], rcond=None)
        np.testing.assert_allclose(B[rest, j], b, atol=1e-6)
        assert B[j, j] == 0


@pytest.mark.parametrize("frac", [0.5, 0.1, 0.02])
def test_kkt_conditions(rng, frac):
    panel = random_panel(rng, 40, 10)
    lam = frac * lambda_max(panel)
    B = lasso_nodewise(panel, lam).values
    assert lasso_kkt_residual(panel, B, lam) <= 1e-6 * max(1.0, lam)


def test_underdetermined_converges():
    panel, _, _ = generate_block_model(3, 30, 20, noise_var=0.1, seed=2)
    lam = 0.03 * lambda_max(panel)
    B = lasso_nodewise(panel, lam).values
    assert lasso_kkt_residual(panel, B, lam) <= 1e-4


def test_l1_norm_decreasing_along_path(small_panel):
    grid = default_lambda_grid(small_panel, 12, 1e-2)
    norms = [np.abs(lasso_nodewise(small_panel, g).values).sum(axis=0) for g in grid]
    for a, b in zip(norms, norms[1:]):
        assert np.all(b >= a - 1e-8)


def test_negative_lambda(small_panel):
    with pytest.raises(InvalidInput):
        lasso_nodewise(small_panel, -1.0)


def test_warm_start_same_answer(small_panel):
    lam = 0.2 * lambda_max(small_panel)
    cold = lasso_nodewise(small_panel, lam).values
    warm = lasso_nodewise(small_panel, lam, B0=np.ones((6, 6))).values
    np.testing.assert_allclose(cold, warm, atol=1e-6)


def test_cv_single_value_grid(small_panel):
    assert lasso_cv(small_panel, LassoConfig(lambda_grid=[0.7])) == 0.7


def test_cv_deterministic(small_panel):
    cfg = LassoConfig(n_lambdas=10, seed=4)
    assert lasso_cv(small_panel, cfg) == lasso_cv(small_panel, cfg)


def test_cv_prefers_small_penalty_for_duplicated_columns(rng):
    base = rng.standard_normal((60, 3))
    X = np.column_stack([base, base + 1e-3 * rng.standard_normal((60, 3))])
    grid = [5.0, 1.0, 0.1, 0.01]
    assert lasso_cv(standardize(X), LassoConfig(lambda_grid=grid, seed=0)) == 0.01


def test_cv_fold_validation(small_panel):
    with pytest.raises(InvalidFolds):
        lasso_cv(small_panel, LassoConfig(cv_folds=20))
    with pytest.raises(InvalidFolds):
        lasso_cv(small_panel, LassoConfig(cv_folds=1))


def test_lasso_config_validation():
    with pytest.raises(InvalidInput):
        LassoConfig(lambda_grid=[1.0, -1.0])
    assert LassoConfig(lambda_grid=[1, 3, 2]).lambda_grid == (3.0, 2.0, 1.0)


# ------------------------------------------------------------------- cord


def cord_oracle(X):
    R = np.corrcoef(X, rowvar=False)
    d = R.shape[0]
    D = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            if i == j:
                continue
            others = [l for l in range(d) if l not in (i, j)]
            a = max(abs(R[i, l] - R[j, l]) for l in others)
            b = max(abs(R[i, l] + R[j, l]) for l in others)
            D[i, j] = min(a, b)
    return D


def test_cord_matches_loops(rng):
    X = rng.standard_normal((25, 7))
    np.testing.assert_allclose(cord_dissimilarity(X).values, cord_oracle(X), atol=1e-14)


def test_cord_identical_and_flipped_profiles(rng):
    X = rng.standard_normal((30, 4))
    X = np.column_stack([X, X[:, 0], -X[:, 1]])
    D = cord_dissimilarity(X).values
    assert D[0, 4] == pytest.approx(0.0, abs=1e-12)
    assert D[1, 5] == pytest.approx(0.0, abs=1e-12)


def test_cord_requires_three_variables(rng):
    with pytest.raises(InsufficientVariables):
        cord_dissimilarity(rng.standard_normal((10, 2)))


@settings(max_examples=25)
@given(arrays(np.float64, (12, 5), elements=st.floats(-10, 10)))
def test_cord_bounds(X):
    if np.any(X.std(axis=0) < 1e-3):
        return
    D = cord_dissimilarity(X).values
    assert np.all(D >= 0) and np.all(D <= 2 + 1e-12)
    np.testing.assert_array_equal(D, D.T)
    assert np.all(np.diag(D) == 0)


def test_one_minus_rho_squared(rng):
    X = rng.standard_normal((20, 3))
    R = np.corrcoef(X, rowvar=False)
    D = one_minus_rho_squared(X).values
    np.testing.assert_allclose(D[0, 1], 1 - R[0, 1] ** 2, atol=1e-15)


def test_dissimilarity_validation():
    with pytest.raises(InvalidInput):
        DissimilarityMatrix(np.array([[0.0, -1.0], [-1.0, 0.0]]))
    assert DissimilarityMatrix(np.zeros((2, 2))).kind == CORD


# -------------------------------------------------------------------- acc


def test_acc_trivial_cuts(rng):
    D = cord_dissimilarity(rng.standard_normal((20, 5)))
    assert acc_cluster(D, 5).n_clusters == 5
    assert np.all(acc_cluster(D, 1).labels == 0)


def test_acc_two_blocks():
    D = np.full((6, 6), 1.0)
    D[:3, :3] = 0.1
    D[3:, 3:] = 0.2
    np.fill_diagonal(D, 0)
    assert list(acc_cluster(DissimilarityMatrix(D), 2).labels) == [0, 0, 0, 1, 1, 1]


def test_acc_recovers_strong_blocks():
    panel, truth, _ = generate_block_model(3, 18, 200, factor_counts=1, noise_var=0.05,
                                           seed=5)
    assert ami(acc_cluster(cord_dissimilarity(panel), 3), truth) == pytest.approx(1.0)


# -------------------------------------------------------------- k-medoids


def brute_force_kmedoids(D, K):
    d = D.shape[0]
    best = np.inf
    for meds in itertools.combinations(range(d), K):
        best = min(best, D[list(meds)].min(axis=0).sum())
    return best


def test_pam_k_equals_d(rng):
    D = one_minus_rho_squared(rng.standard_normal((15, 5)))
    res = pam(D, 5)
    assert res.cost == 0
    assert sorted(res.medoids) == list(range(5))


@pytest.mark.parametrize("seed", range(5))
def test_pam_near_brute_force(seed):
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((7, 2))
    D = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    res = pam(DissimilarityMatrix(D), 2)
    opt = brute_force_kmedoids(D, 2)
    assert res.cost >= opt - 1e-12
    assert res.cost <= 1.1 * opt + 1e-12


def test_pam_cost_nonincreasing_and_assignment(rng):
    D = one_minus_rho_squared(rng.standard_normal((30, 20)))
    res = pam(D, 4, seed=2)
    hist = np.array(res.cost_history)
    assert np.all(np.diff(hist) <= 1e-12)
    dm = D.values[res.medoids]
    assigned = dm[res.partition.labels, np.arange(20)]
    np.testing.assert_allclose(assigned, dm.min(axis=0))
    assert res.cost == pytest.approx(dm.min(axis=0).sum())


def test_pam_seeded_deterministic(rng):
    D = one_minus_rho_squared(rng.standard_normal((30, 12)))
    a = pam(D, 3, seed=11)
    b = pam(D, 3, seed=11)
    np.testing.assert_array_equal(a.medoids, b.medoids)
    assert isinstance(a.partition, Partition)
