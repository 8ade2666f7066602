import numpy as np
import pytest
from hypothesis import given, strategies as st

from drocluster.datamodel import generate_block_model, standardize
from drocluster.delta import (
    FULL,
    WISHART,
    UpsilonEstimate,
    delta_from_samples,
    estimate_upsilon,
    sample_rbar,
    second_moment,
    select_delta,
)
from drocluster.exceptions import InvalidInput, InvalidUpsilon, MemoryCapExceeded

from conftest import random_panel


def test_wishart_diagonal_on_standardized_panel(small_panel):
    ups = estimate_upsilon(small_panel, "wishart")
    np.testing.assert_allclose(np.diag(ups.matrix), 2.0, atol=1e-12)
    assert ups.method == WISHART


def test_wishart_offdiagonal_large_n():
    X = np.random.default_rng(3).standard_normal((100_000, 2))
    ups = estimate_upsilon(X, "b")
    assert ups.matrix[0, 1] == pytest.approx(1.0, abs=0.03)


def test_full_upsilon_hand_computed():
    X = np.array([[1.0, 2.0], [0.0, -1.0], [3.0, 1.0]])
    ups = estimate_upsilon(X, "full")
    # vec(x x^T), row-major, one row per observation
    G = np.array([[x[0] * x[0], x[0] * x[1], x[1] * x[0], x[1] * x[1]] for x in X])
    centred = G - G.mean(axis=0)
    expect = np.zeros((4, 4))
    for row in centred:
        expect += np.outer(row, row)
    expect /= 2
    np.testing.assert_allclose(ups.matrix, expect, atol=1e-13)
    assert ups.method == FULL


def test_full_upsilon_memory_cap(small_panel):
    with pytest.raises(MemoryCapExceeded, match="wishart"):
        estimate_upsilon(small_panel, "full", memory_cap=100)


def test_unknown_method(small_panel):
    with pytest.raises(InvalidInput):
        estimate_upsilon(small_panel, "c")


def test_zero_upsilon_gives_zero_samples():
    ups = UpsilonEstimate(WISHART, np.zeros((3, 3)), 3)
    np.testing.assert_array_equal(sample_rbar(ups, np.ones(3), 50, seed=1), 0.0)


def test_samples_deterministic(small_panel):
    ups = estimate_upsilon(small_panel)
    a = sample_rbar(ups, np.ones(6), 200, seed=9)
    b = sample_rbar(ups, np.ones(6), 200, seed=9)
    np.testing.assert_array_equal(a, b)


def test_sampler_rejects_bad_variances(small_panel):
    ups = estimate_upsilon(small_panel)
    with pytest.raises(InvalidUpsilon):
        sample_rbar(ups, np.zeros(6), 10, seed=0)
    with pytest.raises(InvalidUpsilon):
        UpsilonEstimate(WISHART, -np.ones((2, 2)), 2)


def analytic_mean(var, sinv):
    """E[R_bar] = 1/4 sum_ij Var(Z_ji) sinv_j for symmetric Z."""
    d = var.shape[0]
    return 0.25 * sum(var[j, i] * sinv[j] for i in range(d) for j in range(d))


def test_identity_expectation():
    ups = UpsilonEstimate(WISHART, np.array([[2.0, 1.0], [1.0, 2.0]]), 2)
    r = sample_rbar(ups, np.ones(2), 100_000, seed=5)
    assert analytic_mean(ups.matrix, np.ones(2)) == 1.5
    se = r.std(ddof=1) / np.sqrt(r.size)
    assert abs(r.mean() - 1.5) <= 3 * se


def test_full_and_wishart_agree_on_wishart_structure(rng):
    # a full upsilon encoding the same symmetric Z must give the same law
    S = np.array([[1.0, 0.4, 0.1], [0.4, 1.5, -0.2], [0.1, -0.2, 0.8]])
    var = np.outer(np.diag(S), np.diag(S)) + S**2
    d = 3
    full = np.zeros((d * d, d * d))
    for i in range(d):
        for j in range(d):
            full[i * d + j, i * d + j] = var[i, j]
            full[i * d + j, j * d + i] = var[i, j]
    sinv = 1 / np.diag(S)
    a = sample_rbar(UpsilonEstimate(WISHART, var, d), sinv, 60_000, seed=1)
    b = sample_rbar(UpsilonEstimate(FULL, full, d), sinv, 60_000, seed=2)
    mean = analytic_mean(var, sinv)
    for r in (a, b):
        assert abs(r.mean() - mean) <= 4 * r.std() / np.sqrt(r.size)
    assert np.quantile(a, 0.95) == pytest.approx(np.quantile(b, 0.95), rel=0.03)


def test_select_delta_quantile_edges(small_panel):
    est = select_delta(small_panel, alpha=0.999, M=500, seed=4)
    lo = est.samples_summary["min"]
    assert lo <= est.delta <= est.samples_summary["q0.01"]


def test_select_delta_monotone_in_alpha(small_panel):
    d = [select_delta(small_panel, a, 1000, seed=8).delta for a in (0.01, 0.05, 0.1)]
    assert d[0] >= d[1] >= d[2] > 0


def test_select_delta_deterministic(small_panel):
    a = select_delta(small_panel, seed=3)
    b = select_delta(small_panel, seed=3)
    assert a.delta == b.delta
    assert a.to_dict()["seed"] == 3


def independent_delta(X, alpha, M, seed):
    """Quantile of (1/4n) Z^T-weighted quadratic forms for d=2, by explicit loops."""
    n = X.shape[0]
    S = X.T @ X / (n - 1)
    rng = np.random.default_rng(seed)
    out = np.empty(M)
    for m in range(M):
        z11 = rng.normal(0, np.sqrt(2 * S[0, 0] ** 2))
        z22 = rng.normal(0, np.sqrt(2 * S[1, 1] ** 2))
        z12 = rng.normal(0, np.sqrt(S[0, 0] * S[1, 1] + S[0, 1] ** 2))
        Z = np.array([[z11, z12], [z12, z22]])
        total = 0.0
        for i in range(2):
            col = Z[:, i]
            total += 0.25 * (col[0] ** 2 / S[0, 0] + col[1] ** 2 / S[1, 1])
        out[m] = total / n
    return np.sort(out)[int(np.ceil((1 - alpha) * M)) - 1]


def test_select_delta_against_independent_implementation():
    panel = standardize(np.random.default_rng(21).standard_normal((250, 2)))
    ours = select_delta(panel, 0.05, 40_000, seed=1).delta
    theirs = independent_delta(panel.values, 0.05, 40_000, seed=2)
    assert ours == pytest.approx(theirs, rel=0.02)


@given(st.lists(st.floats(0.0, 100.0), min_size=5, max_size=40), st.integers(2, 500))
def test_delta_scales_inversely_with_n(samples, n):
    r = np.array(samples)
    assert delta_from_samples(r, 2 * n, 0.1) == pytest.approx(
        delta_from_samples(r, n, 0.1) / 2, rel=1e-12, abs=1e-300)


def test_alpha_validated(small_panel):
    with pytest.raises(InvalidInput):
        select_delta(small_panel, alpha=1.0)


def test_second_moment_divisor(rng):
    X = rng.standard_normal((7, 3))
    np.testing.assert_allclose(second_moment(X), X.T @ X / 6)


def test_alpha_insensitivity_small_instance():
    from drocluster.clustering import ami, spectral_cluster, symmetrize
    from drocluster.solver import admm_fit

    panel, _, _ = generate_block_model(3, 30, 60, noise_var=0.1, seed=3)
    parts = []
    for a in (0.01, 0.05, 0.1):
        est = select_delta(panel, a, 1000, seed=7)
        B, _ = admm_fit(panel, est.delta)
        parts.append(spectral_cluster(symmetrize(B), 3, seed=1))
    assert min(ami(parts[0], parts[1]), ami(parts[1], parts[2])) >= 0.95
