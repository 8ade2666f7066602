import numpy as np
import pytest
from hypothesis import given, strategies as st

from drocluster.datamodel import standardize
from drocluster.exceptions import InvalidInput
from drocluster.solver import (
    SolverOptions,
    admm_fit,
    b1_stationarity,
    convex_objective,
    dro_objective,
    solve_b1,
    spectral_prox,
)

from conftest import random_panel


def prox_objective(B, C, lam):
    return np.sum((B - C) ** 2) + lam * np.linalg.norm(B, 2)


def grid_prox_value(C, lam, coarse=20001, fine=20001):
    """min over the clip level t of sum (s - min(s, t))^2 + lam * t, by grid search."""
    s = np.linalg.svd(C, compute_uv=False)
    top = s[0] if s.size else 0.0

    def g(t):
        t = np.atleast_1d(t)[:, None]
        return np.sum((s[None, :] - np.minimum(s[None, :], t)) ** 2, axis=1) + lam * t[:, 0]

    ts = np.linspace(0.0, top, coarse)
    i = int(np.argmin(g(ts)))
    step = ts[1] - ts[0] if coarse > 1 else 0.0
    lo, hi = max(0.0, ts[i] - 2 * step), min(top, ts[i] + 2 * step)
    fine_ts = np.linspace(lo, hi, fine)
    return float(g(fine_ts).min())


# -------------------------------------------------------------- objective


def test_objective_zero_B_zero_delta(small_panel):
    n, d = small_panel.values.shape
    assert dro_objective(small_panel, np.zeros((d, d)), 0.0) == pytest.approx(d * (n - 1) / n)


def test_objective_termwise(rng):
    panel = random_panel(rng, 10, 6)
    X = panel.values
    B = rng.standard_normal((6, 6))
    np.fill_diagonal(B, 0)
    delta = 0.7
    fit = np.linalg.norm(X - X @ B) ** 2 / 10
    spec = np.linalg.svd(np.eye(6) - B, compute_uv=False)[0]
    val = dro_objective(panel, B, delta)
    assert val >= fit and val >= delta * spec**2
    assert val == pytest.approx((np.sqrt(fit) + np.sqrt(delta) * spec) ** 2, rel=1e-13)
    assert dro_objective(panel, B, 0.0) == pytest.approx(fit, rel=1e-13)
    assert convex_objective(panel, B, delta) ** 2 == pytest.approx(val, rel=1e-13)


def test_objective_rejects_bad_input(small_panel):
    with pytest.raises(InvalidInput):
        dro_objective(small_panel, np.zeros((2, 2)), 0.1)
    with pytest.raises(InvalidInput):
        dro_objective(small_panel, np.zeros((6, 6)), -1.0)


# ------------------------------------------------------------------ prox


def test_prox_no_regularization(rng):
    C = rng.standard_normal((4, 3))
    np.testing.assert_array_equal(spectral_prox(C, 0.0), C)


def test_prox_zero_input():
    np.testing.assert_array_equal(spectral_prox(np.zeros((3, 3)), 5.0), 0)


def test_prox_diag_3_1():
    B = spectral_prox(np.diag([3.0, 1.0]), 2.0)
    np.testing.assert_allclose(B, np.diag([2.0, 1.0]), atol=1e-14)
    assert prox_objective(B, np.diag([3.0, 1.0]), 2.0) == pytest.approx(
        grid_prox_value(np.diag([3.0, 1.0]), 2.0), abs=1e-8)


def test_prox_large_lambda_gives_zero(rng):
    C = rng.standard_normal((3, 3))
    nuclear = np.linalg.svd(C, compute_uv=False).sum()
    np.testing.assert_allclose(spectral_prox(C, 2 * nuclear + 1), 0, atol=1e-13)


@given(st.integers(1, 8), st.integers(1, 8), st.sampled_from([0.0, 0.5, 2.0, 10.0]),
       st.integers(0, 2**31 - 1))
def test_prox_matches_grid_oracle(m, k, lam, seed):
    C = np.random.default_rng(seed).standard_normal((m, k))
    B = spectral_prox(C, lam)
    assert prox_objective(B, C, lam) <= grid_prox_value(C, lam) + 1e-8


@given(st.integers(2, 6), st.floats(0.0, 20.0), st.integers(0, 2**31 - 1))
def test_prox_structure(m, lam, seed):
    C = np.random.default_rng(seed).standard_normal((m, m))
    B = spectral_prox(C, lam)
    U, s, Vt = np.linalg.svd(C)
    # same singular vectors, clipped values
    s_hat = np.diag(U.T @ B @ Vt.T)
    np.testing.assert_allclose(U.T @ B @ Vt.T, np.diag(s_hat), atol=1e-10)
    assert np.all(np.diff(s_hat) <= 1e-10)
    assert np.linalg.norm(B, 2) <= np.linalg.norm(C, 2) + 1e-12
    f = prox_objective(B, C, lam)
    assert f <= prox_objective(C, C, lam) + 1e-12
    assert f <= prox_objective(np.zeros_like(C), C, lam) + 1e-12


def test_prox_against_generic_convex_solver(rng):
    cp = pytest.importorskip("cvxpy")
    for lam in (0.5, 3.0):
        C = rng.standard_normal((4, 4))
        Bv = cp.Variable((4, 4))
        prob = cp.Problem(cp.Minimize(cp.sum_squares(Bv - C) + lam * cp.sigma_max(Bv)))
        prob.solve()
        assert prox_objective(spectral_prox(C, lam), C, lam) <= prob.value + 1e-6


def test_prox_rejects_negative_lambda():
    with pytest.raises(InvalidInput):
        spectral_prox(np.eye(2), -1.0)


# -------------------------------------------------------------------- B1


def b1_objective(X, B, V, rho):
    n = X.shape[0]
    return np.linalg.norm(X - X @ B) / np.sqrt(n) + 0.5 * rho * np.sum((B - V) ** 2)


def gradient_oracle(X, V, rho, iters=20000):
    """Plain projected gradient on the off-diagonal entries."""
    n, d = X.shape
    L = rho + np.linalg.norm(X, 2) ** 2 / np.sqrt(n) * 10
    B = V.copy()
    np.fill_diagonal(B, 0)
    best = (b1_objective(X, B, V, rho), B.copy())
    for _ in range(iters):
        R = X - X @ B
        g = rho * (B - V) - X.T @ R / (np.sqrt(n) * np.linalg.norm(R))
        np.fill_diagonal(g, 0)
        B = B - g / L
        f = b1_objective(X, B, V, rho)
        if f < best[0]:
            best = (f, B.copy())
    return best


def test_b1_zero_panel_is_projection(rng):
    X = np.zeros((5, 4))
    B2, lam = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
    B = solve_b1(X, B2, lam, 1.0).values
    expect = np.eye(4) - B2 - lam
    np.fill_diagonal(expect, 0)
    np.testing.assert_allclose(B, expect, atol=1e-15)


def test_b1_penalty_dominant_limit(rng):
    panel = random_panel(rng, 12, 5)
    B2, lam = rng.standard_normal((5, 5)), rng.standard_normal((5, 5))
    B = solve_b1(panel, B2, lam, 1e9).values
    expect = np.eye(5) - B2 - lam
    np.fill_diagonal(expect, 0)
    np.testing.assert_allclose(B, expect, atol=1e-6)


@pytest.mark.parametrize("rho", [0.3, 1.0, 5.0])
def test_b1_matches_gradient_oracle(rng, rho):
    panel = random_panel(rng, 12, 5)
    X = panel.values
    V = np.eye(5) - rng.standard_normal((5, 5)) * 0.3
    B = solve_b1(panel, np.eye(5) - V, np.zeros((5, 5)), rho).values
    assert np.all(np.diag(B) == 0)
    assert b1_stationarity(panel, B, V, rho) <= 1e-8
    f_oracle, _ = gradient_oracle(X, V, rho)
    f = b1_objective(X, B, V, rho)
    assert f <= f_oracle * (1 + 1e-6)
    assert f == pytest.approx(f_oracle, rel=1e-6)


def test_b1_exact_fit_regime(rng):
    # n < d: the residual can vanish, the subproblem optimum sits there
    panel = random_panel(rng, 4, 8)
    V = np.eye(8) - rng.standard_normal((8, 8))
    B = solve_b1(panel, np.eye(8) - V, np.zeros((8, 8)), 1.0).values
    assert np.all(np.diag(B) == 0)
    f = b1_objective(panel.values, B, V, 1.0)
    f_oracle, _ = gradient_oracle(panel.values, V, 1.0, iters=5000)
    assert f <= f_oracle + 1e-7


# ------------------------------------------------------------------- ADMM


def ols_oracle(X):
    d = X.shape[1]
    B = np.zeros((d, d))
    for j in range(d):
        rest = [k for k in range(d) if k != j]
        Xr = X[:, rest]
        B[rest, j] = np.linalg.solve(Xr.T @ Xr, Xr.T @ X[:, j])
    return B


def test_admm_delta_zero_is_least_squares(rng):
    panel = random_panel(rng, 60, 8)
    B, state = admm_fit(panel, 0.0)
    assert state.converged
    np.testing.assert_allclose(B.values, ols_oracle(panel.values), atol=1e-5)


def test_admm_duplicated_columns():
    x = np.array([1.0, -2.0, 0.5, 3.0, -1.0])
    panel = standardize(np.column_stack([x, x]))
    B, _ = admm_fit(panel, 0.0)
    np.testing.assert_allclose(B.values, [[0, 1], [1, 0]], atol=1e-6)


def test_admm_regularizer_dominant(rng):
    panel = random_panel(rng, 20, 5)
    delta = 1e6 * np.sum(panel.values**2)
    B, _ = admm_fit(panel, delta, SolverOptions(max_iter=20000))
    assert np.linalg.norm(np.eye(5) - B.values, 2) <= 1 + 1e-3


def test_admm_diagonal_zero_every_iteration(rng):
    panel = random_panel(rng, 15, 6)
    seen = []
    admm_fit(panel, 0.5, callback=lambda s: seen.append(np.abs(np.diag(s.B1)).max()))
    assert seen and max(seen) == 0.0


@pytest.mark.parametrize("delta", [0.1, 1.0, 10.0])
def test_admm_converges_and_tracks_best(rng, delta):
    panel = random_panel(rng, 25, 10)
    B, state = admm_fit(panel, delta)
    assert state.converged
    assert state.primal_residual[-1] <= 1e-6 + 1e-4 * np.sqrt(10) * 10
    assert min(state.primal_residual + state.dual_residual) >= 0
    final = convex_objective(panel, B.values, delta)
    assert final <= state.best_objective * (1 + 1e-3)


def test_admm_adaptive_rho_same_answer(rng):
    panel = random_panel(rng, 30, 8)
    tight = dict(tol_abs=1e-9, tol_rel=1e-9, max_iter=20000)
    B1, _ = admm_fit(panel, 2.0, SolverOptions(**tight))
    B2, s2 = admm_fit(panel, 2.0, SolverOptions(adaptive_rho=True, **tight))
    f1 = convex_objective(panel, B1.values, 2.0)
    f2 = convex_objective(panel, B2.values, 2.0)
    assert f2 == pytest.approx(f1, rel=1e-6)
    assert len(set(s2.rho_history)) >= 1


def test_admm_against_generic_convex_solver(rng):
    cp = pytest.importorskip("cvxpy")
    panel = random_panel(rng, 15, 6)
    X, n, delta = panel.values, 15, 0.8
    Bv = cp.Variable((6, 6))
    obj = cp.norm(X - X @ Bv, "fro") / np.sqrt(n) + np.sqrt(delta) * cp.sigma_max(np.eye(6) - Bv)
    prob = cp.Problem(cp.Minimize(obj), [cp.diag(Bv) == 0])
    prob.solve()
    B, _ = admm_fit(panel, delta, SolverOptions(tol_abs=1e-9, tol_rel=1e-9, max_iter=20000))
    assert convex_objective(panel, B.values, delta) == pytest.approx(prob.value, rel=1e-5)


def test_admm_max_iter_flag(rng):
    panel = random_panel(rng, 20, 6)
    B, state = admm_fit(panel, 1.0, SolverOptions(max_iter=2))
    assert not state.converged and state.iteration == 2
    assert state.to_dict()["iterations"] == 2


def test_options_validation():
    with pytest.raises(InvalidInput):
        SolverOptions(rho=0.0)
