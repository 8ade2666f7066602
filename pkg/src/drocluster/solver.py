"""ADMM solver for spectral-norm regularized nodewise regression.

The convex program solved here is::

    minimize_{diag(B) = 0}  |X - X B|_F / sqrt(n) + sqrt(delta) * |I - B|_2

Splitting ``B1 + B2 = I`` gives two subproblems.  The ``B2`` step is the
proximal operator of the spectral norm (``spectral_prox``).  The ``B1``
step is solved to machine precision: for a fixed multiplier ``tau`` on the
Frobenius term it is a ridge problem, diagonalized once per fit by the
eigendecomposition of ``X^T X``, and the right ``tau`` is a scalar root.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import List

import numpy as np
from scipy import optimize

from ._validation import as_array, check_matrix
from .datamodel import CoefficientMatrix
from .exceptions import InvalidInput, SolverStalled

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverOptions:
    rho: float = 1.0
    tol_abs: float = 1e-6
    tol_rel: float = 1e-4
    max_iter: int = 5000
    inner_tol: float = 1e-8
    inner_max_iter: int = 2000
    smoothing_eps: float = 1e-12
    adaptive_rho: bool = False

    def __post_init__(self):
        for name in ("rho", "tol_abs", "tol_rel", "max_iter", "inner_tol",
                     "inner_max_iter", "smoothing_eps"):
            if not getattr(self, name) > 0:
                raise InvalidInput(f"solver option {name} must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass
class AdmmState:
    B1: np.ndarray
    B2: np.ndarray
    dual: np.ndarray
    rho: float
    iteration: int = 0
    primal_residual: List[float] = field(default_factory=list)
    dual_residual: List[float] = field(default_factory=list)
    objective: List[float] = field(default_factory=list)
    rho_history: List[float] = field(default_factory=list)
    converged: bool = False

    @property
    def best_objective(self):
        return min(self.objective) if self.objective else np.inf

    def to_dict(self):
        return {
            "iterations": self.iteration,
            "converged": self.converged,
            "rho": self.rho,
            "primal_residual": list(self.primal_residual),
            "dual_residual": list(self.dual_residual),
            "objective": list(self.objective),
        }


def _data_matrix(panel):
    X = check_matrix(as_array(panel), name="panel", min_rows=1, min_cols=2)
    return X


def dro_objective(panel, B, delta):
    """Squared relaxed worst-case loss ``(|X - XB|_F/sqrt(n) + sqrt(delta)|I - B|_2)^2``."""
    X = _data_matrix(panel)
    B = as_array(B)
    n, d = X.shape
    if B.shape != (d, d):
        raise InvalidInput(f"B has shape {B.shape}, expected {(d, d)}")
    if delta < 0:
        raise InvalidInput("delta must be nonnegative")
    fit = np.linalg.norm(X - X @ B) / np.sqrt(n)
    spec = np.linalg.norm(np.eye(d) - B, 2)
    return float((fit + np.sqrt(delta) * spec) ** 2)


def convex_objective(panel, B, delta):
    """The unsquared convex program minimized by ``admm_fit``."""
    return float(np.sqrt(dro_objective(panel, B, delta)))


def spectral_prox(C, lam):
    """Solve ``min_B |B - C|_F^2 + lam * |B|_2``.

    The singular vectors of ``C`` are kept; the top ``k`` singular values
    are clipped to a common level ``t`` and the rest are left alone.  For
    each ``k`` the best ``t`` is ``(sum_{j<=k} s_j - lam/2) / k`` clamped to
    ``[s_{k+1}, s_k]``; the ``k`` with the lowest loss wins.
    """
    C = as_array(C)
    if lam < 0:
        raise InvalidInput("lam must be nonnegative")
    if lam == 0 or not np.any(C):
        return C.copy()
    U, s, Vt = np.linalg.svd(C, full_matrices=False)
    t = _clipped_level(s, lam)
    s_hat = np.minimum(s, t)
    return (U * s_hat) @ Vt


def _clipped_level(s, lam):
    k = np.arange(1, s.size + 1)
    csum = np.cumsum(s)
    csq = np.cumsum(s**2)
    lower = np.append(s[1:], 0.0)
    t = np.clip((csum - lam / 2.0) / k, lower, s)
    loss = csq - 2.0 * t * csum + k * t**2 + lam * t
    return t[np.argmin(loss)]


class _NodewiseRidge:
    """Exact solver of the ``B1`` subproblem for a fixed data matrix.

    Minimizes ``c |X(I - B)|_F + (rho/2) |B - V|_F^2`` over ``diag(B) = 0``
    with ``c = 1/sqrt(n)``.
    """

    def __init__(self, X, opts):
        n, d = X.shape
        self.d = d
        self.c = 1.0 / np.sqrt(n)
        self.opts = opts
        evals, Q = np.linalg.eigh(X.T @ X)
        self.evals = np.maximum(evals, 0.0)
        self.Q = Q
        self.Qt = Q.T.copy()
        self.Q2 = Q**2
        self.sqrt_evals = np.sqrt(self.evals)[:, None]
        self.scale = max(float(self.evals.max()), 1e-300)
        self.tau = None

    def _rotated(self, W, tau, rho):
        """``Q^T B(tau)`` and the residual norm ``|X(I - B(tau))|_F``."""
        inv = 1.0 / (tau * self.evals + rho)
        P = inv[:, None] * (tau * self.evals[:, None] * self.Qt + rho * W)
        diag_bt = np.einsum("jk,kj->j", self.Q, P)
        m_diag = self.Q2 @ inv
        mu = diag_bt / m_diag
        P = P - inv[:, None] * self.Qt * mu[None, :]
        resid = np.linalg.norm(self.sqrt_evals * (self.Qt - P))
        return P, resid

    def solve(self, V, rho):
        W = self.Qt @ V
        c = self.c
        max_tau = 1e16 * rho / self.scale

        _, s0 = self._rotated(W, 0.0, rho)
        if s0 <= self.opts.smoothing_eps:
            tau = 0.0
        else:
            phi = lambda tau: tau * self._rotated(W, tau, rho)[1] - c
            hi = self.tau if self.tau else c / s0
            hi = min(max(hi, 1e-300), max_tau)
            lo = 0.0
            while phi(hi) < 0.0 and hi < max_tau:
                lo = hi
                hi = min(hi * 4.0, max_tau)
            if phi(hi) < 0.0:
                # the optimum sits on the zero-residual set; take the limit
                tau = max_tau
            else:
                if lo == 0.0:
                    lo = hi
                    while lo > 1e-300 and phi(lo) >= 0.0:
                        lo /= 4.0
                    if phi(lo) >= 0.0:
                        lo = 0.0
                try:
                    tau = optimize.brentq(
                        phi, lo, hi, xtol=1e-300, rtol=1e-14,
                        maxiter=self.opts.inner_max_iter,
                    )
                except (RuntimeError, ValueError) as exc:
                    raise SolverStalled(
                        f"B1 root search failed: {exc}", residual=phi(hi)
                    ) from exc
        self.tau = tau if tau > 0 else self.tau
        P, _ = self._rotated(W, tau, rho)
        B = self.Q @ P
        np.fill_diagonal(B, 0.0)
        return B


def b1_stationarity(panel, B, V, rho, smoothing_eps=1e-12):
    """Largest off-diagonal entry of the ``B1`` subproblem gradient."""
    X = _data_matrix(panel)
    n, d = X.shape
    R = X - X @ B
    norm = np.linalg.norm(R)
    grad = rho * (B - V)
    if norm > smoothing_eps:
        grad = grad - X.T @ R / (np.sqrt(n) * norm)
    np.fill_diagonal(grad, 0.0)
    return float(np.max(np.abs(grad)))


def solve_b1(panel, B2, dual, rho, opts=None):
    """One ``B1`` update: ``argmin |X - XB|_F/sqrt(n) + rho/2 |B + B2 - I + dual|_F^2``."""
    opts = opts or SolverOptions()
    X = _data_matrix(panel)
    d = X.shape[1]
    V = np.eye(d) - as_array(B2) - as_array(dual)
    return CoefficientMatrix(_NodewiseRidge(X, opts).solve(V, rho))


def admm_fit(panel, delta, opts=None, callback=None):
    """Fit the spectral-norm regularized nodewise regression by ADMM.

    Parameters
    ----------
    panel : StandardizedPanel or array of shape (n, d)
    delta : float
        Radius of the Wasserstein ball; the regularization weight is
        ``sqrt(delta)``.
    opts : SolverOptions, optional
    callback : callable, optional
        Called as ``callback(state)`` after every iteration.

    Returns
    -------
    coef : CoefficientMatrix
        The ``B1`` iterate, whose diagonal is zero by construction.
    state : AdmmState
        Final iterates and residual histories.  ``state.converged`` is
        False when ``max_iter`` was reached.
    """
    opts = opts or SolverOptions()
    if delta < 0:
        raise InvalidInput("delta must be nonnegative")
    X = _data_matrix(panel)
    n, d = X.shape
    eye = np.eye(d)
    sub = _NodewiseRidge(X, opts)
    rho = float(opts.rho)
    sqrt_delta = float(np.sqrt(delta))

    state = AdmmState(B1=np.zeros((d, d)), B2=np.zeros((d, d)),
                      dual=np.zeros((d, d)), rho=rho)
    B2, lam = state.B2, state.dual
    for it in range(1, opts.max_iter + 1):
        B1 = sub.solve(eye - B2 - lam, rho)
        B2_old = B2
        B2 = spectral_prox(eye - B1 - lam, 2.0 * sqrt_delta / rho)
        gap = B1 + B2 - eye
        lam = lam + gap

        r_norm = float(np.linalg.norm(gap))
        s_norm = float(rho * np.linalg.norm(B2 - B2_old))
        eps_pri = opts.tol_abs + opts.tol_rel * max(
            np.linalg.norm(B1), np.linalg.norm(B2), np.sqrt(d)
        )
        eps_dual = opts.tol_abs + opts.tol_rel * rho * np.linalg.norm(lam)

        state.B1, state.B2, state.dual, state.rho = B1, B2, lam, rho
        state.iteration = it
        state.primal_residual.append(r_norm)
        state.dual_residual.append(s_norm)
        state.rho_history.append(rho)
        fit = np.linalg.norm(X - X @ B1) / np.sqrt(n)
        state.objective.append(
            float(fit + sqrt_delta * np.linalg.norm(eye - B1, 2))
        )
        if callback is not None:
            callback(state)
        if r_norm <= eps_pri and s_norm <= eps_dual:
            state.converged = True
            break
        if opts.adaptive_rho:
            if r_norm > 10.0 * s_norm:
                rho *= 2.0
                lam = lam / 2.0
            elif s_norm > 10.0 * r_norm:
                rho /= 2.0
                lam = lam * 2.0

    if not state.converged:
        logger.warning(
            "ADMM stopped after %d iterations (primal %.3g, dual %.3g)",
            state.iteration, state.primal_residual[-1], state.dual_residual[-1],
        )
    return CoefficientMatrix(state.B1), state
