"""Data-driven choice of the Wasserstein radius ``delta``.

The radius is the ``1 - alpha`` quantile of ``R_bar / n`` where::

    R_bar = sum_i 1/4 * Z[:, i]^T Sigma^{-1} Z[:, i],   Z ~ N(0, Upsilon)

``Upsilon`` is the asymptotic covariance of the vectorized second moments
``x x^T``, and ``Sigma^{-1}`` is approximated by inverting only the diagonal
of the sample second-moment matrix.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._validation import as_array, check_alpha, check_matrix, check_random_state
from .exceptions import InvalidInput, InvalidUpsilon, MemoryCapExceeded

WISHART = "wishart-diagonal"
FULL = "full-sample-covariance"
_METHOD_ALIASES = {"b": WISHART, "wishart": WISHART, WISHART: WISHART,
                   "a": FULL, "full": FULL, FULL: FULL}

DEFAULT_MEMORY_CAP = 2 * 1024**3
_CHUNK_ENTRIES = 4_000_000


def _method(name):
    try:
        return _METHOD_ALIASES[name]
    except KeyError:
        raise InvalidInput(f"unknown upsilon method {name!r}") from None


@dataclass(frozen=True)
class UpsilonEstimate:
    """Covariance of the limiting second-moment fluctuation ``Z``.

    For the Wishart-diagonal method ``matrix`` is ``d x d`` and holds
    ``Var(Z_ij)``; for the full method it is ``d^2 x d^2`` over ``vec(Z)``
    in row-major order.
    """

    method: str
    matrix: np.ndarray
    d: int

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=float)
        method = _method(self.method)
        if method == WISHART:
            if M.shape != (self.d, self.d):
                raise InvalidUpsilon(f"expected {(self.d, self.d)}, got {M.shape}")
            if np.any(M < 0):
                raise InvalidUpsilon("variances must be nonnegative")
        else:
            p = self.d * self.d
            if M.shape != (p, p):
                raise InvalidUpsilon(f"expected {(p, p)}, got {M.shape}")
            if np.max(np.abs(M - M.T), initial=0.0) > 1e-8 * max(1.0, np.abs(M).max()):
                raise InvalidUpsilon("full upsilon is not symmetric")
        object.__setattr__(self, "method", method)
        object.__setattr__(self, "matrix", M)


@dataclass(frozen=True)
class DeltaEstimate:
    delta: float
    alpha: float
    M: int
    method: str
    n: int
    seed: Optional[int] = None
    samples_summary: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "delta": self.delta,
            "alpha": self.alpha,
            "M": self.M,
            "method": self.method,
            "n": self.n,
            "seed": self.seed,
            "samples_summary": dict(self.samples_summary),
        }


def second_moment(panel):
    """``Sigma_n = X^T X / (n - 1)``."""
    X = check_matrix(as_array(panel), name="panel", min_rows=2, min_cols=1)
    return X.T @ X / (X.shape[0] - 1)


def estimate_upsilon(panel, method="wishart", memory_cap=DEFAULT_MEMORY_CAP):
    """Estimate ``Upsilon`` from a panel.

    ``"wishart"`` keeps only ``Var(Z_ij) = s_ii s_jj + s_ij^2`` (exact for
    Gaussian data).  ``"full"`` is the sample covariance, divisor ``n - 1``,
    of the vectorized outer products ``x_t x_t^T``; it needs ``8 d^4`` bytes.
    """
    method = _method(method)
    X = check_matrix(as_array(panel), name="panel", min_rows=2, min_cols=1)
    n, d = X.shape
    if method == WISHART:
        S = second_moment(X)
        s = np.diag(S)
        return UpsilonEstimate(method, np.outer(s, s) + S**2, d)

    need = 8 * d**4
    if need > memory_cap:
        raise MemoryCapExceeded(
            f"full upsilon needs {need} bytes (cap {memory_cap}); "
            "use the wishart-diagonal method"
        )
    G = (X[:, :, None] * X[:, None, :]).reshape(n, d * d)
    G = G - G.mean(axis=0)
    return UpsilonEstimate(method, G.T @ G / (n - 1), d)


def _rbar_weights(sigma_inv_diag):
    w = np.add.outer(sigma_inv_diag, sigma_inv_diag)
    np.fill_diagonal(w, sigma_inv_diag)
    return w


def sample_rbar(upsilon, sigma_inv_diag, M, seed=None):
    """Draw ``M`` samples of ``R_bar``.

    Under the Wishart-diagonal method the upper triangle of ``Z`` (with the
    diagonal) is drawn independently and mirrored, so each off-diagonal
    ``Z_ij^2`` enters twice, once per column.
    """
    if not isinstance(upsilon, UpsilonEstimate):
        raise InvalidUpsilon("expected an UpsilonEstimate")
    sinv = np.asarray(sigma_inv_diag, dtype=float)
    d = upsilon.d
    if sinv.shape != (d,):
        raise InvalidInput(f"sigma_inv_diag must have length {d}")
    if np.any(sinv <= 0) or not np.all(np.isfinite(sinv)):
        raise InvalidUpsilon("inverse variances must be positive and finite")
    if M < 1:
        raise InvalidInput("M must be >= 1")
    rng = check_random_state(seed)

    if upsilon.method == WISHART:
        iu = np.triu_indices(d)
        coef = 0.25 * (_rbar_weights(sinv) * upsilon.matrix)[iu]
        per_draw = coef.size
        out = np.empty(M)
        step = max(1, _CHUNK_ENTRIES // per_draw)
        for start in range(0, M, step):
            stop = min(M, start + step)
            xi = rng.standard_normal((stop - start, per_draw))
            out[start:stop] = (xi * xi) @ coef
        return out

    evals, evecs = np.linalg.eigh(upsilon.matrix)
    if evals.min() < -1e-8 * max(1.0, evals.max()):
        raise InvalidUpsilon("full upsilon is not positive semidefinite")
    root = evecs * np.sqrt(np.clip(evals, 0.0, None))
    # vec(Z) is row-major, so entry (j, i) sits at j*d + i and takes sinv[j]
    row_weight = np.repeat(sinv, d)
    out = np.empty(M)
    step = max(1, _CHUNK_ENTRIES // (d * d))
    for start in range(0, M, step):
        stop = min(M, start + step)
        Z = rng.standard_normal((stop - start, d * d)) @ root.T
        out[start:stop] = 0.25 * (Z * Z) @ row_weight
    return out


def delta_from_samples(rbar, n, alpha):
    """``1 - alpha`` quantile (linear interpolation) of ``rbar / n``."""
    alpha = check_alpha(alpha)
    return float(np.quantile(np.asarray(rbar, dtype=float) / n, 1.0 - alpha))


def select_delta(panel, alpha=0.05, M=1000, method="wishart", seed=None,
                 memory_cap=DEFAULT_MEMORY_CAP):
    """Pick the robustness radius from the data.

    Returns a ``DeltaEstimate`` whose ``delta`` is the empirical
    ``1 - alpha`` quantile of ``R_bar / n`` over ``M`` Monte Carlo draws.
    """
    alpha = check_alpha(alpha)
    X = check_matrix(as_array(panel), name="panel", min_rows=2, min_cols=1)
    n = X.shape[0]
    ups = estimate_upsilon(X, method, memory_cap=memory_cap)
    diag = np.diag(second_moment(X))
    if np.any(diag <= 0):
        raise InvalidUpsilon("panel has a column with zero second moment")
    rbar = sample_rbar(ups, 1.0 / diag, M, seed)
    scaled = rbar / n
    qs = (0.01, 0.05, 0.1, 0.5, 0.9, 0.95, 0.99)
    summary = {f"q{q:g}": float(np.quantile(scaled, q)) for q in qs}
    summary.update(mean=float(scaled.mean()), min=float(scaled.min()),
                   max=float(scaled.max()))
    return DeltaEstimate(
        delta=delta_from_samples(rbar, n, alpha),
        alpha=alpha,
        M=int(M),
        method=ups.method,
        n=n,
        seed=seed if isinstance(seed, (int, np.integer)) else None,
        samples_summary=summary,
    )
