"""Reference clusterers: Lasso nodewise regression, ACC on the cord
dissimilarity, and k-medoids (PAM) on ``1 - rho^2``."""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.cluster import hierarchy
from scipy.spatial.distance import squareform

from ._validation import (
    as_array,
    check_matrix,
    check_n_clusters,
    check_random_state,
    check_symmetric,
)
from .datamodel import CoefficientMatrix, Partition, canonical_labels
from .exceptions import (
    InsufficientVariables,
    InvalidFolds,
    InvalidInput,
    SolverStalled,
)

logger = logging.getLogger(__name__)

CORD = "cord"
ONE_MINUS_RHO_SQUARED = "one-minus-rho-squared"


@dataclass(frozen=True)
class DissimilarityMatrix:
    values: np.ndarray
    kind: str = CORD

    def __post_init__(self):
        D = check_symmetric(self.values, name="dissimilarity", tol=1e-12)
        if np.any(D < -1e-12):
            raise InvalidInput("dissimilarities must be nonnegative")
        D = np.maximum(0.5 * (D + D.T), 0.0)
        np.fill_diagonal(D, 0.0)
        D.setflags(write=False)
        object.__setattr__(self, "values", D)


@dataclass(frozen=True)
class LassoConfig:
    lam: Optional[float] = None
    cv_folds: int = 5
    lambda_grid: Optional[Sequence[float]] = None
    n_lambdas: int = 30
    lambda_ratio: float = 1e-3
    seed: Optional[int] = None
    tol: float = 1e-8
    max_sweeps: int = 10000

    def __post_init__(self):
        if self.lam is not None and self.lam < 0:
            raise InvalidInput("lam must be nonnegative")
        if self.lambda_grid is not None:
            grid = np.asarray(self.lambda_grid, dtype=float)
            if grid.size == 0 or np.any(grid <= 0):
                raise InvalidInput("lambda grid must be nonempty and positive")
            object.__setattr__(self, "lambda_grid", tuple(np.sort(grid)[::-1]))


# ------------------------------------------------------------------- lasso


def lambda_max(panel):
    """Smallest ``lam`` for which every nodewise Lasso returns zero."""
    X = as_array(panel)
    G = X.T @ X
    np.fill_diagonal(G, 0.0)
    return float(2.0 * np.max(np.abs(G)))


def default_lambda_grid(panel, n_lambdas=30, ratio=1e-3):
    top = lambda_max(panel)
    if top <= 0:
        return np.array([1.0])
    return np.geomspace(top, top * ratio, n_lambdas)


def _duality_gaps(G, B, XtR, lam):
    """Per-column gap of ``min |x_j - X b|^2 + lam |b|_1`` with ``b_j = 0``."""
    d = G.shape[0]
    diag_xtr = np.diag(XtR)
    # |r_j|^2 = x_j^T r_j - b_j^T X^T r_j
    rss = diag_xtr - np.einsum("kj,kj->j", B, XtR)
    primal = rss + lam * np.abs(B).sum(axis=0)
    off = np.abs(XtR)
    off[np.arange(d), np.arange(d)] = 0.0
    corr = off.max(axis=0)
    if lam == 0:
        return 2.0 * corr
    scale = np.where(corr > 0, np.minimum(1.0, lam / (2.0 * np.maximum(corr, 1e-300))), 1.0)
    # dual objective 2 u^T y - |u|^2 at u = scale * r
    dual = 2.0 * scale * diag_xtr - scale**2 * rss
    return primal - dual


def _polish(G, j, b, lam, slack):
    """Exact solve on the support and signs of ``b``; None if it fails KKT."""
    A = np.flatnonzero(b)
    if A.size == 0:
        return None
    signs = np.sign(b[A])
    rhs = G[A, j] - 0.5 * lam * signs
    try:
        bA = np.linalg.solve(G[np.ix_(A, A)], rhs)
    except np.linalg.LinAlgError:
        return None
    if lam > 0 and np.any(np.sign(bA) != signs):
        return None
    cand = np.zeros_like(b)
    cand[A] = bA
    corr = G[:, j] - G @ cand
    corr[j] = 0.0
    corr[A] = 0.0
    if np.max(np.abs(corr)) > 0.5 * lam + slack:
        return None
    return cand


def lasso_nodewise(panel, lam, tol=1e-8, max_sweeps=10000, B0=None,
                   polish_every=10):
    """Nodewise Lasso with a common penalty.

    Column ``j`` solves ``min |x_j - X b|_2^2 + lam |b|_1`` with ``b_j = 0``
    by cyclic coordinate descent, run on all columns at once.  Each column
    stops once its duality gap falls below ``tol * max(1, |x_j|^2)`` (for
    ``lam = 0`` the stopping quantity is the largest gradient entry instead).
    Every ``polish_every`` sweeps the unfinished columns try an exact solve
    on their current support, which is accepted only if it satisfies the
    optimality conditions; this rescues the slow, ill-conditioned regime.
    """
    X = check_matrix(as_array(panel), name="panel", min_rows=1, min_cols=2)
    if lam < 0:
        raise InvalidInput("lam must be nonnegative")
    d = X.shape[1]
    G = X.T @ X
    gdiag = np.diag(G).copy()
    if np.any(gdiag <= 0):
        raise InvalidInput("panel has an all-zero column")
    B = np.zeros((d, d)) if B0 is None else np.array(as_array(B0), copy=True)
    np.fill_diagonal(B, 0.0)
    XtR = G - G @ B
    thresh = tol * np.maximum(gdiag, 1.0)
    half = lam / 2.0

    for sweep in range(max_sweeps):
        gaps = _duality_gaps(G, B, XtR, lam)
        active = gaps > thresh
        if not np.any(active):
            return CoefficientMatrix(B)
        cols = np.flatnonzero(active)
        if polish_every and sweep % polish_every == polish_every - 1:
            for j in cols:
                cand = _polish(G, j, B[:, j], lam, 1e-3 * thresh[j])
                if cand is not None:
                    B[:, j] = cand
                    XtR[:, j] = G[:, j] - G @ cand
            continue
        for k in range(d):
            old = B[k, cols]
            z = XtR[k, cols] + gdiag[k] * old
            new = np.sign(z) * np.maximum(np.abs(z) - half, 0.0) / gdiag[k]
            new[cols == k] = 0.0
            step = new - old
            if np.any(step):
                B[k, cols] = new
                XtR[:, cols] -= np.outer(G[:, k], step)
        if sweep % 50 == 49:
            XtR = G - G @ B  # refresh accumulated rounding
    gaps = _duality_gaps(G, B, XtR, lam)
    worst = int(np.argmax(gaps / thresh))
    raise SolverStalled(
        f"coordinate descent did not converge for column {worst}",
        residual=float(gaps[worst]),
        column=worst,
    )


def lasso_kkt_residual(panel, B, lam):
    """Largest violation of the nodewise Lasso optimality conditions."""
    X = as_array(panel)
    B = as_array(B)
    d = X.shape[1]
    grad = 2.0 * X.T @ (X @ B - X)
    worst = 0.0
    for j in range(d):
        for k in range(d):
            if k == j:
                continue
            if B[k, j] != 0:
                worst = max(worst, abs(grad[k, j] + lam * np.sign(B[k, j])))
            else:
                worst = max(worst, abs(grad[k, j]) - lam)
    return float(worst)


def _fold_ids(n, folds, seed):
    rng = check_random_state(seed)
    perm = rng.permutation(n)
    ids = np.empty(n, dtype=int)
    ids[perm] = np.arange(n) % folds
    return ids


def lasso_cv(panel, config=None, patience=5):
    """Choose a common ``lam`` by K-fold cross-validation over rows.

    Returns the grid value with the smallest mean validation squared error
    summed over all columns; ties go to the larger ``lam``.  Folds walk the
    descending grid in lockstep with warm starts, and the walk stops once
    the mean error has not improved for ``patience`` consecutive values or
    a fit fails to converge (the remaining, smaller values are never chosen).
    """
    config = config or LassoConfig()
    X = check_matrix(as_array(panel), name="panel", min_rows=2, min_cols=2)
    n = X.shape[0]
    folds = int(config.cv_folds)
    if folds < 2:
        raise InvalidFolds("need at least 2 folds")
    if n // folds < 2:
        raise InvalidFolds(f"{n} rows cannot fill {folds} folds with >= 2 rows each")
    if config.lambda_grid is not None:
        grid = np.asarray(config.lambda_grid, dtype=float)
    else:
        grid = default_lambda_grid(X, config.n_lambdas, config.lambda_ratio)
    if grid.size == 1:
        return float(grid[0])

    ids = _fold_ids(n, folds, config.seed)
    splits = [(X[ids != f], X[ids == f]) for f in range(folds)]
    warm = [None] * folds
    errors = []
    since_best = 0
    for lam in grid:
        total = 0.0
        try:
            for f, (train, test) in enumerate(splits):
                warm[f] = lasso_nodewise(train, lam, tol=config.tol,
                                         max_sweeps=config.max_sweeps,
                                         B0=warm[f]).values
                total += np.sum((test - test @ warm[f]) ** 2)
        except SolverStalled:
            logger.warning("lasso path stopped at lam=%.3g (no convergence)", lam)
            break
        errors.append(total / folds)
        if errors[-1] < min(errors[:-1], default=np.inf):
            since_best = 0
        else:
            since_best += 1
            if patience and since_best >= patience:
                break
    if not errors:
        raise SolverStalled("lasso failed at the largest grid value")
    errors = np.asarray(errors)
    best = errors.min()
    ties = np.flatnonzero(errors <= best * (1 + 1e-12))
    return float(grid[: errors.size][ties].max())


# --------------------------------------------------------------- dissimilarities


def _correlation(panel):
    X = check_matrix(as_array(panel), name="panel", min_rows=2, min_cols=2)
    R = np.corrcoef(X, rowvar=False)
    return np.clip(R, -1.0, 1.0)


def cord_dissimilarity(panel):
    """``min(max_l |rho_il - rho_jl|, max_l |rho_il + rho_jl|)`` over ``l != i, j``."""
    R = _correlation(panel)
    d = R.shape[0]
    if d < 3:
        raise InsufficientVariables(f"cord needs at least 3 variables, got {d}")
    D = np.zeros((d, d))
    block = max(1, 2_000_000 // (d * d))
    idx = np.arange(d)
    for start in range(0, d, block):
        rows = idx[start:start + block]
        Ri = R[rows][:, None, :]
        minus = np.abs(Ri - R[None, :, :])
        plus = np.abs(Ri + R[None, :, :])
        mask = (idx[None, None, :] == rows[:, None, None]) | (
            idx[None, None, :] == idx[None, :, None]
        )
        minus[mask] = -np.inf
        plus[mask] = -np.inf
        D[rows] = np.minimum(minus.max(axis=2), plus.max(axis=2))
    np.fill_diagonal(D, 0.0)
    return DissimilarityMatrix(0.5 * (D + D.T), CORD)


def one_minus_rho_squared(panel):
    R = _correlation(panel)
    return DissimilarityMatrix(1.0 - R**2, ONE_MINUS_RHO_SQUARED)


# ----------------------------------------------------------------- clusterers


def acc_cluster(D, K):
    """Average-linkage agglomerative clustering on ``D``, cut at ``K`` clusters.

    Stands in for the ACC cluster-construction step; only the dissimilarity
    and the fixed cluster count are taken from the ACC method.
    """
    D = as_array(D)
    d = D.shape[0]
    K = check_n_clusters(K, d)
    if K == d:
        return Partition(np.arange(d), d)
    if K == 1:
        return Partition(np.zeros(d, dtype=int), 1)
    Z = hierarchy.linkage(squareform(D, checks=False), method="average")
    labels = hierarchy.cut_tree(Z, n_clusters=K).ravel()
    return Partition(canonical_labels(labels), K)


@dataclass
class KMedoidsResult:
    partition: Partition
    medoids: np.ndarray
    cost: float
    cost_history: list = field(default_factory=list)


def _pick(candidates, rng):
    if rng is None or candidates.size == 1:
        return int(candidates[0])
    return int(rng.choice(candidates))


def pam(D, K, seed=None, max_swaps=10000):
    """Partitioning Around Medoids: greedy BUILD, then best-improvement SWAP.

    Build ties go to the lowest index, or to a seeded random choice when a
    seed is given.
    """
    D = as_array(D)
    d = D.shape[0]
    K = check_n_clusters(K, d)
    rng = None if seed is None else check_random_state(seed)

    totals = D.sum(axis=1)
    medoids = [_pick(np.flatnonzero(totals == totals.min()), rng)]
    nearest = D[medoids[0]].copy()
    for _ in range(1, K):
        gain = np.maximum(nearest[None, :] - D, 0.0).sum(axis=1)
        gain[medoids] = -np.inf
        best = gain.max()
        choice = _pick(np.flatnonzero(gain == best), rng)
        medoids.append(choice)
        nearest = np.minimum(nearest, D[choice])
    medoids = np.array(medoids)

    history = []
    for _ in range(max_swaps):
        dm = D[medoids]
        order = np.argsort(dm, axis=0, kind="stable")
        near_idx = order[0]
        dn = dm[near_idx, np.arange(d)]
        ds = dm[order[1], np.arange(d)] if K > 1 else np.full(d, np.inf)
        cost = float(dn.sum())
        history.append(cost)

        cand = np.setdiff1d(np.arange(d), medoids)
        if cand.size == 0:
            break
        Dh = D[cand]
        base = np.minimum(Dh, dn[None, :])
        change = base.sum(axis=1) - cost
        owner = np.zeros((d, K))
        owner[np.arange(d), near_idx] = 1.0
        correction = (np.minimum(Dh, ds[None, :]) - base) @ owner
        delta = change[:, None] + correction
        h, m = np.unravel_index(np.argmin(delta), delta.shape)
        if delta[h, m] >= -1e-12 * max(cost, 1.0):
            break
        medoids[m] = cand[h]

    dm = D[medoids]
    labels = np.argmin(dm, axis=0)
    labels[medoids] = np.arange(K)
    cost = float(dm[labels, np.arange(d)].sum())
    return KMedoidsResult(Partition(labels, K), medoids.copy(), cost, history)


def kmedoids(D, K, seed=None):
    """k-medoids partition of the variables behind ``D``."""
    return pam(D, K, seed).partition
