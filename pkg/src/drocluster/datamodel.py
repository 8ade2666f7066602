"""Core data types, column standardization and the multi-factor block model.

The block model generates ``d`` variables split into ``K`` clusters.  Each
variable loads on a handful of cluster-specific latent factors, optionally
on one hidden global factor, plus idiosyncratic noise::

    x_i = beta_H(i) * F_H + F_{z(i)} @ beta_G(i) + eps_i

with ``|beta_G(i)|^2 + beta_H(i)^2 = 1``.  ``population_covariance`` and
``population_nodewise`` give the ground truth used in tests.
"""

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from ._validation import as_array, check_matrix, check_random_state, check_symmetric
from .exceptions import (
    InvalidData,
    InvalidInput,
    InvalidSpec,
    SingularCovariance,
    ZeroVarianceColumn,
)

MAX_PARTITION_RETRIES = 100


def _frozen(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class StandardizedPanel:
    """``n x d`` observations with zero-mean, unit-variance (ddof=1) columns."""

    values: np.ndarray
    column_ids: tuple = ()

    def __post_init__(self):
        X = check_matrix(self.values, name="panel", min_rows=2, min_cols=2)
        means = X.mean(axis=0)
        stds = X.std(axis=0, ddof=1)
        if np.max(np.abs(means)) > 1e-10 or np.max(np.abs(stds - 1.0)) > 1e-8:
            raise InvalidData("panel columns are not standardized")
        ids = tuple(self.column_ids) or tuple(f"x{j}" for j in range(X.shape[1]))
        if len(ids) != X.shape[1]:
            raise InvalidData(f"{len(ids)} column ids for {X.shape[1]} columns")
        object.__setattr__(self, "values", _frozen(X))
        object.__setattr__(self, "column_ids", tuple(str(c) for c in ids))

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def d(self):
        return self.values.shape[1]

    def subset(self, columns):
        """Re-standardized panel restricted to the given column indices."""
        columns = np.asarray(columns, dtype=int)
        return standardize(
            self.values[:, columns], [self.column_ids[j] for j in columns]
        )


@dataclass(frozen=True)
class Partition:
    """Cluster assignment of ``d`` items, labels in ``0..n_clusters-1``."""

    labels: np.ndarray
    n_clusters: Optional[int] = None

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or labels.size == 0:
            raise InvalidInput("partition labels must be a non-empty 1-d array")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise InvalidInput("partition labels must be integers")
            labels = labels.astype(int)
        if labels.min() < 0:
            raise InvalidInput("partition labels must be nonnegative")
        K = self.n_clusters if self.n_clusters is not None else int(labels.max()) + 1
        if labels.max() >= K:
            raise InvalidInput(f"label {labels.max()} out of range for K={K}")
        labels = labels.astype(np.int64, copy=True)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "n_clusters", int(K))

    @property
    def d(self):
        return self.labels.size

    @property
    def degenerate(self):
        """True when some label in ``0..K-1`` is unused."""
        return np.unique(self.labels).size < self.n_clusters

    def sizes(self):
        return np.bincount(self.labels, minlength=self.n_clusters)

    def members(self, k):
        return np.flatnonzero(self.labels == k)

    def canonical(self):
        """Relabel clusters in order of first appearance."""
        return Partition(canonical_labels(self.labels))

    def to_dict(self):
        return {"n_clusters": self.n_clusters, "labels": self.labels.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(np.asarray(data["labels"], dtype=np.int64), data.get("n_clusters"))


def canonical_labels(labels):
    """Map labels to ``0..K-1`` in order of first appearance."""
    labels = np.asarray(labels)
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inverse].astype(np.int64)


@dataclass(frozen=True)
class CovarianceEstimate:
    matrix: np.ndarray
    kind: str = "population"

    def __post_init__(self):
        M = check_symmetric(self.matrix, name="covariance", tol=1e-12)
        if np.any(np.diag(M) < 0):
            raise InvalidInput("covariance has a negative diagonal entry")
        if self.kind not in ("population", "sample-second-moment", "sample"):
            raise InvalidInput(f"unknown covariance kind {self.kind!r}")
        object.__setattr__(self, "matrix", _frozen(0.5 * (M + M.T)))

    @property
    def values(self):
        return self.matrix


@dataclass(frozen=True)
class CoefficientMatrix:
    """``d x d`` regression coefficients; the diagonal is forced to zero."""

    values: np.ndarray

    def __post_init__(self):
        B = np.array(as_array(self.values), dtype=float, copy=True)
        if B.ndim != 2 or B.shape[0] != B.shape[1]:
            raise InvalidInput(f"coefficient matrix must be square, got {B.shape}")
        if not np.all(np.isfinite(B)):
            raise InvalidInput("coefficient matrix has non-finite entries")
        np.fill_diagonal(B, 0.0)
        B.setflags(write=False)
        object.__setattr__(self, "values", B)

    @property
    def d(self):
        return self.values.shape[0]

    @property
    def H(self):
        """``I - B`` (unit diagonal)."""
        return np.eye(self.d) - self.values


@dataclass(frozen=True)
class BlockModelSpec:
    """Parameters of a multi-factor block model.

    ``loadings`` is ``d x D`` with row ``i`` supported on the factor block of
    cluster ``z(i)``.  ``factor_ids`` records which pool factor occupies each
    of the ``D`` stacked slots; slots that share a pool factor are perfectly
    correlated, which is how ``factor_cov`` is built.
    """

    labels: np.ndarray
    cluster_sizes: tuple
    factor_counts: tuple
    loadings: np.ndarray
    factor_cov: np.ndarray
    noise_var: np.ndarray
    common_loading: np.ndarray
    factor_ids: tuple = ()
    seed: Optional[int] = None

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        A = np.asarray(self.loadings, dtype=float)
        S = np.asarray(self.factor_cov, dtype=float)
        gamma = np.asarray(self.noise_var, dtype=float)
        beta_h = np.asarray(self.common_loading, dtype=float)
        sizes = tuple(int(m) for m in self.cluster_sizes)
        counts = tuple(int(c) for c in self.factor_counts)
        d, D = A.shape if A.ndim == 2 else (-1, -1)
        if len(sizes) != len(counts) or sum(sizes) != labels.size or d != labels.size:
            raise InvalidSpec("cluster sizes, labels and loadings disagree")
        if sum(counts) != D or S.shape != (D, D):
            raise InvalidSpec("factor counts, loadings and factor covariance disagree")
        if gamma.shape != (d,) or beta_h.shape != (d,):
            raise InvalidSpec("noise variances and common loadings need length d")
        if np.any(gamma < 0):
            raise InvalidSpec("noise variances must be nonnegative")
        if np.max(np.abs(S - S.T), initial=0.0) > 1e-12:
            raise InvalidSpec("factor covariance is not symmetric")
        offsets = np.concatenate([[0], np.cumsum(counts)])
        for k in range(len(sizes)):
            block = S[offsets[k]:offsets[k + 1], offsets[k]:offsets[k + 1]]
            if np.max(np.abs(block - np.eye(counts[k])), initial=0.0) > 1e-12:
                raise InvalidSpec(f"within-cluster factor block {k} is not identity")
            rows = labels == k
            outside = np.ones(D, dtype=bool)
            outside[offsets[k]:offsets[k + 1]] = False
            if np.any(A[np.ix_(rows, outside)] != 0):
                raise InvalidSpec(f"loadings of cluster {k} leak outside its block")
        for name, arr in (("labels", labels), ("loadings", A), ("factor_cov", S),
                          ("noise_var", gamma), ("common_loading", beta_h)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "cluster_sizes", sizes)
        object.__setattr__(self, "factor_counts", counts)
        object.__setattr__(self, "factor_ids", tuple(int(f) for f in self.factor_ids))

    @property
    def K(self):
        return len(self.cluster_sizes)

    @property
    def d(self):
        return self.labels.size

    def partition(self):
        return Partition(self.labels, self.K)

    def loading_norms(self):
        """``|beta_G(i)|^2 + beta_H(i)^2`` per variable."""
        return np.sum(self.loadings**2, axis=1) + self.common_loading**2

    def to_dict(self):
        return {
            "seed": self.seed,
            "K": self.K,
            "labels": self.labels.tolist(),
            "cluster_sizes": list(self.cluster_sizes),
            "factor_counts": list(self.factor_counts),
            "factor_ids": list(self.factor_ids),
            "loadings": self.loadings.tolist(),
            "factor_cov": self.factor_cov.tolist(),
            "noise_var": self.noise_var.tolist(),
            "common_loading": self.common_loading.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            labels=data["labels"],
            cluster_sizes=data["cluster_sizes"],
            factor_counts=data["factor_counts"],
            loadings=np.asarray(data["loadings"], dtype=float).reshape(
                len(data["labels"]), -1
            ),
            factor_cov=np.asarray(data["factor_cov"], dtype=float).reshape(
                sum(data["factor_counts"]), -1
            ),
            noise_var=data["noise_var"],
            common_loading=data["common_loading"],
            factor_ids=data.get("factor_ids", ()),
            seed=data.get("seed"),
        )


def standardize(raw, column_ids: Optional[Sequence] = None) -> StandardizedPanel:
    """Center each column and scale it to unit sample standard deviation.

    The divisor is ``n - 1``.  Raises ``ZeroVarianceColumn`` for a constant
    column and ``InvalidData`` for non-finite input.
    """
    X = as_array(raw)
    if X.ndim != 2:
        raise InvalidData(f"expected a 2-d array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidData("input contains non-finite entries")
    if X.shape[0] < 2 or X.shape[1] < 2:
        raise InvalidData(f"need n >= 2 and d >= 2, got shape {X.shape}")
    centered = X - X.mean(axis=0)
    std = centered.std(axis=0, ddof=1)
    scale = np.maximum(np.abs(X).max(axis=0), 1e-300)
    for j in np.flatnonzero(std <= 1e-13 * scale):
        raise ZeroVarianceColumn(int(j))
    Z = centered / std
    # second pass removes the O(eps) drift left by the first
    Z = Z - Z.mean(axis=0)
    Z = Z / Z.std(axis=0, ddof=1)
    if column_ids is None:
        column_ids = getattr(raw, "column_ids", None)
        if column_ids is None and isinstance(raw, pd.DataFrame):
            column_ids = list(raw.columns)
    return StandardizedPanel(Z, tuple(column_ids or ()))


def _draw_sizes(rng, d, K, min_size):
    for _ in range(MAX_PARTITION_RETRIES):
        sizes = rng.multinomial(d, np.full(K, 1.0 / K))
        if sizes.min() >= min_size:
            return sizes
    raise InvalidSpec(
        f"could not draw {K} clusters of size >= {min_size} from d={d} "
        f"in {MAX_PARTITION_RETRIES} attempts"
    )


def _draw_level(rng, law, size):
    """A law is either a constant or a ``(low, high)`` uniform range."""
    if np.isscalar(law):
        return np.full(size, float(law))
    low, high = law
    return rng.uniform(low, high, size=size)


def generate_block_model(
    K,
    d,
    n,
    *,
    factor_counts="random",
    common_loading_sq=0.0,
    noise_var=0.1,
    seed=None,
    standardized=True,
):
    """Sample ``n`` observations of ``d`` variables from a block model.

    Parameters
    ----------
    K, d, n : int
        Number of clusters, variables and observations.
    factor_counts : "random", int or sequence of int
        ``"random"`` draws ``d_k`` uniformly from ``1..min(m_k - 1, n - 1)``.
        An int fixes every ``d_k``; a sequence gives one value per cluster.
    common_loading_sq : float or (low, high)
        ``beta_H(i)^2``, constant or drawn uniformly per variable.
    noise_var : float or (low, high)
        ``Var(eps_i)``, constant or drawn uniformly per variable.
    seed : int, Generator or None
    standardized : bool
        When False the raw ``Y + U`` matrix is returned instead of a panel.

    Returns
    -------
    panel : StandardizedPanel or ndarray
    partition : Partition
    spec : BlockModelSpec
    """
    master_seed = seed if isinstance(seed, (int, np.integer)) else None
    rng = check_random_state(seed)
    if K < 1 or d < K:
        raise InvalidSpec(f"need 1 <= K <= d, got K={K}, d={d}")
    if n < 2:
        raise InvalidSpec(f"need n >= 2, got {n}")

    if isinstance(factor_counts, str):
        if factor_counts != "random":
            raise InvalidSpec(f"unknown factor count rule {factor_counts!r}")
        min_size = 2
    else:
        fixed = np.broadcast_to(np.asarray(factor_counts, dtype=int), (K,))
        if np.any(fixed < 1):
            raise InvalidSpec("factor counts must be >= 1")
        if fixed.max() + 1 > n:
            raise InvalidSpec(f"need n >= max d_k + 1, got n={n}")
        min_size = int(fixed.max()) + 1
    sizes = _draw_sizes(rng, d, K, min_size)
    labels = np.repeat(np.arange(K), sizes)

    if isinstance(factor_counts, str):
        caps = np.minimum(sizes - 1, n - 1)
        counts = np.array([rng.integers(1, c + 1) for c in caps])
    else:
        counts = np.array(fixed)

    pool_size = min(n, d)
    if counts.max() > pool_size:
        raise InvalidSpec("more factors requested than the candidate pool holds")
    pool = rng.standard_normal((n, pool_size))
    # uniform direction on the sphere of radius sqrt(n): unit second moment per entry
    pool *= np.sqrt(n) / np.linalg.norm(pool, axis=0)
    factor_ids = np.concatenate(
        [rng.choice(pool_size, size=c, replace=False) for c in counts]
    )

    beta_h = np.sqrt(_draw_level(rng, common_loading_sq, d))
    if np.any(beta_h > 1):
        raise InvalidSpec("common loading beta_H^2 must be <= 1")
    gamma = _draw_level(rng, noise_var, d)
    if np.any(gamma < 0):
        raise InvalidSpec("noise variances must be nonnegative")

    D = int(counts.sum())
    offsets = np.concatenate([[0], np.cumsum(counts)])
    A = np.zeros((d, D))
    for i in range(d):
        k = labels[i]
        g = rng.standard_normal(counts[k])
        A[i, offsets[k]:offsets[k + 1]] = g * np.sqrt(1.0 - beta_h[i] ** 2) / np.linalg.norm(g)
    factor_cov = (factor_ids[:, None] == factor_ids[None, :]).astype(float)

    F_G = pool[:, factor_ids]
    F_H = rng.standard_normal(n)
    U = rng.standard_normal((n, d)) * np.sqrt(gamma)
    raw = F_G @ A.T + np.outer(F_H, beta_h) + U

    spec = BlockModelSpec(
        labels=labels,
        cluster_sizes=tuple(sizes),
        factor_counts=tuple(counts),
        loadings=A,
        factor_cov=factor_cov,
        noise_var=gamma,
        common_loading=beta_h,
        factor_ids=tuple(factor_ids),
        seed=master_seed,
    )
    partition = Partition(labels, K)
    if not standardized:
        return raw, partition, spec
    return standardize(raw), partition, spec


def population_covariance(spec: BlockModelSpec) -> CovarianceEstimate:
    """``A Sigma_F A^T + beta_H beta_H^T + Gamma``."""
    A = np.asarray(spec.loadings)
    S = np.asarray(spec.factor_cov)
    if A.shape[1] != S.shape[0]:
        raise InvalidSpec("loadings and factor covariance dimensions differ")
    sigma = A @ S @ A.T + np.outer(spec.common_loading, spec.common_loading)
    sigma[np.diag_indices_from(sigma)] += spec.noise_var
    return CovarianceEstimate(0.5 * (sigma + sigma.T), "population")


def covariance_from_factors(loadings, factor_cov, noise_var):
    """Plain ``A Sigma_F A^T + diag(noise_var)`` for hand-built examples."""
    A = np.asarray(loadings, dtype=float)
    sigma = A @ np.asarray(factor_cov, dtype=float) @ A.T
    sigma[np.diag_indices_from(sigma)] += np.broadcast_to(noise_var, sigma.shape[:1])
    return CovarianceEstimate(0.5 * (sigma + sigma.T), "population")


def population_nodewise(sigma) -> CoefficientMatrix:
    """Population nodewise least-squares coefficients.

    Column ``i`` regresses variable ``i`` on all others:
    ``b_{ji} = -Theta_{ji} / Theta_{ii}`` with ``Theta = Sigma^{-1}``.
    """
    S = check_symmetric(as_array(sigma), name="covariance")
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise SingularCovariance("covariance is not positive definite") from None
    if np.min(np.diag(L)) ** 2 <= 1e-14 * np.max(np.diag(S)):
        raise SingularCovariance("covariance is numerically singular")
    theta = np.linalg.inv(S)
    B = -theta / np.diag(theta)[None, :]
    np.fill_diagonal(B, 0.0)
    return CoefficientMatrix(B)


# ---------------------------------------------------------------- serialization


def write_panel_csv(panel, path, header_comment=None):
    """Write a panel as CSV: one header row of column ids, one row per observation."""
    values = as_array(panel)
    ids = getattr(panel, "column_ids", None) or [f"x{j}" for j in range(values.shape[1])]
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write(",".join(ids) + "\n")
        for row in values:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_panel_csv(path, standardize_columns=True):
    frame = pd.read_csv(path, comment="#", float_precision="round_trip")
    if standardize_columns:
        return standardize(frame.to_numpy(dtype=float), list(frame.columns))
    return frame


def write_matrix_csv(matrix, path, header_comment=None):
    """Row-major CSV of a square matrix without a header row."""
    M = as_array(matrix)
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        for row in M:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_matrix_csv(path):
    return np.loadtxt(path, delimiter=",", comments="#", ndmin=2)


def write_json(data, path):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_block_model(spec: BlockModelSpec, path, extra=None):
    data = {"spec": spec.to_dict(), "partition": spec.partition().to_dict()}
    if extra:
        data.update(extra)
    write_json(data, path)


def load_block_model(path):
    with open(path) as fh:
        data = json.load(fh)
    return BlockModelSpec.from_dict(data["spec"]), Partition.from_dict(data["partition"])
