"""Similarity graphs from regression coefficients, spectral clustering, and
the adjusted mutual information score."""

import json
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import gammaln
from sklearn.cluster import KMeans

from ._validation import as_array, check_n_clusters, check_symmetric, seed_to_int
from .datamodel import Partition, canonical_labels, write_matrix_csv
from .exceptions import InvalidInput, NumericalFailure

ISOLATION_FLOOR = 1e-12


@dataclass(frozen=True)
class SimilarityMatrix:
    """Symmetric nonnegative affinity with a zero diagonal."""

    values: np.ndarray

    def __post_init__(self):
        C = check_symmetric(self.values, name="similarity", tol=1e-12)
        if np.any(C < 0):
            raise InvalidInput("similarities must be nonnegative")
        C = 0.5 * (C + C.T)
        np.fill_diagonal(C, 0.0)
        C.setflags(write=False)
        object.__setattr__(self, "values", C)

    @property
    def d(self):
        return self.values.shape[0]

    def for_plot(self, fill=2.0):
        """Copy with the diagonal set to ``fill`` (heatmap convention)."""
        C = self.values.copy()
        np.fill_diagonal(C, fill)
        return C


def symmetrize(B):
    """``C = |B| + |B|^T``."""
    B = as_array(B)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise InvalidInput(f"B must be square, got shape {B.shape}")
    A = np.abs(B)
    C = A + A.T
    np.fill_diagonal(C, 0.0)
    return SimilarityMatrix(C)


def _floor_isolated(C):
    isolated = ~np.any(C > 0, axis=1)
    if np.any(isolated):
        C = C.copy()
        C[isolated, :] += ISOLATION_FLOOR
        C[:, isolated] += ISOLATION_FLOOR
        np.fill_diagonal(C, 0.0)
    return C


def spectral_embedding(C, K):
    """Rows of the top-``K`` eigenvectors of ``D^{-1/2} C D^{-1/2}``, unit-normalized.

    These are the bottom-``K`` eigenvectors of the symmetric normalized
    Laplacian ``I - D^{-1/2} C D^{-1/2}``.
    """
    C = _floor_isolated(as_array(C))
    d = C.shape[0]
    inv_sqrt = 1.0 / np.sqrt(C.sum(axis=1))
    N = inv_sqrt[:, None] * C * inv_sqrt[None, :]
    try:
        _, vecs = linalg.eigh(N, subset_by_index=[d - K, d - 1])
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalFailure(f"eigendecomposition failed: {exc}") from exc
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    return vecs / np.where(norms > 0, norms, 1.0)


def spectral_cluster(C, K, seed=None, n_init=10):
    """Normalized spectral clustering of the ``d`` nodes of ``C`` into ``K`` groups.

    Parameters
    ----------
    C : SimilarityMatrix or array of shape (d, d)
    K : int
    seed : int, optional
        Seeds the k-means++ restarts; the result is deterministic given
        ``(C, K, seed)``.
    n_init : int
        Number of k-means restarts; the lowest-inertia run is kept.
    """
    if not isinstance(C, SimilarityMatrix):
        C = SimilarityMatrix(as_array(C))
    d = C.d
    K = check_n_clusters(K, d)
    if K == 1:
        return Partition(np.zeros(d, dtype=int), 1)
    if K == d:
        return Partition(np.arange(d), d)
    emb = spectral_embedding(C.values, K)
    km = KMeans(n_clusters=K, init="k-means++", n_init=n_init,
                random_state=seed_to_int(seed))
    labels = km.fit_predict(emb)
    return Partition(canonical_labels(labels), int(np.unique(labels).size))


# ----------------------------------------------------------------------- AMI


def contingency(p, q):
    a = np.unique(np.asarray(p), return_inverse=True)[1]
    b = np.unique(np.asarray(q), return_inverse=True)[1]
    table = np.zeros((a.max() + 1, b.max() + 1), dtype=np.int64)
    np.add.at(table, (a, b), 1)
    return table


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def mutual_information(p, q):
    table = contingency(p, q)
    n = table.sum()
    a, b = table.sum(axis=1), table.sum(axis=0)
    nz = table > 0
    nij = table[nz]
    outer = np.outer(a, b)[nz]
    return float(np.sum(nij / n * (np.log(nij) + np.log(n) - np.log(outer))))


def expected_mutual_information(a, b):
    """Expected MI of two labelings with marginals ``a`` and ``b`` under
    random permutation (hypergeometric cell counts)."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    n = int(a.sum())
    nij = np.arange(1, max(a.max(), b.max()) + 1)
    log_n = np.log(n)
    gln_a, gln_b = gammaln(a + 1), gammaln(b + 1)
    gln_na, gln_nb = gammaln(n - a + 1), gammaln(n - b + 1)
    gln_n = gammaln(n + 1)
    emi = 0.0
    for i, ai in enumerate(a):
        for j, bj in enumerate(b):
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            if lo > hi:
                continue
            k = nij[lo - 1:hi]
            term = k / n * (np.log(k) + log_n - np.log(ai) - np.log(bj))
            logp = (gln_a[i] + gln_b[j] + gln_na[i] + gln_nb[j] - gln_n
                    - gammaln(k + 1) - gammaln(ai - k + 1) - gammaln(bj - k + 1)
                    - gammaln(n - ai - bj + k + 1))
            emi += float(np.sum(term * np.exp(logp)))
    return emi


def ami(p, q):
    """Adjusted mutual information with arithmetic-mean normalization.

    ``(MI - E[MI]) / (mean(H(p), H(q)) - E[MI])``.  When the denominator
    vanishes (both labelings trivial) the score is 1 if the partitions
    agree up to relabeling and 0 otherwise.
    """
    p = np.asarray(getattr(p, "labels", p))
    q = np.asarray(getattr(q, "labels", q))
    if p.shape != q.shape or p.ndim != 1:
        raise InvalidInput(f"partitions differ in length: {p.shape} vs {q.shape}")
    if p.size == 0:
        raise InvalidInput("empty partitions")
    table = contingency(p, q)
    n = p.size
    a, b = table.sum(axis=1), table.sum(axis=0)
    h_p, h_q = _entropy(a, n), _entropy(b, n)
    mi = mutual_information(p, q)
    emi = expected_mutual_information(a, b)
    denom = 0.5 * (h_p + h_q) - emi
    same = np.array_equal(canonical_labels(p), canonical_labels(q))
    if abs(denom) < 1e-15:
        return 1.0 if same else 0.0
    if same:
        return 1.0
    return float((mi - emi) / denom)


# -------------------------------------------------------------------- export


def cluster_ordering(partition):
    """Variable order grouping clusters together (stable within clusters)."""
    labels = np.asarray(getattr(partition, "labels", partition))
    return np.argsort(labels, kind="stable")


def export_heatmap(C, path, partitions=None, column_ids=None):
    """Write ``C`` with a diagonal of 2 for plotting, plus a JSON sidecar of
    orderings (one per named partition)."""
    if not isinstance(C, SimilarityMatrix):
        C = SimilarityMatrix(as_array(C))
    write_matrix_csv(C.for_plot(2.0), path)
    sidecar = {"diagonal_fill": 2.0, "orderings": {}}
    if column_ids is not None:
        sidecar["column_ids"] = [str(c) for c in column_ids]
    for name, part in (partitions or {}).items():
        sidecar["orderings"][name] = cluster_ordering(part).tolist()
    side_path = str(path) + ".orderings.json"
    with open(side_path, "w") as fh:
        json.dump(sidecar, fh, indent=2)
    return side_path
