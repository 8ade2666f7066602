"""Input validation helpers shared by the functional API and the estimators."""

import numbers

import numpy as np

from .exceptions import InvalidData, InvalidInput, InvalidK


def as_array(obj):
    """Return the ndarray behind one of the package's matrix wrappers."""
    values = getattr(obj, "values", obj)
    return np.asarray(values, dtype=float)


def check_matrix(X, *, name="X", min_rows=1, min_cols=1):
    X = as_array(X)
    if X.ndim != 2:
        raise InvalidData(f"{name} must be 2-dimensional, got shape {X.shape}")
    if X.shape[0] < min_rows or X.shape[1] < min_cols:
        raise InvalidData(
            f"{name} needs at least {min_rows} rows and {min_cols} columns, "
            f"got shape {X.shape}"
        )
    if not np.all(np.isfinite(X)):
        raise InvalidData(f"{name} contains non-finite entries")
    return X


def check_square(M, *, name="matrix"):
    M = check_matrix(M, name=name)
    if M.shape[0] != M.shape[1]:
        raise InvalidInput(f"{name} must be square, got shape {M.shape}")
    return M


def check_symmetric(M, *, name="matrix", tol=1e-10):
    M = check_square(M, name=name)
    scale = max(1.0, float(np.max(np.abs(M))))
    if np.max(np.abs(M - M.T)) > tol * scale:
        raise InvalidInput(f"{name} is not symmetric")
    return M


def check_n_clusters(K, d):
    if not isinstance(K, numbers.Integral) or isinstance(K, bool):
        raise InvalidK(f"number of clusters must be an integer, got {K!r}")
    if K < 1 or K > d:
        raise InvalidK(f"number of clusters must lie in [1, {d}], got {K}")
    return int(K)


def check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise InvalidInput(f"alpha must lie in (0, 1), got {alpha}")
    return float(alpha)


def check_random_state(seed):
    """Turn ``None``/int/Generator into a ``numpy.random.Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def seed_to_int(seed):
    """Reduce a seed-like to an int usable by sklearn's ``random_state``."""
    if seed is None or isinstance(seed, numbers.Integral):
        return seed
    if isinstance(seed, np.random.Generator):
        return int(seed.integers(2**31 - 1))
    raise InvalidInput(f"unsupported seed {seed!r}")
