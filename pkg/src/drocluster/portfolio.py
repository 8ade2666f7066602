"""Cluster-based stock selection, long-only minimum-variance allocation and
backtesting with a drawdown/ratio metric suite.

Conventions: simple daily returns, 252 trading days per year, zero
risk-free rate, VAMI base 1000.  A rebalance on day ``t`` uses data up to
and including ``t`` and its weights earn returns from ``t + 1`` on.
"""

import logging
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Dict, Optional, Sequence

import numpy as np
import pandas as pd

from ._validation import as_array, check_n_clusters, check_random_state
from .baselines import acc_cluster, cord_dissimilarity, kmedoids, one_minus_rho_squared
from .clustering import spectral_cluster, symmetrize
from .datamodel import CovarianceEstimate, Partition, canonical_labels, standardize
from .delta import select_delta
from .exceptions import (
    EmptyUniverse,
    InsufficientHistory,
    InvalidCovariance,
    InvalidCsv,
    InvalidInput,
    InvalidK,
)
from .solver import SolverOptions, admm_fit

logger = logging.getLogger(__name__)

TRADING_DAYS = 252
VAMI_BASE = 1000.0
SHORT_WINDOW = 250


# --------------------------------------------------------------------- types


@dataclass(frozen=True)
class ReturnPanel:
    """``T x d`` simple daily returns; NaN marks a missing observation."""

    dates: pd.DatetimeIndex
    tickers: tuple
    returns: np.ndarray
    missing_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        dates = pd.DatetimeIndex(self.dates)
        R = np.array(self.returns, dtype=float, copy=True)
        if R.ndim != 2 or R.shape != (len(dates), len(self.tickers)):
            raise InvalidInput(
                f"returns shape {R.shape} does not match {len(dates)} dates "
                f"x {len(self.tickers)} tickers"
            )
        if len(dates) > 1 and not np.all(np.diff(dates.asi8) > 0):
            raise InvalidInput("dates must be strictly increasing")
        if len(set(self.tickers)) != len(self.tickers):
            raise InvalidInput("duplicate tickers")
        if np.any(R[np.isfinite(R)] <= -1.0):
            raise InvalidInput("simple returns must exceed -1")
        mask = np.isnan(R) if self.missing_mask is None else np.asarray(self.missing_mask, bool)
        if mask.shape != R.shape:
            raise InvalidInput("missing mask shape mismatch")
        R.setflags(write=False)
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "tickers", tuple(str(t) for t in self.tickers))
        object.__setattr__(self, "returns", R)
        object.__setattr__(self, "missing_mask", mask)

    @property
    def T(self):
        return self.returns.shape[0]

    @property
    def d(self):
        return self.returns.shape[1]

    def column(self, ticker):
        return self.returns[:, self.tickers.index(ticker)]

    def select(self, tickers=None, rows=None):
        cols = (
            np.arange(self.d) if tickers is None
            else np.array([self.tickers.index(t) for t in tickers], dtype=int)
        )
        rows = slice(None) if rows is None else rows
        return ReturnPanel(
            self.dates[rows],
            tuple(self.tickers[j] for j in cols),
            self.returns[rows][:, cols],
            self.missing_mask[rows][:, cols],
        )

    def to_frame(self):
        return pd.DataFrame(self.returns, index=self.dates, columns=list(self.tickers))


@dataclass(frozen=True)
class ReturnFilters:
    """Universe filters applied at load time and at every rebalance.

    ``share_classes`` maps a ticker to a company key; among tickers with the
    same key only the one with the longest history is kept.
    """

    min_history: int = 1260
    max_missing: float = 0.05
    lookback: int = 500
    share_classes: Optional[Dict[str, str]] = None
    exclude: tuple = ()

    def __post_init__(self):
        if self.min_history < 0 or self.lookback < 2:
            raise InvalidInput("min_history must be >= 0 and lookback >= 2")
        if not 0.0 <= self.max_missing <= 1.0:
            raise InvalidInput("max_missing must lie in [0, 1]")


@dataclass(frozen=True)
class WeightVector:
    tickers: tuple
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float, copy=True)
        if w.shape != (len(self.tickers),):
            raise InvalidInput("one weight per ticker required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise InvalidInput("weights must be nonnegative and sum to 1")
        w.setflags(write=False)
        object.__setattr__(self, "tickers", tuple(self.tickers))
        object.__setattr__(self, "weights", w)

    def as_dict(self):
        return dict(zip(self.tickers, self.weights.tolist()))


@dataclass
class Rebalance:
    date: pd.Timestamp
    tickers: tuple
    weights: np.ndarray
    info: dict = field(default_factory=dict)


@dataclass
class BacktestLedger:
    dates: pd.DatetimeIndex
    portfolio_returns: np.ndarray
    rebalances: list
    vami: np.ndarray = None

    def __post_init__(self):
        self.portfolio_returns = np.asarray(self.portfolio_returns, dtype=float)
        if self.vami is None:
            self.vami = VAMI_BASE * np.cumprod(1.0 + self.portfolio_returns)

    def to_frame(self):
        return pd.DataFrame(
            {"portfolio_return": self.portfolio_returns, "vami": self.vami},
            index=pd.Index(self.dates, name="date"),
        )


@dataclass
class MetricsReport:
    ending_vami: float
    max_drawdown: float
    peak_to_valley: tuple
    recovery_days: Optional[int]
    sharpe: Optional[float]
    sortino: Optional[float]
    calmar: Optional[float]
    ann_volatility: float
    ann_downside_volatility: float
    ann_return: float
    correlation: Optional[float]
    beta: Optional[float]
    positive_periods: int
    negative_periods: int
    undefined: tuple = ()

    @property
    def total_periods(self):
        return self.positive_periods + self.negative_periods

    def to_dict(self):
        """Rows named as in the usual backtest summary table."""
        total = max(self.total_periods, 1)
        ptv = self.peak_to_valley
        return {
            "conventions": {"annualization": TRADING_DAYS, "risk_free_rate": 0.0,
                            "vami_base": VAMI_BASE},
            "Ending VAMI": self.ending_vami,
            "Max Drawdown": self.max_drawdown,
            "Peak-To-Valley": None if ptv is None else [str(ptv[0].date()), str(ptv[1].date())],
            "Recovery": self.recovery_days,
            "Sharpe Ratio": self.sharpe,
            "Sortino Ratio": self.sortino,
            "Calmar Ratio": self.calmar,
            "Ann. Volatility": self.ann_volatility,
            "Ann. Downside Volatility": self.ann_downside_volatility,
            "Correlation": self.correlation,
            "Beta": self.beta,
            "Annualized Return": self.ann_return,
            "Positive Periods": [self.positive_periods, self.positive_periods / total],
            "Negative Periods": [self.negative_periods, self.negative_periods / total],
            "undefined": list(self.undefined),
        }


# ------------------------------------------------------------------ ingestion


def _read_frame(path):
    try:
        frame = pd.read_csv(path, comment="#")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise InvalidCsv(f"cannot parse {path}: {exc}") from exc
    if frame.shape[1] < 2:
        raise InvalidCsv("expected a date column and at least one ticker column")
    try:
        dates = pd.to_datetime(frame.iloc[:, 0], format="ISO8601")
    except (ValueError, TypeError) as exc:
        raise InvalidCsv(f"unparseable dates: {exc}") from exc
    if dates.isna().any():
        raise InvalidCsv("missing dates")
    if not dates.is_monotonic_increasing or dates.duplicated().any():
        raise InvalidCsv("dates must be strictly increasing")
    values = frame.iloc[:, 1:].apply(pd.to_numeric, errors="coerce")
    bad = values.isna() & frame.iloc[:, 1:].notna()
    if bad.any().any():
        col = bad.any().idxmax()
        raise InvalidCsv(f"non-numeric entries in column {col!r}")
    values.index = pd.DatetimeIndex(dates)
    return values


def prices_to_returns(prices):
    """Simple returns after linear interpolation of interior price gaps.

    Leading and trailing gaps stay missing.
    """
    prices = pd.DataFrame(prices).astype(float)
    if (prices <= 0).any().any():
        raise InvalidCsv("prices must be positive")
    filled = prices.interpolate(method="linear", limit_area="inside")
    returns = filled / filled.shift(1) - 1.0
    return returns.iloc[1:]


def history_length(panel, end=None):
    """Days from each ticker's first observation through row ``end`` (inclusive)."""
    end = panel.T - 1 if end is None else end
    observed = ~panel.missing_mask[: end + 1]
    first = np.where(observed.any(axis=0), observed.argmax(axis=0), end + 1)
    return end + 1 - first


def eligible_universe(panel, end, filters):
    """Tickers passing the history, missing-data and share-class filters at row ``end``."""
    start = max(0, end + 1 - filters.lookback)
    window_missing = panel.missing_mask[start: end + 1].mean(axis=0)
    hist = history_length(panel, end)
    keep = (hist >= filters.min_history) & (window_missing <= filters.max_missing)
    if end + 1 - start < filters.lookback:
        keep &= False
    tickers = [t for t, k in zip(panel.tickers, keep) if k and t not in filters.exclude]
    if filters.share_classes:
        best = {}
        length = dict(zip(panel.tickers, hist))
        for t in tickers:
            key = filters.share_classes.get(t, t)
            cur = best.get(key)
            if cur is None or (length[t], cur) > (length[cur], t):
                best[key] = t
        kept = set(best.values())
        tickers = [t for t in tickers if t in kept]
    return tickers


def load_returns(path, input_kind="price", filters=None):
    """Read a CSV of prices or simple returns into a filtered ``ReturnPanel``.

    The first column holds ISO-8601 dates, every other column one ticker.
    With ``input_kind="price"`` interior gaps are linearly interpolated on
    the price path before differencing; with ``"return"`` missing returns
    are left missing.  Filters are evaluated at the last date.
    """
    frame = _read_frame(path)
    if input_kind == "price":
        missing = frame.isna().to_numpy()[1:]
        returns = prices_to_returns(frame)
    elif input_kind == "return":
        returns = frame
        missing = frame.isna().to_numpy()
    else:
        raise InvalidInput(f"input_kind must be 'price' or 'return', got {input_kind!r}")
    missing = missing | returns.isna().to_numpy()
    panel = ReturnPanel(returns.index, tuple(returns.columns), returns.to_numpy(), missing)
    if filters is None:
        return panel
    eligible = eligible_universe(panel, panel.T - 1, filters)
    keep = eligible + [t for t in filters.exclude if t in panel.tickers]
    if not eligible:
        raise EmptyUniverse("every ticker was removed by the filters")
    return panel.select([t for t in panel.tickers if t in keep])


def write_returns_csv(panel, path):
    frame = panel.to_frame()
    frame.index.name = "date"
    frame.to_csv(path, float_format="%.17g", date_format="%Y-%m-%d")


# --------------------------------------------------------------- clustering


def _clean_window(window):
    R = as_array(window.returns if isinstance(window, ReturnPanel) else window)
    return np.where(np.isfinite(R), R, 0.0)


def _sub_partition(values, members, K2):
    if K2 == 1:
        return np.zeros(members.size, dtype=int)
    if members.size <= K2 or members.size < 3:
        return np.arange(members.size)
    D = cord_dissimilarity(values[:, members])
    return acc_cluster(D, K2).labels


def hierarchical_cluster(window, K1, K2, *, alpha=0.05, M=1000, delta_method="wishart",
                         solver_options=None, seed=None, log_returns=True, info=None):
    """Two-level DRO-ACC partition of the window's columns.

    The top level clusters DRO coefficients spectrally into ``K1`` groups;
    each group is split into ``K2`` by ACC on its own cord dissimilarities.
    A group with at most ``K2`` members becomes singletons.

    Parameters
    ----------
    window : ReturnPanel or array of shape (n, d)
    K1, K2 : int
    seed : int, optional
        Seeds both the radius sampler and the spectral k-means.
    log_returns : bool
        Cluster ``log(1 + r)`` instead of ``r``.
    info : dict, optional
        Receives ``delta`` and the top-level partition.
    """
    X = _clean_window(window)
    n, d = X.shape
    K1 = check_n_clusters(K1, d)
    K2 = check_n_clusters(K2, d)
    if K1 * K2 > d:
        raise InvalidK(f"K1*K2 = {K1 * K2} exceeds {d} variables")
    if log_returns:
        X = np.log1p(X)
    panel = standardize(X)
    rng = check_random_state(seed)
    delta_seed, km_seed = (int(s) for s in rng.integers(2**31 - 1, size=2))
    if K1 == 1:
        top = Partition(np.zeros(d, dtype=int), 1)
        delta = None
    else:
        est = select_delta(panel, alpha=alpha, M=M, method=delta_method, seed=delta_seed)
        delta = est.delta
        coef, _ = admm_fit(panel, delta, solver_options or SolverOptions())
        top = spectral_cluster(symmetrize(coef), K1, seed=km_seed)
    labels = np.empty(d, dtype=np.int64)
    offset = 0
    for k in range(top.n_clusters):
        members = top.members(k)
        if members.size == 0:
            continue
        sub = _sub_partition(panel.values, members, K2)
        labels[members] = sub + offset
        offset += int(sub.max()) + 1
    if info is not None:
        info.update(delta=delta, top_labels=top.labels.tolist())
    return Partition(canonical_labels(labels))


def select_low_vol(window, partition, tickers=None):
    """The lowest-variance ticker of each cluster, ties by ticker name."""
    R = as_array(window.returns if isinstance(window, ReturnPanel) else window)
    if tickers is None:
        tickers = window.tickers if isinstance(window, ReturnPanel) else [
            f"x{j}" for j in range(R.shape[1])]
    labels = np.asarray(getattr(partition, "labels", partition))
    if labels.size != R.shape[1]:
        raise InvalidInput("partition does not cover the window's tickers")
    var = np.nanvar(R, axis=0, ddof=1)
    chosen = []
    for k in range(int(labels.max()) + 1):
        members = np.flatnonzero(labels == k)
        if members.size == 0:
            logger.warning("cluster %d is empty; skipped", k)
            continue
        best = min(members, key=lambda j: (var[j], tickers[j]))
        chosen.append(tickers[best])
    return chosen


# --------------------------------------------------------------- allocation


def project_simplex(v):
    """Euclidean projection onto ``{w >= 0, sum w = 1}``."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    r = np.flatnonzero(u - css / k > 0)[-1]
    return np.maximum(v - css[r] / (r + 1), 0.0)


def simplex_kkt_residual(S, w):
    """Optimality violation of ``w`` for ``min w^T S w`` on the simplex."""
    g = 2.0 * S @ w
    support = w > 0
    nu = g[support].mean()
    on = np.abs(g[support] - nu).max(initial=0.0)
    off = np.maximum(nu - g[~support], 0.0).max(initial=0.0)
    return float(max(on, off))


def _checked_covariance(cov):
    S = as_array(getattr(cov, "matrix", cov))
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise InvalidCovariance(f"covariance must be square, got {S.shape}")
    if not np.all(np.isfinite(S)):
        raise InvalidCovariance("covariance has non-finite entries")
    S = 0.5 * (S + S.T)
    scale = max(1.0, float(np.abs(S).max()))
    if np.linalg.eigvalsh(S).min() < -1e-8 * scale:
        raise InvalidCovariance("covariance is not positive semidefinite")
    return S


def _active_set_polish(S, w, tol):
    support = w > 1e-12
    for _ in range(4 * w.size):
        idx = np.flatnonzero(support)
        Ss = S[np.ix_(idx, idx)]
        ones = np.ones(idx.size)
        try:
            z = np.linalg.solve(Ss, ones)
        except np.linalg.LinAlgError:
            z = np.linalg.lstsq(Ss, ones, rcond=None)[0]
        if abs(z.sum()) < 1e-300:
            return None
        cand = np.zeros_like(w)
        cand[idx] = z / z.sum()
        if np.any(cand[idx] < 0):
            support[idx[cand[idx] < 0]] = False
            if not support.any():
                return None
            continue
        g = 2.0 * S @ cand
        nu = g[idx].mean()
        violators = np.flatnonzero(~support & (g < nu - tol))
        if violators.size == 0:
            return cand
        support[violators[np.argmin(g[violators])]] = True
    return None


def min_variance_weights(cov, tickers=None, tol=1e-9, max_iter=20000):
    """Long-only minimum-variance weights.

    Accelerated projected gradient on the simplex, then an exact solve on
    the detected support; the result satisfies the optimality conditions
    to ``tol``.
    """
    S = _checked_covariance(cov)
    k = S.shape[0]
    tickers = tuple(tickers) if tickers is not None else tuple(f"x{j}" for j in range(k))
    if k == 1:
        return WeightVector(tickers, np.ones(1))
    L = 2.0 * max(float(np.linalg.eigvalsh(S).max()), 1e-300)
    w = np.full(k, 1.0 / k)
    y, t = w.copy(), 1.0
    for it in range(max_iter):
        w_new = project_simplex(y - 2.0 * S @ y / L)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = w_new + (t - 1.0) / t_new * (w_new - w)
        w, t = w_new, t_new
        if it % 50 == 0 and simplex_kkt_residual(S, w) <= tol:
            break
    polished = _active_set_polish(S, w, tol)
    if polished is not None and w @ S @ w >= polished @ S @ polished - 1e-15:
        w = polished
    w = np.maximum(w, 0.0)
    w /= w.sum()
    return WeightVector(tickers, w)


def sample_covariance(window):
    R = as_array(window.returns if isinstance(window, ReturnPanel) else window)
    return CovarianceEstimate(np.atleast_2d(np.cov(R, rowvar=False, ddof=1)), "sample")


def common_window(window, tickers):
    """Rows of the window where every selected ticker is observed."""
    sub = window.select(tickers)
    rows = ~sub.missing_mask.any(axis=1) & np.all(np.isfinite(sub.returns), axis=1)
    first = int(np.argmax(rows)) if rows.any() else sub.T
    rows[:first] = False
    if rows.sum() < SHORT_WINDOW:
        logger.warning("allocation window has only %d common days", int(rows.sum()))
    return sub.returns[rows]


# ----------------------------------------------------------------- strategies


@dataclass
class ClusterStrategy:
    """Cluster, pick the least volatile name per cluster, weight by minimum variance.

    ``method`` is ``"dro-acc"`` (two-level), ``"acc"`` or ``"kmedoids"``
    (single level with ``K1 * K2`` clusters).
    """

    K1: int = 6
    K2: int = 6
    method: str = "dro-acc"
    alpha: float = 0.05
    M: int = 1000
    delta_method: str = "wishart"
    solver_options: Optional[SolverOptions] = None
    seed: Optional[int] = 0

    def __call__(self, window, when=None):
        d = window.d
        info = {"universe": d, "method": self.method}
        K = self.K1 * self.K2
        if d <= K:
            chosen = list(window.tickers)
            info["note"] = "universe no larger than cluster count; all names selected"
        else:
            X = _clean_window(window)
            rng = np.random.default_rng([self.seed or 0, int(when or 0)])
            step_seed = int(rng.integers(2**31 - 1))
            if self.method == "dro-acc":
                part = hierarchical_cluster(window, self.K1, self.K2, alpha=self.alpha,
                                            M=self.M, delta_method=self.delta_method,
                                            solver_options=self.solver_options,
                                            seed=step_seed, info=info)
            elif self.method == "acc":
                part = acc_cluster(cord_dissimilarity(np.log1p(X)), K)
            elif self.method == "kmedoids":
                part = kmedoids(one_minus_rho_squared(np.log1p(X)), K)
            else:
                raise InvalidInput(f"unknown method {self.method!r}")
            info["labels"] = part.labels.tolist()
            chosen = select_low_vol(window, part)
        data = common_window(window, chosen)
        weights = min_variance_weights(sample_covariance(data), chosen) if len(chosen) > 1 \
            else WeightVector(tuple(chosen), np.ones(1))
        info["allocation_days"] = int(data.shape[0])
        return weights, info


def fixed_weights(weights: Dict[str, float]):
    """Strategy that always returns the same weights."""
    tickers = tuple(weights)
    w = np.array([weights[t] for t in tickers], dtype=float)

    def strategy(window, when=None):
        return WeightVector(tickers, w), {}

    return strategy


# ------------------------------------------------------------------- backtest


def rebalance_rows(dates, schedule="annual", anchor_month=2, start_row=0):
    """Row indices of rebalance days at or after ``start_row``.

    ``schedule`` is ``"annual"`` (first trading day of ``anchor_month``),
    ``"quarterly"`` (first trading day of every third month from the anchor),
    ``"monthly"``, ``"daily"`` or a positive int (every N rows).
    """
    dates = pd.DatetimeIndex(dates)
    T = len(dates)
    if isinstance(schedule, (int, np.integer)) and not isinstance(schedule, bool):
        if schedule < 1:
            raise InvalidInput("rebalance interval must be >= 1")
        return list(range(start_row, T, int(schedule)))
    if schedule == "daily":
        return list(range(start_row, T))
    if schedule not in ("annual", "quarterly", "monthly"):
        raise InvalidInput(f"unknown schedule {schedule!r}")
    period = dates.year * 12 + dates.month - 1
    first_of_month = np.r_[True, period[1:] != period[:-1]]
    month = np.asarray(dates.month)
    if schedule == "annual":
        ok = month == anchor_month
    elif schedule == "quarterly":
        ok = (month - anchor_month) % 3 == 0
    else:
        ok = np.ones(T, dtype=bool)
    rows = np.flatnonzero(first_of_month & ok)
    return [int(r) for r in rows if r >= start_row]


def _drift(weights, r):
    grown = weights * (1.0 + r)
    total = grown.sum()
    return grown / total if total > 0 else weights


def backtest(panel, strategy: Callable = None, *, schedule="annual", anchor_month=2,
             filters=None, benchmark=None):
    """Run a rebalanced long-only backtest.

    At each rebalance row ``t`` the strategy sees only the last
    ``filters.lookback`` rows up to and including ``t``, restricted to the
    eligible universe; its weights are then held, drifting with returns,
    from ``t + 1`` until the next rebalance.  Missing returns count as zero.

    Returns
    -------
    ledger : BacktestLedger
    metrics : MetricsReport
    """
    filters = filters or ReturnFilters()
    if benchmark is not None:
        filters = ReturnFilters(filters.min_history, filters.max_missing, filters.lookback,
                                filters.share_classes, tuple(filters.exclude) + (benchmark,))
    strategy = strategy or ClusterStrategy()
    first_ok = filters.lookback - 1
    rows = rebalance_rows(panel.dates, schedule, anchor_month, start_row=first_ok)
    rows = [r for r in rows if r < panel.T - 1]
    if not rows:
        raise InsufficientHistory(
            f"no rebalance date with {filters.lookback} days of history before the last date"
        )
    R = np.where(np.isfinite(panel.returns), panel.returns, 0.0)
    col = {t: j for j, t in enumerate(panel.tickers)}
    rebalances = []
    port = np.zeros(panel.T - rows[0] - 1)
    bounds = rows[1:] + [panel.T - 1]
    for t, stop in zip(rows, bounds):
        universe = eligible_universe(panel, t, filters)
        if not universe:
            raise EmptyUniverse(f"no eligible tickers on {panel.dates[t].date()}")
        window = panel.select(universe, rows=slice(t + 1 - filters.lookback, t + 1))
        wv, info = strategy(window, when=t)
        rebalances.append(Rebalance(panel.dates[t], wv.tickers, wv.weights.copy(), info))
        idx = np.array([col[s] for s in wv.tickers], dtype=int)
        w = wv.weights.copy()
        for day in range(t + 1, stop + 1):
            r = R[day, idx]
            port[day - rows[0] - 1] = w @ r
            w = _drift(w, r)
    dates = panel.dates[rows[0] + 1:]
    ledger = BacktestLedger(dates, port, rebalances)
    bench = None
    if benchmark is not None:
        bench = np.nan_to_num(panel.column(benchmark)[rows[0] + 1:])
    return ledger, compute_metrics(ledger, bench)


# -------------------------------------------------------------------- metrics


def drawdown(vami, dates):
    """Max drawdown fraction, (peak date, trough date), recovery in calendar days."""
    path = np.concatenate([[VAMI_BASE], np.asarray(vami, dtype=float)])
    peaks = np.maximum.accumulate(path)
    dd = 1.0 - path / peaks
    trough = int(np.argmax(dd))
    mdd = float(dd[trough])
    if mdd <= 0:
        return 0.0, None, None
    peak = int(np.flatnonzero(path[: trough + 1] == peaks[trough])[-1])
    # index 0 is the base level, dated one step before the first return
    day = lambda i: dates[max(i - 1, 0)]
    regained = np.flatnonzero(path[trough:] >= peaks[trough])
    recovery = None
    if regained.size:
        recovery = int((day(trough + regained[0]) - day(trough)).days)
    return mdd, (day(peak), day(trough)), recovery


def _ratio(num, den, name, undefined):
    if den <= 0 or not np.isfinite(den):
        undefined.append(name)
        return None
    return float(num / den)


def compute_metrics(ledger, benchmark=None, dates=None):
    """Performance summary of a daily return stream.

    ``ledger`` is a ``BacktestLedger`` or an array of daily returns (then
    ``dates`` may be given).  Annualized return is geometric; volatility is
    the sample standard deviation times ``sqrt(252)``; downside volatility
    uses negative days only.  Zero-return days count as negative periods.
    Ratios with a zero denominator are reported as None and listed in
    ``undefined``.
    """
    if isinstance(ledger, BacktestLedger):
        r = ledger.portfolio_returns
        dates = ledger.dates
    else:
        r = np.asarray(ledger, dtype=float)
        if dates is None:
            dates = pd.bdate_range("2000-01-03", periods=r.size)
    dates = pd.DatetimeIndex(dates)
    T = r.size
    if T == 0:
        raise InvalidInput("empty return stream")
    vami = VAMI_BASE * np.cumprod(1.0 + r)
    ann_return = float((vami[-1] / VAMI_BASE) ** (TRADING_DAYS / T) - 1.0)
    ann_vol = float(np.std(r, ddof=1) * np.sqrt(TRADING_DAYS)) if T > 1 else 0.0
    neg = r[r < 0]
    ann_down = float(np.std(neg, ddof=1) * np.sqrt(TRADING_DAYS)) if neg.size > 1 else 0.0
    mdd, ptv, recovery = drawdown(vami, dates)
    undefined = []
    sharpe = _ratio(ann_return, ann_vol, "sharpe", undefined)
    sortino = _ratio(ann_return, ann_down, "sortino", undefined)
    calmar = _ratio(ann_return, mdd, "calmar", undefined)
    corr = beta = None
    if benchmark is not None:
        b = np.asarray(benchmark, dtype=float)
        if b.shape != r.shape:
            raise InvalidInput("benchmark and portfolio returns are not aligned")
        var_b = np.var(b, ddof=1) if T > 1 else 0.0
        if var_b > 0 and ann_vol > 0:
            cov = np.cov(r, b, ddof=1)[0, 1]
            beta = float(cov / var_b)
            corr = float(np.corrcoef(r, b)[0, 1])
        else:
            undefined.extend(["correlation", "beta"])
    positive = int(np.sum(r > 0))
    return MetricsReport(
        ending_vami=float(vami[-1]),
        max_drawdown=mdd,
        peak_to_valley=ptv,
        recovery_days=recovery,
        sharpe=sharpe,
        sortino=sortino,
        calmar=calmar,
        ann_volatility=ann_vol,
        ann_downside_volatility=ann_down,
        ann_return=ann_return,
        correlation=corr,
        beta=beta,
        positive_periods=positive,
        negative_periods=T - positive,
        undefined=tuple(undefined),
    )


# ------------------------------------------------------------ synthetic data


def synthetic_prices(n_days=1500, d=60, K=6, *, seed=0, start="2005-01-03",
                     daily_vol=(0.01, 0.025), drift=0.0003, missing_rate=0.0,
                     benchmark="BENCH"):
    """Price panel from a clustered factor model, plus an equal-weight benchmark.

    Each cluster shares one sector factor; all names load on a market
    factor.  Returns a DataFrame indexed by business days.
    """
    rng = check_random_state(seed)
    dates = pd.bdate_range(start, periods=n_days + 1)
    sizes = np.bincount(rng.integers(0, K, size=d), minlength=K)
    while np.any(sizes < 2):
        sizes = np.bincount(rng.integers(0, K, size=d), minlength=K)
    labels = np.repeat(np.arange(K), sizes)
    vol = rng.uniform(*daily_vol, size=d)
    market = rng.standard_normal(n_days)
    sector = rng.standard_normal((n_days, K))
    idio = rng.standard_normal((n_days, d))
    beta_m = rng.uniform(0.3, 0.6, size=d)
    beta_s = rng.uniform(0.5, 0.8, size=d)
    resid = np.sqrt(np.maximum(1.0 - beta_m**2 - beta_s**2, 0.05))
    z = market[:, None] * beta_m + sector[:, labels] * beta_s + idio * resid
    returns = drift + vol * z
    returns = np.maximum(returns, -0.5)
    prices = 100.0 * np.vstack([np.ones(d), np.cumprod(1.0 + returns, axis=0)])
    if missing_rate > 0:
        holes = rng.random(prices.shape) < missing_rate
        holes[[0, -1]] = False
        prices[holes] = np.nan
    tickers = [f"S{k}_{i:03d}" for i, k in enumerate(labels)]
    frame = pd.DataFrame(prices, index=dates, columns=tickers)
    if benchmark:
        frame[benchmark] = 100.0 * np.r_[1.0, np.cumprod(1.0 + returns.mean(axis=1))]
    frame.index.name = "date"
    return frame


def bundled_panel_path():
    """Path of the synthetic price panel shipped with the package."""
    return resources.files("drocluster").joinpath("data/synthetic_prices.csv")
