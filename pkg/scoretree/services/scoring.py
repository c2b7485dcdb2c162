"""
Empirical predictive distributions and the scoring-rule kernels evaluated on them.

Every score is negatively oriented. Means and variances of an Ecdf use the
population convention (divide by n).
"""
import logging
import math
from typing import Iterable, Union

import numpy as np

from scoretree.core.errors import EmptySampleError, InvalidParameterError, NonFiniteValueError
from scoretree.schemas.scoring import ScoreKind, ScoreSummary, ScoringRule

logger = logging.getLogger(__name__)

DEFAULT_VARIANCE_FLOOR = 1e-12
RELATIVE_VARIANCE_FLOOR = 1e-9

ArrayLike = Union[np.ndarray, Iterable[float]]


class Ecdf:
    """
    Sorted response samples acting as a nonparametric predictive distribution.
    Immutable once built; share freely.
    """
    __slots__ = ("samples", "n", "mean", "variance", "_prefix", "_half_spread")

    def __init__(self, sorted_samples: np.ndarray):
        samples = np.array(sorted_samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 1:
            raise InvalidParameterError(f"an Ecdf needs a non-empty 1-d sample array, got shape {samples.shape}")
        samples.setflags(write=False)
        self.samples = samples
        self.n = int(samples.size)
        self.mean = float(samples.mean())
        self.variance = float(np.mean((samples - self.mean) ** 2))
        prefix = np.concatenate(([0.0], np.cumsum(samples)))
        prefix.setflags(write=False)
        self._prefix = prefix
        # 0.5 * E|Z - Z'| = (1/n^2) * sum_i (2i - n - 1) z_(i)
        ranks = np.arange(1, self.n + 1, dtype=np.float64)
        self._half_spread = float(np.dot(2.0 * ranks - self.n - 1.0, samples) / self.n ** 2)

    def cdf(self, z: float) -> float:
        return float(np.searchsorted(self.samples, z, side="right")) / self.n

    def effective_variance(self, variance_floor: float = DEFAULT_VARIANCE_FLOOR) -> float:
        return max(self.variance, variance_floor)

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Ecdf):
            return NotImplemented
        return np.array_equal(self.samples, other.samples)

    def __hash__(self) -> int:
        return hash(self.samples.tobytes())

    def __repr__(self) -> str:
        return f"Ecdf(n={self.n}, mean={self.mean:.6g})"


def _finite_array(values: ArrayLike) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise EmptySampleError()
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValueError("sample set contains a non-finite value")
    return arr


def ecdf_from_samples(values: ArrayLike) -> Ecdf:
    """Builds an Ecdf; duplicates are kept."""
    return Ecdf(np.sort(_finite_array(values), kind="stable"))


def _inf_rank(p: float, n: int) -> int:
    """Smallest k in 1..n with k/n >= p, using the same float comparison as cdf(z) >= p."""
    k = min(max(int(math.ceil(p * n)), 1), n)
    while k > 1 and (k - 1) / n >= p:
        k -= 1
    while k < n and k / n < p:
        k += 1
    return k


def _check_probability(p: float) -> None:
    if not 0.0 < p <= 1.0:
        raise InvalidParameterError(f"quantile level must satisfy 0 < p <= 1, got {p}")


def sorted_quantile(sorted_values: np.ndarray, p: float) -> float:
    return float(sorted_values[_inf_rank(p, sorted_values.size) - 1])


def quantile(ecdf: Ecdf, p: float) -> float:
    """q_F(p) = inf{z : p <= F(z)}; p = 1 gives the maximum sample."""
    _check_probability(p)
    return sorted_quantile(ecdf.samples, p)


# --- Per-observation scores ---

def crps_naive(f: Ecdf, y: float) -> float:
    """E|Z - y| - 0.5 E|Z - Z'| by brute force over all sample pairs."""
    z = f.samples
    first = np.mean(np.abs(z - y))
    second = 0.5 * np.mean(np.abs(z[:, None] - z[None, :]))
    return float(first - second)


def crps_fast(f: Ecdf, y: float) -> float:
    """
    Single pass over the sorted samples:
    (2/n^2) * sum_i (z_(i) - y) * (n * I(y < z_(i)) - i + 1/2).
    """
    z = f.samples
    n = f.n
    ranks = np.arange(1, n + 1, dtype=np.float64)
    terms = (z - y) * (n * (y < z) - ranks + 0.5)
    return float(2.0 * terms.sum() / n ** 2)


def _crps_many(f: Ecdf, ys: np.ndarray) -> np.ndarray:
    n = f.n
    k = np.searchsorted(f.samples, ys, side="right")
    below = k * ys - f._prefix[k]
    above = (f._prefix[n] - f._prefix[k]) - (n - k) * ys
    return (below + above) / n - f._half_spread


def _interval_bounds(f_samples: np.ndarray, rule: ScoringRule) -> tuple:
    alpha = rule.alpha
    if rule.kind is ScoreKind.IS1:
        return None, sorted_quantile(f_samples, 1.0 - alpha)
    return sorted_quantile(f_samples, alpha / 2.0), sorted_quantile(f_samples, 1.0 - alpha / 2.0)


def score_many(
    rule: ScoringRule,
    f: Ecdf,
    ys: ArrayLike,
    variance_floor: float = DEFAULT_VARIANCE_FLOOR,
) -> np.ndarray:
    """Scores one predictive distribution against many observations."""
    ys = np.asarray(ys, dtype=np.float64).ravel()
    if ys.size and not np.all(np.isfinite(ys)):
        raise NonFiniteValueError("observation is not finite")

    if rule.kind is ScoreKind.SSE:
        return (f.mean - ys) ** 2
    if rule.kind is ScoreKind.DSS:
        var = f.effective_variance(variance_floor)
        if f.variance < variance_floor:
            logger.debug("DSS variance floor %.3g engaged for %r", variance_floor, f)
        return (f.mean - ys) ** 2 / var + math.log(var)
    if rule.kind is ScoreKind.CRPS:
        return _crps_many(f, ys)

    lower, upper = _interval_bounds(f.samples, rule)
    if rule.kind is ScoreKind.IS1:
        return upper + np.maximum(ys - upper, 0.0) / rule.alpha
    penalty = np.maximum(lower - ys, 0.0) + np.maximum(ys - upper, 0.0)
    return (upper - lower) + (2.0 / rule.alpha) * penalty


def score(rule: ScoringRule, f: Ecdf, y: float, variance_floor: float = DEFAULT_VARIANCE_FLOOR) -> float:
    if not math.isfinite(y):
        raise NonFiniteValueError(f"observation is not finite: {y}")
    if rule.kind is ScoreKind.CRPS:
        return crps_fast(f, y)
    return float(score_many(rule, f, np.array([y]), variance_floor)[0])


# --- Node totals ---

def sorted_total(rule: ScoringRule, values: np.ndarray, variance_floor: float = DEFAULT_VARIANCE_FLOOR) -> float:
    """
    sum_i S(F_hat, y_i) where F_hat is built from `values` itself. `values`
    must already be sorted ascending and non-empty; this is the split-search
    hot path and skips validation.
    """
    n = values.size
    if rule.kind is ScoreKind.SSE:
        return float(np.sum((values - values.mean()) ** 2))
    if rule.kind is ScoreKind.DSS:
        var = float(np.mean((values - values.mean()) ** 2))
        eff = max(var, variance_floor)
        return n * var / eff + n * math.log(eff)
    if rule.kind is ScoreKind.CRPS:
        ranks = np.arange(1, n + 1, dtype=np.float64)
        return float(np.dot(2.0 * ranks - n - 1.0, values) / n)

    lower, upper = _interval_bounds(values, rule)
    if rule.kind is ScoreKind.IS1:
        return n * upper + float(np.sum(np.maximum(values - upper, 0.0))) / rule.alpha
    penalty = float(np.sum(np.maximum(lower - values, 0.0)) + np.sum(np.maximum(values - upper, 0.0)))
    return n * (upper - lower) + (2.0 / rule.alpha) * penalty


def node_total_score(
    rule: ScoringRule,
    samples: ArrayLike,
    variance_floor: float = DEFAULT_VARIANCE_FLOOR,
) -> ScoreSummary:
    values = np.sort(_finite_array(samples), kind="stable")
    return ScoreSummary.from_total(sorted_total(rule, values, variance_floor), values.size)


def variance_floor_for(root_values: ArrayLike) -> float:
    """DSS variance floor: 1e-9 of the root response variance, or 1e-12 for a constant root."""
    values = _finite_array(root_values)
    var = float(np.mean((values - values.mean()) ** 2))
    if var > 0.0:
        return RELATIVE_VARIANCE_FLOOR * var
    return DEFAULT_VARIANCE_FLOOR


def dkw_min_node_size(epsilon: float, alpha: float) -> int:
    """Smallest N with P(sup|F_hat - F| > epsilon) <= alpha by the DKW inequality."""
    if not 0.0 < epsilon < 1.0:
        raise InvalidParameterError(f"epsilon must be in (0, 1), got {epsilon}")
    if not 0.0 < alpha < 1.0:
        raise InvalidParameterError(f"alpha must be in (0, 1), got {alpha}")
    return int(math.ceil((math.log(2.0) - math.log(alpha)) / (2.0 * epsilon ** 2)))
