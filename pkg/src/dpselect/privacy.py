"""Sensitivity computations, noise mechanisms, and release densities.

Batch releases add calibrated noise to one aggregated statistic:

* ``gaussian`` / ``laplace`` pair with the ``mean`` aggregator; the noise
  scale is (per-record range) / (n * epsilon).  For the Gaussian mechanism
  epsilon acts as an inverse noise multiplier, so no delta enters the scale.
* ``laplace_smooth`` pairs with ``max``/``median``: Laplace noise scaled by
  the data's smooth sensitivity divided by alpha = epsilon/2, with smoothing
  rate beta = epsilon / (2 log(2/delta)).

Sequential releases perturb each per-record value with scale
(per-record range) / epsilon, or flip bits (``randomized_response``) keeping
each with probability exp(epsilon)/(exp(epsilon)+1).

epsilon = inf always means an exact release.

The smooth sensitivity of the max and of the (lower-middle) median are
computed by the usual order-statistic envelopes: with s_(1) <= ... <= s_(n)
in [0, upper], s_(j) = 0 for j <= 0 and s_(j) = upper for j > n,

* max:    b_k = max(upper - s_(n-k), s_(n) - s_(n-k-1))
* median: b_k = max over i = 0..k+1 of  s_(m+i) - s_(m+i-k-1),  m = ceil(n/2)

and the smooth sensitivity is max_k exp(-beta k) b_k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from dpselect.core import RngLike, as_generator
from dpselect.models import StatisticSpec

__all__ = [
    "Mechanism",
    "Release",
    "statistic_range",
    "global_sensitivity",
    "local_sensitivity_max",
    "local_sensitivity_median",
    "smooth_sensitivity_max",
    "smooth_sensitivity_median",
    "smoothing_rate",
    "batch_noise_scale",
    "release_batch",
    "release_sequential",
    "randomized_response",
    "release_log_density_batch",
    "release_log_density_sequential",
]

_KINDS = ("gaussian", "laplace", "laplace_smooth", "randomized_response")


@dataclass(frozen=True)
class Mechanism:
    """Noise mechanism: kind, privacy level epsilon, and optional delta.

    ``delta=None`` means "resolve to 1/n^2 at release time" for
    ``laplace_smooth`` (the only kind that uses it).
    """

    kind: str
    epsilon: float
    delta: Optional[float] = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown mechanism kind {self.kind!r}; expected one of {_KINDS}")
        if math.isnan(self.epsilon):
            raise ValueError("epsilon must be positive or inf")
        if self.kind == "randomized_response":
            if self.epsilon < 0:
                raise ValueError("epsilon must be non-negative for randomized response")
        elif not self.epsilon > 0:
            raise ValueError("epsilon must be positive or inf")
        if self.delta is not None and not 0 <= self.delta < 1:
            raise ValueError("delta must lie in [0, 1)")
        if self.kind == "laplace_smooth" and self.delta == 0:
            raise ValueError("laplace_smooth requires delta > 0 (or None for 1/n^2)")

    def resolved_delta(self, n: int) -> float:
        if self.delta is not None:
            return self.delta
        return 1.0 / (n * n)


@dataclass(frozen=True)
class Release:
    """One private release: the value(s), and everything used to produce them."""

    mode: str  # 'batch' | 'sequential'
    value: Union[float, np.ndarray]
    statistic: StatisticSpec
    mechanism: Mechanism
    n: int
    noise_scale: Union[float, np.ndarray]


def statistic_range(statistic: StatisticSpec, support) -> tuple:
    """Range of one per-record value s(x) over the clamped support."""
    lo, hi = support
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError("per-record statistic is unbounded on an infinite support")
    a = statistic.power
    if statistic.per_record == "abs_power":
        bound = max(abs(lo), abs(hi))
        s_lo = 0.0 if lo <= 0 <= hi else min(abs(lo), abs(hi)) ** a
        return (s_lo, bound**a)
    if statistic.per_record == "signed_power":
        return (math.copysign(abs(lo) ** a, lo), math.copysign(abs(hi) ** a, hi))
    return (lo, hi)  # identity


def global_sensitivity(statistic: StatisticSpec, support, n: Optional[int] = None) -> float:
    """Worst-case change of the aggregated statistic under one record change."""
    s_lo, s_hi = statistic_range(statistic, support)
    width = s_hi - s_lo
    if statistic.aggregator == "mean":
        if n is None:
            raise ValueError("the mean aggregator needs n to scale its sensitivity")
        return width / n
    return width  # max, median, and per-record (sequential) all move by the range


def _sorted_rows(s, name: str) -> np.ndarray:
    arr = np.asarray(s, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] == 0:
        raise ValueError(f"{name} expects a non-empty dataset or a stack of them")
    if np.any(arr[:, 1:] < arr[:, :-1]):
        raise ValueError(f"{name} expects per-record values sorted ascending")
    return arr


def _check_bounds(arr: np.ndarray, upper: float):
    if not upper > 0:
        raise ValueError("upper bound on the statistic must be positive")
    if np.any(arr < 0) or np.any(arr > upper):
        raise ValueError("per-record values must lie in [0, upper]")


def _decay(beta: float, n: int) -> np.ndarray:
    if beta < 0 or math.isnan(beta):
        raise ValueError("beta must be non-negative")
    k = np.arange(n + 1, dtype=float)
    if math.isinf(beta):
        w = np.zeros(n + 1)
        w[0] = 1.0
        return w
    return np.exp(-beta * k)


def _max_envelopes(rows: np.ndarray, upper: float) -> np.ndarray:
    """b_k for the max statistic, k = 0..n; rows (M, n) sorted -> (M, n+1)."""
    M, n = rows.shape
    pad = np.concatenate([np.zeros((M, 2)), rows], axis=1)  # position j+1 holds s_(j)
    k = np.arange(n + 1)
    left = upper - pad[:, n + 1 - k]            # upper - s_(n-k)
    right = rows[:, -1:] - pad[:, n - k]        # s_(n) - s_(n-k-1)
    return np.maximum(left, right)


_MEDIAN_INDEX_CACHE: dict = {}


def _median_index_arrays(n: int):
    """Flattened (j1, j2) pairs and segment starts for the median envelopes."""
    if n not in _MEDIAN_INDEX_CACHE:
        m = (n + 1) // 2  # 1-based lower-middle
        idx1, idx2, starts = [], [], []
        for k in range(n + 1):
            starts.append(len(idx1))
            for i in range(k + 2):
                idx1.append(m + i)
                idx2.append(m + i - k - 1)
        _MEDIAN_INDEX_CACHE[n] = (
            np.array(idx1), np.array(idx2), np.array(starts)
        )
    return _MEDIAN_INDEX_CACHE[n]


def _median_envelopes(rows: np.ndarray, upper: float) -> np.ndarray:
    """b_k for the lower-middle median, k = 0..n; rows (M, n) sorted."""
    M, n = rows.shape
    idx1, idx2, starts = _median_index_arrays(n)
    # padded row: positions 0..n+2 hold s_(j) for j = j_min..j_max with
    # out-of-range values 0 below and upper above
    pad_lo = n + 2  # enough zeros that any j <= 0 lands inside
    padded = np.concatenate(
        [np.zeros((M, pad_lo)), rows, np.full((M, n + 2), upper)], axis=1
    )
    off = pad_lo - 1  # 1-based j -> column off + j
    diffs = padded[:, off + idx1] - padded[:, off + idx2]
    return np.maximum.reduceat(diffs, starts, axis=1)


def local_sensitivity_max(sorted_s, upper: float) -> Union[float, np.ndarray]:
    """Local sensitivity of the max under one record change."""
    rows = _sorted_rows(sorted_s, "local_sensitivity_max")
    _check_bounds(rows, upper)
    out = _max_envelopes(rows, upper)[:, 0]
    return float(out[0]) if np.ndim(sorted_s) == 1 else out


def local_sensitivity_median(sorted_s, upper: float) -> Union[float, np.ndarray]:
    """Local sensitivity of the lower-middle median under one record change."""
    rows = _sorted_rows(sorted_s, "local_sensitivity_median")
    _check_bounds(rows, upper)
    out = _median_envelopes(rows, upper)[:, 0]
    return float(out[0]) if np.ndim(sorted_s) == 1 else out


def smooth_sensitivity_max(sorted_s, upper: float, beta: float):
    """Smooth sensitivity of the max at smoothing rate beta."""
    rows = _sorted_rows(sorted_s, "smooth_sensitivity_max")
    _check_bounds(rows, upper)
    b = _max_envelopes(rows, upper)
    out = np.max(b * _decay(beta, rows.shape[1]), axis=1)
    return float(out[0]) if np.ndim(sorted_s) == 1 else out


def smooth_sensitivity_median(sorted_s, upper: float, beta: float):
    """Smooth sensitivity of the lower-middle median at smoothing rate beta.

    The scan over the change budget k stops once the decayed bound
    e^(-beta k) * upper cannot beat any row's running maximum, which keeps
    the effective cost near-linear for the decay rates used in practice.
    """
    rows = _sorted_rows(sorted_s, "smooth_sensitivity_median")
    _check_bounds(rows, upper)
    M, n = rows.shape
    idx1, idx2, starts = _median_index_arrays(n)
    ends = np.append(starts, len(idx1))
    pad_lo = n + 2
    padded = np.concatenate(
        [np.zeros((M, pad_lo)), rows, np.full((M, n + 2), upper)], axis=1
    )
    off = pad_lo - 1
    best = np.zeros(M)
    chunk = 16
    for k0 in range(0, n + 1, chunk):
        k1 = min(k0 + chunk, n + 1)
        s0, s1 = ends[k0], ends[k1]
        diffs = padded[:, off + idx1[s0:s1]] - padded[:, off + idx2[s0:s1]]
        env = np.maximum.reduceat(diffs, starts[k0:k1] - s0, axis=1)
        ks = np.arange(k0, k1)
        if math.isinf(beta):
            dec = np.where(ks == 0, 1.0, 0.0)
        else:
            dec = np.exp(-beta * ks)
        np.maximum(best, np.max(env * dec, axis=1), out=best)
        tail = 0.0 if math.isinf(beta) else math.exp(-beta * k1)
        if tail * upper <= best.min():
            break
    return float(best[0]) if np.ndim(sorted_s) == 1 else best


def smoothing_rate(epsilon: float, delta: float) -> float:
    """beta = epsilon / (2 log(2/delta))."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if math.isinf(epsilon):
        return math.inf
    return epsilon / (2.0 * math.log(2.0 / delta))


def _smooth_scale(statistic, mechanism, support, n, s_values, min_scale):
    s_lo, s_hi = statistic_range(statistic, support)
    if s_lo != 0.0:
        raise ValueError(
            "smooth-sensitivity releases assume the per-record statistic has minimum 0"
        )
    rows = np.sort(np.asarray(s_values, dtype=float), axis=-1)
    squeeze = rows.ndim == 1
    if squeeze:
        rows = rows[None, :]
    if rows.shape[-1] != n:
        raise ValueError("s_values must have n per-record entries")
    beta = smoothing_rate(mechanism.epsilon, mechanism.resolved_delta(n))
    if statistic.aggregator == "max":
        sens = smooth_sensitivity_max(rows, s_hi, beta)
    else:
        sens = smooth_sensitivity_median(rows, s_hi, beta)
    scale = np.maximum(sens / (mechanism.epsilon / 2.0), min_scale)
    return float(scale[0]) if squeeze else scale


def batch_noise_scale(statistic: StatisticSpec, mechanism: Mechanism, support,
                      n: int, s_values=None, *, min_scale: float = 0.0):
    """Noise scale a batch release will use (sd for gaussian, b for laplace).

    For ``laplace_smooth`` the scale is data dependent, so the per-record
    values must be supplied; a 2-d input yields one scale per row.
    """
    if mechanism.kind in ("gaussian", "laplace"):
        if statistic.aggregator != "mean":
            raise ValueError(
                f"{mechanism.kind} batch releases pair with the mean aggregator"
            )
        if math.isinf(mechanism.epsilon):
            return max(0.0, min_scale)
        # the aggregated sensitivity already carries the 1/n of the mean
        return max(global_sensitivity(statistic, support, n) / mechanism.epsilon,
                   min_scale)
    if mechanism.kind == "laplace_smooth":
        if statistic.aggregator not in ("max", "median"):
            raise ValueError("laplace_smooth pairs with the max or median aggregator")
        if math.isinf(mechanism.epsilon):
            base = np.zeros(np.asarray(s_values, dtype=float).shape[:-1])
            out = np.maximum(base, min_scale)
            return float(out) if out.ndim == 0 else out
        if s_values is None:
            raise ValueError("laplace_smooth scale is data dependent; pass s_values")
        return _smooth_scale(statistic, mechanism, support, n, s_values, min_scale)
    raise ValueError("randomized_response has no additive noise scale")


def release_batch(x, statistic: StatisticSpec, mechanism: Mechanism, support,
                  rng: RngLike) -> Release:
    """Clamp records, aggregate the per-record statistic, add calibrated noise."""
    xa = np.clip(np.asarray(x, dtype=float), support[0], support[1])
    n = xa.shape[-1]
    if xa.ndim != 1 or n == 0:
        raise ValueError("release_batch expects one non-empty dataset")
    s = statistic.per_record_values(xa)
    u = statistic.aggregate(s)
    gen = as_generator(rng)
    if math.isinf(mechanism.epsilon):
        # validate the pairing even when no noise is added
        batch_noise_scale(statistic, mechanism, support, n,
                          s_values=s if mechanism.kind == "laplace_smooth" else None)
        return Release("batch", float(u), statistic, mechanism, n, 0.0)
    scale = batch_noise_scale(statistic, mechanism, support, n, s_values=s)
    if mechanism.kind == "gaussian":
        y = u + scale * gen.standard_normal()
    else:  # laplace and laplace_smooth
        y = u + gen.laplace(0.0, scale)
    return Release("batch", float(y), statistic, mechanism, n, scale)


def release_sequential(x, statistic: StatisticSpec, mechanism: Mechanism, support,
                       rng: RngLike) -> Release:
    """Release every per-record value with independent noise of scale range/epsilon."""
    if statistic.aggregator != "none":
        raise ValueError("sequential releases use aggregator 'none'")
    if mechanism.kind not in ("gaussian", "laplace"):
        raise ValueError("sequential releases use gaussian or laplace noise")
    xa = np.clip(np.asarray(x, dtype=float), support[0], support[1])
    s = statistic.per_record_values(xa)
    if math.isinf(mechanism.epsilon):
        return Release("sequential", s, statistic, mechanism, s.size, 0.0)
    s_lo, s_hi = statistic_range(statistic, support)
    scale = (s_hi - s_lo) / mechanism.epsilon
    gen = as_generator(rng)
    if mechanism.kind == "gaussian":
        y = s + scale * gen.standard_normal(s.shape)
    else:
        y = s + gen.laplace(0.0, scale, s.shape)
    return Release("sequential", y, statistic, mechanism, s.size, scale)


def keep_probability(epsilon: float) -> float:
    """P(bit released unchanged) = exp(eps) / (exp(eps) + 1)."""
    if math.isinf(epsilon):
        return 1.0
    return math.exp(epsilon) / (math.exp(epsilon) + 1.0)


def randomized_response(x, epsilon: float, rng: RngLike) -> Release:
    """Flip each bit independently, keeping it with probability e^eps/(e^eps+1)."""
    mech = Mechanism("randomized_response", epsilon)
    xa = np.asarray(x, dtype=float)
    if np.any((xa != 0.0) & (xa != 1.0)):
        raise ValueError("randomized_response expects 0/1 records")
    keep = keep_probability(epsilon)
    gen = as_generator(rng)
    kept = gen.random(xa.shape) < keep
    y = np.where(kept, xa, 1.0 - xa)
    stat = StatisticSpec("identity", 1.0, "none")
    return Release("sequential", y, stat, mech, xa.size, 1.0 - keep)


def _log_normal_density(diff, sd):
    return -0.5 * np.log(2.0 * math.pi * sd * sd) - 0.5 * (diff / sd) ** 2


def _log_laplace_density(diff, b):
    return -np.log(2.0 * b) - np.abs(diff) / b


def release_log_density_batch(y, statistic: StatisticSpec, mechanism: Mechanism,
                              support, n: int, *, u=None, s_values=None,
                              min_scale: float = 0.0):
    """log density of a batch release y given the underlying data.

    For mean releases pass the aggregated value(s) ``u``; for smooth-noise
    max/median releases pass the per-record values ``s_values`` (last axis of
    length n) since the noise scale depends on the whole dataset.  Broadcasts
    over leading axes.
    """
    if mechanism.kind in ("gaussian", "laplace"):
        if u is None:
            if s_values is None:
                raise ValueError("pass u (or s_values) for mean releases")
            u = statistic.aggregate(np.asarray(s_values, dtype=float), axis=-1)
        scale = batch_noise_scale(statistic, mechanism, support, n,
                                  min_scale=min_scale)
        if scale == 0.0:
            raise ValueError("exact release (epsilon=inf) has no density; "
                             "set min_scale if an approximation is wanted")
        diff = np.asarray(y, dtype=float) - np.asarray(u, dtype=float)
        out = (_log_normal_density(diff, scale) if mechanism.kind == "gaussian"
               else _log_laplace_density(diff, scale))
        return float(out) if np.ndim(out) == 0 else out
    if mechanism.kind == "laplace_smooth":
        if s_values is None:
            raise ValueError("smooth-noise densities need the per-record values")
        sa = np.asarray(s_values, dtype=float)
        u_val = statistic.aggregate(sa, axis=-1)
        scale = batch_noise_scale(statistic, mechanism, support, n, s_values=sa,
                                  min_scale=min_scale)
        if np.any(np.asarray(scale) == 0.0):
            raise ValueError("exact release (epsilon=inf) has no density; "
                             "set min_scale if an approximation is wanted")
        out = _log_laplace_density(np.asarray(y, dtype=float) - u_val, scale)
        return float(out) if np.ndim(out) == 0 else out
    raise ValueError("randomized_response releases are sequential")


def release_log_density_sequential(y, s, statistic: StatisticSpec,
                                   mechanism: Mechanism, support, *,
                                   min_scale: float = 0.0):
    """Pointwise log density/mass of per-record releases y given values s."""
    ya = np.asarray(y, dtype=float)
    sa = np.asarray(s, dtype=float)
    if mechanism.kind == "randomized_response":
        keep = keep_probability(mechanism.epsilon)
        same = ya == sa
        if keep == 1.0:
            out = np.where(same, 0.0, -np.inf)
        else:
            out = np.where(same, math.log(keep), math.log1p(-keep))
        return float(out) if np.ndim(out) == 0 else out
    if mechanism.kind not in ("gaussian", "laplace"):
        raise ValueError("sequential densities exist for gaussian, laplace, "
                         "or randomized_response")
    s_lo, s_hi = statistic_range(statistic, support)
    if math.isinf(mechanism.epsilon):
        scale = min_scale
    else:
        scale = max((s_hi - s_lo) / mechanism.epsilon, min_scale)
    if scale == 0.0:
        raise ValueError("exact release (epsilon=inf) has no density; "
                         "set min_scale if an approximation is wanted")
    out = (_log_normal_density(ya - sa, scale) if mechanism.kind == "gaussian"
           else _log_laplace_density(ya - sa, scale))
    return float(out) if np.ndim(out) == 0 else out
