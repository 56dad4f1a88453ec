"""Population families, per-record statistics, and statistic moments.

Four single-parameter families are supported:

* ``normal_mean``      -- N(theta, 1), records declared on (0, A)
* ``normal_variance``  -- N(0, theta), records declared on (-A, A)
* ``uniform_width``    -- Uniform(-theta, theta), records declared on (-A, A)
* ``bernoulli``        -- Bernoulli(theta)

Densities and scores are those of the untruncated laws.  The declared
support only matters for sensitivity computations: realized records are
clamped into it before a statistic is evaluated, and the bound ``A`` is
assumed large enough that the clamping has negligible probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, ndtri

from dpselect.core import RngLike, as_generator

__all__ = [
    "PopulationModel",
    "normal_mean",
    "normal_variance",
    "uniform_width",
    "bernoulli",
    "StatisticSpec",
    "abs_power",
    "signed_power",
    "identity",
    "Moments",
    "statistic_moments",
    "apply_statistic",
]

_FAMILIES = ("normal_mean", "normal_variance", "uniform_width", "bernoulli")

# z in (0,1) is nudged off the exact endpoints before quantile transforms
_Z_EDGE = 1e-15


@dataclass(frozen=True)
class PopulationModel:
    """A one-parameter record distribution with a declared bounded support."""

    family: str
    support_bound: float = 10.0
    theta_domain: tuple = None  # open interval; family default when None

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {_FAMILIES}")
        if self.family != "bernoulli" and not self.support_bound > 0:
            raise ValueError("support_bound must be positive")
        if self.theta_domain is None:
            object.__setattr__(self, "theta_domain", self._default_theta_domain())
        lo, hi = self.theta_domain
        if not lo < hi:
            raise ValueError("theta_domain must be a non-empty open interval")

    def _default_theta_domain(self):
        A = self.support_bound
        return {
            "normal_mean": (-A, A),
            "normal_variance": (0.0, math.inf),
            "uniform_width": (0.0, math.inf),
            "bernoulli": (0.0, 1.0),
        }[self.family]

    @property
    def support(self) -> tuple:
        """Closed interval the clamped records live on."""
        A = self.support_bound
        return {
            "normal_mean": (0.0, A),
            "normal_variance": (-A, A),
            "uniform_width": (-A, A),
            "bernoulli": (0.0, 1.0),
        }[self.family]

    def contains_theta(self, theta: float) -> bool:
        lo, hi = self.theta_domain
        return lo < theta < hi

    def _check_theta(self, theta: float):
        if not self.contains_theta(theta):
            raise ValueError(
                f"theta={theta} outside the open domain {self.theta_domain} "
                f"of family {self.family!r}"
            )

    def clamp(self, x):
        """Clip records into the declared support."""
        lo, hi = self.support
        return np.clip(x, lo, hi)

    def log_density_and_score(self, theta: float, x):
        """Pointwise log density and d(log density)/d(theta) at the records.

        ``x`` may be a scalar or array; the outputs match its shape.  Records
        outside the closed support are rejected.  For ``uniform_width`` the
        density is zero when |x| > theta; those points get log density -inf
        and score 0.
        """
        self._check_theta(theta)
        xa = np.asarray(x, dtype=float)
        lo, hi = self.support
        if np.any(xa < lo) or np.any(xa > hi):
            raise ValueError(f"records outside the declared support [{lo}, {hi}]")
        if self.family == "normal_mean":
            d = xa - theta
            logp = -0.5 * d * d - 0.5 * math.log(2 * math.pi)
            score = d
        elif self.family == "normal_variance":
            logp = -0.5 * np.log(2 * math.pi * theta) - xa * xa / (2 * theta)
            score = -0.5 / theta + xa * xa / (2 * theta * theta)
        elif self.family == "uniform_width":
            inside = np.abs(xa) <= theta
            logp = np.where(inside, -math.log(2 * theta), -np.inf)
            score = np.where(inside, -1.0 / theta, 0.0)
        else:  # bernoulli
            if np.any((xa != 0.0) & (xa != 1.0)):
                raise ValueError("bernoulli records must be 0 or 1")
            logp = np.where(xa == 1.0, math.log(theta), math.log1p(-theta))
            score = np.where(xa == 1.0, 1.0 / theta, -1.0 / (1.0 - theta))
        if np.ndim(x) == 0:
            return float(logp), float(score)
        return logp, score

    def base_draws(self, z):
        """The theta-independent part of the quantile transform.

        Splitting the transform lets a caller that evaluates several theta
        values on the same uniforms pay for the quantile function once.
        """
        za = np.clip(np.asarray(z, dtype=float), _Z_EDGE, 1.0 - _Z_EDGE)
        if self.family in ("normal_mean", "normal_variance"):
            return ndtri(za)
        if self.family == "uniform_width":
            return 2.0 * za - 1.0
        return za  # bernoulli thresholds depend on theta

    def from_base(self, theta: float, base):
        """Finish the quantile transform from ``base_draws`` output."""
        self._check_theta(theta)
        if self.family == "normal_mean":
            out = theta + np.asarray(base, dtype=float)
        elif self.family == "normal_variance":
            out = math.sqrt(theta) * np.asarray(base, dtype=float)
        elif self.family == "uniform_width":
            out = theta * np.asarray(base, dtype=float)
        else:  # bernoulli: quantile is 0 below 1-theta, 1 above
            out = (np.asarray(base, dtype=float) > 1.0 - theta).astype(float)
        return float(out) if np.ndim(base) == 0 else out

    def transform(self, theta: float, z):
        """Quantile transform: map uniforms z in (0,1) to records."""
        out = self.from_base(theta, self.base_draws(z))
        return float(out) if np.ndim(z) == 0 else out

    def sample(self, theta: float, size, rng: RngLike):
        """Draw records from the untruncated law via the quantile transform."""
        gen = as_generator(rng)
        return self.transform(theta, gen.random(size))


def normal_mean(support_bound: float = 10.0, theta_domain=None) -> PopulationModel:
    return PopulationModel("normal_mean", support_bound, theta_domain)


def normal_variance(support_bound: float = 10.0, theta_domain=None) -> PopulationModel:
    return PopulationModel("normal_variance", support_bound, theta_domain)


def uniform_width(support_bound: float = 10.0, theta_domain=None) -> PopulationModel:
    return PopulationModel("uniform_width", support_bound, theta_domain)


def bernoulli() -> PopulationModel:
    return PopulationModel("bernoulli", 1.0)


_PER_RECORD = ("abs_power", "signed_power", "identity")
_AGGREGATORS = ("mean", "max", "median", "none")


@dataclass(frozen=True)
class StatisticSpec:
    """Per-record map s(x) plus how the n per-record values are aggregated.

    ``aggregator='none'`` means the per-record values are released one by
    one (the sequential regime) instead of being reduced to a scalar.
    """

    per_record: str
    power: float = 1.0
    aggregator: str = "mean"

    def __post_init__(self):
        if self.per_record not in _PER_RECORD:
            raise ValueError(
                f"unknown per-record map {self.per_record!r}; expected one of {_PER_RECORD}"
            )
        if self.aggregator not in _AGGREGATORS:
            raise ValueError(
                f"unknown aggregator {self.aggregator!r}; expected one of {_AGGREGATORS}"
            )
        if self.per_record == "abs_power" and not self.power > 0:
            raise ValueError("abs_power requires power > 0")
        if self.per_record == "signed_power":
            if self.power != int(self.power) or int(self.power) % 2 != 1 or self.power < 1:
                raise ValueError("signed_power requires a positive odd integer power")
        if self.per_record == "identity" and self.power != 1.0:
            raise ValueError("identity takes no power")

    @property
    def label(self) -> str:
        if self.per_record == "abs_power":
            head = f"abs{self.power:g}"
        elif self.per_record == "signed_power":
            head = f"pow{self.power:g}"
        else:
            head = "id"
        tail = "seq" if self.aggregator == "none" else self.aggregator
        return f"{head}-{tail}"

    @classmethod
    def from_label(cls, label: str) -> "StatisticSpec":
        """Parse labels like ``abs2-mean``, ``pow3-mean``, ``abs1-median``, ``id-seq``."""
        try:
            head, tail = label.split("-")
        except ValueError:
            raise ValueError(
                f"bad statistic label {label!r}: expected '<map>-<aggregator>'"
            ) from None
        agg = "none" if tail == "seq" else tail
        if head == "id":
            return cls("identity", 1.0, agg)
        for prefix, name in (("abs", "abs_power"), ("pow", "signed_power")):
            if head.startswith(prefix):
                return cls(name, float(head[len(prefix):]), agg)
        raise ValueError(f"bad statistic label {label!r}")

    def per_record_values(self, x):
        xa = np.asarray(x, dtype=float)
        if self.per_record == "abs_power":
            out = np.abs(xa) ** self.power
        elif self.per_record == "signed_power":
            out = xa ** int(self.power)
        else:
            out = xa
        return float(out) if np.ndim(x) == 0 else out

    def aggregate(self, s, axis=-1):
        sa = np.asarray(s, dtype=float)
        if self.aggregator == "mean":
            out = sa.mean(axis=axis)
        elif self.aggregator == "max":
            out = sa.max(axis=axis)
        elif self.aggregator == "median":
            n = sa.shape[axis]
            kth = (n - 1) // 2  # lower-middle order statistic for even n
            out = np.partition(sa, kth, axis=axis).take(kth, axis=axis)
        else:
            raise ValueError("sequential statistics have no batch aggregate")
        return float(out) if out.ndim == 0 else out


def abs_power(power: float, aggregator: str = "mean") -> StatisticSpec:
    return StatisticSpec("abs_power", power, aggregator)


def signed_power(power: float, aggregator: str = "mean") -> StatisticSpec:
    return StatisticSpec("signed_power", power, aggregator)


def identity(aggregator: str = "none") -> StatisticSpec:
    return StatisticSpec("identity", 1.0, aggregator)


def apply_statistic(statistic: StatisticSpec, x):
    """Evaluate the aggregated statistic on one dataset (last axis = records)."""
    return statistic.aggregate(statistic.per_record_values(x), axis=-1)


@dataclass(frozen=True)
class Moments:
    """Per-record mean/variance of s(X) under theta, with theta-derivatives."""

    mean: float
    var: float
    dmean: float
    dvar: float
    exact: bool = True


def _normal_raw_moments(theta: float, k_max: int):
    """E[X^k] and d/dtheta E[X^k] for X ~ N(theta, 1), k = 0..k_max.

    Uses the recurrence E[X^k] = theta E[X^(k-1)] + (k-1) E[X^(k-2)].
    """
    m = [1.0, theta]
    dm = [0.0, 1.0]
    for k in range(2, k_max + 1):
        m.append(theta * m[k - 1] + (k - 1) * m[k - 2])
        dm.append(m[k - 1] + theta * dm[k - 1] + (k - 1) * dm[k - 2])
    return m, dm


def _mc_moments(model: PopulationModel, statistic: StatisticSpec, theta: float,
                draws: int = 100_000) -> Moments:
    """Monte Carlo fallback with common random numbers for the derivatives."""
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(0x5EED)))
    z = gen.random(draws)

    def mean_var(th):
        s = statistic.per_record_values(model.transform(th, z))
        return float(np.mean(s)), float(np.var(s))

    mu, var = mean_var(theta)
    h = max(1e-4, 1e-4 * abs(theta))
    mu_up, var_up = mean_var(theta + h)
    mu_dn, var_dn = mean_var(theta - h)
    return Moments(mu, var, (mu_up - mu_dn) / (2 * h), (var_up - var_dn) / (2 * h),
                   exact=False)


def statistic_moments(model: PopulationModel, statistic: StatisticSpec,
                      theta: float) -> Moments:
    """Mean and variance of one per-record value s(X), plus theta-derivatives.

    Closed forms cover every family/statistic pair used in the experiments;
    anything else falls back to a deterministic Monte Carlo estimate flagged
    ``exact=False``.
    """
    model._check_theta(theta)
    fam, pr, a = model.family, statistic.per_record, statistic.power

    if fam == "normal_mean" and pr in ("signed_power", "identity"):
        k = int(a) if pr == "signed_power" else 1
        m, dm = _normal_raw_moments(theta, 2 * k)
        mean, dmean = m[k], dm[k]
        var = m[2 * k] - mean * mean
        dvar = dm[2 * k] - 2.0 * mean * dmean
        return Moments(mean, var, dmean, dvar)

    if fam == "normal_variance":
        if pr == "identity" or (pr == "signed_power" and a == 1):
            return Moments(0.0, theta, 0.0, 1.0)
        if pr == "abs_power":
            # E|X|^a = (2 theta)^(a/2) Gamma((a+1)/2) / sqrt(pi)
            log_c1 = gammaln((a + 1) / 2) - 0.5 * math.log(math.pi)
            log_c2 = gammaln((2 * a + 1) / 2) - 0.5 * math.log(math.pi)
            mean = math.exp(0.5 * a * math.log(2 * theta) + log_c1)
            second = math.exp(a * math.log(2 * theta) + log_c2)
            var = second - mean * mean
            dmean = mean * a / (2 * theta)
            dvar = var * a / theta  # var scales as (2 theta)^a
            return Moments(mean, var, dmean, dvar)

    if fam == "uniform_width":
        if pr == "identity" or (pr == "signed_power" and a == 1):
            return Moments(0.0, theta * theta / 3.0, 0.0, 2.0 * theta / 3.0)
        if pr == "abs_power":
            mean = theta**a / (a + 1.0)
            var = theta ** (2 * a) * a * a / ((a + 1.0) ** 2 * (2 * a + 1.0))
            return Moments(mean, var, a * mean / theta, 2 * a * var / theta)

    if fam == "bernoulli" and pr in ("identity", "abs_power", "signed_power"):
        # any power of a 0/1 record is the record itself
        return Moments(theta, theta * (1.0 - theta), 1.0, 1.0 - 2.0 * theta)

    return _mc_moments(model, statistic, theta)
