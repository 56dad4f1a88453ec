"""Fisher information of private releases about the model parameter.

Closed forms cover two regimes:

* ``fi_gaussian_closed`` -- additive releases of a mean statistic, treating
  the statistic as Gaussian with its exact first two moments.  With
  H(theta) = cov(theta)/n + sd^2 I the information is
  ``dmu' H^-1 dmu + tr(H^-1 dcov_i H^-1 dcov_j) / (2 n^2)``.
* ``fi_bernoulli_closed`` -- bit-valued records under randomized response,
  per-record additive Gaussian noise, or batch mean Gaussian noise.

Three Monte Carlo estimators cover everything else.  All three draw a
release y generatively in an outer loop, estimate the score of the release
density by self-normalized importance sampling in an inner loop, and average
the squared score estimates.  Outer iterations use independent child streams
of the caller's RngStream, so results do not depend on execution order or
thread count.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from dpselect.core import RngStream, log_sum_exp
from dpselect.models import (
    PopulationModel,
    StatisticSpec,
    apply_statistic,
    statistic_moments,
)
from dpselect.privacy import (
    Mechanism,
    batch_noise_scale,
    keep_probability,
    release_log_density_batch,
    release_log_density_sequential,
    statistic_range,
)

__all__ = [
    "FisherEstimate",
    "WeightDegeneracyWarning",
    "gaussian_approx_fisher",
    "fi_gaussian_closed",
    "fi_bernoulli_closed",
    "fi_mc_additive",
    "fi_mc_exact",
    "fi_mc_sequential",
]

# self-normalized importance sampling is declared degenerate below this
# fraction of the nominal inner sample size
_ESS_WARN_FRACTION = 0.05

# stand-in noise scale that keeps release densities defined at epsilon = inf
_MIN_NOISE_SCALE = 1e-8


class WeightDegeneracyWarning(UserWarning):
    """Inner importance weights carry almost no effective samples."""


@dataclass
class FisherEstimate:
    """A Fisher information value with its Monte Carlo uncertainty.

    ``standard_error`` is zero for closed forms.  For the MC estimators
    ``ess`` / ``ess_min`` report the mean and worst effective sample size of
    the inner importance weights across outer iterations.
    """

    value: float
    standard_error: float
    estimator: str
    ess: Optional[float] = None
    ess_min: Optional[float] = None
    settings: dict = field(default_factory=dict)


def _jackknife_se(samples) -> float:
    """Jackknife standard error of the mean of ``samples``."""
    g = np.asarray(samples, dtype=float)
    N = g.size
    if N < 2:
        return math.inf
    loo = (g.sum() - g) / (N - 1)
    return math.sqrt((N - 1) / N * np.sum((loo - loo.mean()) ** 2))


def _indexed_map(fn, count: int, threads: int):
    if threads <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, range(count)))


def _require_stream(rng) -> RngStream:
    if not isinstance(rng, RngStream):
        raise TypeError("MC estimators need an RngStream so that outer "
                        "iterations can use independent child streams")
    return rng


def _finish(gammas, esses, estimator, scale_sq, inner, settings) -> FisherEstimate:
    g2 = np.asarray(gammas) ** 2 * scale_sq
    ess = np.asarray(esses, dtype=float)
    if ess.mean() < _ESS_WARN_FRACTION * inner:
        warnings.warn(
            f"mean effective sample size {ess.mean():.1f} of {inner} inner "
            f"draws; the importance proposal matches the release poorly",
            WeightDegeneracyWarning,
        )
    return FisherEstimate(
        value=float(g2.mean()),
        standard_error=_jackknife_se(g2),
        estimator=estimator,
        ess=float(ess.mean()),
        ess_min=float(ess.min()),
        settings=settings,
    )


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------

def gaussian_approx_fisher(dmu, cov, dcov, n: int, noise_sd: float):
    """Fisher matrix of the model y ~ N(mu(theta), cov(theta)/n + noise_sd^2 I).

    Parameters
    ----------
    dmu : (p, d) array
        Derivatives of the statistic mean, one row per parameter.
    cov : (d, d) array
        Per-record covariance of the statistic.
    dcov : (p, d, d) array
        Its derivatives, one slice per parameter.
    """
    dmu = np.atleast_2d(np.asarray(dmu, dtype=float))
    p, d = dmu.shape
    cov = np.asarray(cov, dtype=float).reshape(d, d)
    dcov = np.asarray(dcov, dtype=float).reshape(p, d, d)
    H = cov / n + noise_sd**2 * np.eye(d)
    Hinv = np.linalg.inv(H)
    F = dmu @ Hinv @ dmu.T
    for i in range(p):
        for j in range(p):
            F[i, j] += 0.5 * np.trace(Hinv @ dcov[i] @ Hinv @ dcov[j]) / (n * n)
    return F


def fi_gaussian_closed(model: PopulationModel, statistic: StatisticSpec, n: int,
                       epsilon: float, theta: float) -> FisherEstimate:
    """Closed-form information of a batch mean release under Gaussian noise."""
    if statistic.aggregator != "mean":
        raise ValueError("the closed form covers mean-aggregated releases")
    mom = statistic_moments(model, statistic, theta)
    sd = batch_noise_scale(statistic, Mechanism("gaussian", epsilon),
                           model.support, n)
    F = gaussian_approx_fisher([[mom.dmean]], [[mom.var]], [[[mom.dvar]]], n, sd)
    return FisherEstimate(
        value=float(F[0, 0]),
        standard_error=0.0,
        estimator="closed_gaussian",
        settings=dict(theta=theta, n=n, epsilon=epsilon,
                      statistic=statistic.label, exact_moments=mom.exact),
    )


def fi_bernoulli_closed(theta: float, n: int, epsilon: float,
                        mode: str) -> FisherEstimate:
    """Closed-form information for bit-valued records.

    ``mode`` selects the release channel:

    * ``randomized_response`` -- each bit flipped, kept w.p. e^eps/(e^eps+1)
    * ``per_record_gaussian`` -- each bit plus N(0, 1/eps^2) noise
    * ``batch_mean_gaussian`` -- the mean of n bits plus N(0, 1/(eps n)^2)
    """
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive or inf")
    v = theta * (1.0 - theta)
    if mode == "randomized_response":
        alpha = math.tanh(epsilon / 2.0)  # (e^eps - 1)/(e^eps + 1)
        keep = keep_probability(epsilon)
        tau = theta * keep + (1.0 - theta) * (1.0 - keep)
        value = n * alpha * alpha / (tau * (1.0 - tau))
    elif mode in ("per_record_gaussian", "batch_mean_gaussian"):
        noise_var = 0.0 if math.isinf(epsilon) else 1.0 / (epsilon * epsilon)
        if mode == "batch_mean_gaussian":
            noise_var /= n
        D = v + noise_var
        value = (n * D + (1.0 - 2.0 * theta) ** 2) / (D * D)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return FisherEstimate(
        value=float(value), standard_error=0.0,
        estimator=f"closed_bernoulli_{mode}",
        settings=dict(theta=theta, n=n, epsilon=epsilon),
    )


# ---------------------------------------------------------------------------
# Monte Carlo estimators
# ---------------------------------------------------------------------------

def _score_of_statistic_density(u, mom, n):
    """d/dtheta of log N(u; mean, var/n) at the inner samples."""
    v = mom.var / n
    dv = mom.dvar / n
    diff = u - mom.mean
    return -0.5 * dv / v + diff * mom.dmean / v + diff * diff * dv / (2.0 * v * v)


def fi_mc_additive(model: PopulationModel, statistic: StatisticSpec,
                   mechanism: Mechanism, n: int, theta: float, outer: int,
                   inner: int, rng: RngStream, *, threads: int = 1,
                   proposal_inflation: float = 2.0) -> FisherEstimate:
    """Information of a noisy mean release, with the statistic treated as
    Gaussian at its exact moments.

    Outer loop: simulate a dataset and its release y.  Inner loop: importance
    sample the statistic value u from an inflated-variance normal, weight by
    density-of-u times noise-density-at-(y-u), and average the score of the
    u-density.  The squared score estimates average to the information.
    """
    rng = _require_stream(rng)
    if statistic.aggregator != "mean":
        raise ValueError("this estimator covers mean-aggregated releases")
    if mechanism.kind not in ("gaussian", "laplace"):
        raise ValueError("this estimator covers gaussian or laplace noise")
    mom = statistic_moments(model, statistic, theta)
    support = model.support
    scale = batch_noise_scale(statistic, mechanism, support, n)
    dens_scale = max(scale, _MIN_NOISE_SCALE)
    noise_var = dens_scale**2 if mechanism.kind == "gaussian" else 2.0 * dens_scale**2
    f_var = mom.var / n
    q_sd = math.sqrt(proposal_inflation * f_var + noise_var)
    f_sd = math.sqrt(f_var)

    def one(i):
        gen = rng.child(i).generator()
        x = model.clamp(model.sample(theta, n, gen))
        y = apply_statistic(statistic, x)
        if scale > 0.0:
            if mechanism.kind == "gaussian":
                y += scale * gen.standard_normal()
            else:
                y += gen.laplace(0.0, scale)
        u = mom.mean + q_sd * gen.standard_normal(inner)
        diff_f = (u - mom.mean) / f_sd
        diff_q = (u - mom.mean) / q_sd
        log_f = -math.log(f_sd) - 0.5 * diff_f * diff_f
        log_q = -math.log(q_sd) - 0.5 * diff_q * diff_q
        if mechanism.kind == "gaussian":
            log_g = -0.5 * ((y - u) / dens_scale) ** 2
        else:
            log_g = -np.abs(y - u) / dens_scale
        lw = log_f + log_g - log_q
        total = log_sum_exp(lw)
        if not math.isfinite(total):
            raise ValueError("importance proposal mismatch: all inner weights zero")
        w = np.exp(lw - total)
        gamma = float(w @ _score_of_statistic_density(u, mom, n))
        return gamma, 1.0 / float(w @ w)

    results = _indexed_map(one, outer, threads)
    gammas, esses = zip(*results)
    return _finish(gammas, esses, "mc_additive", 1.0, inner,
                   dict(theta=theta, n=n, epsilon=mechanism.epsilon,
                        mechanism=mechanism.kind, statistic=statistic.label,
                        outer=outer, inner=inner))


def fi_mc_exact(model: PopulationModel, statistic: StatisticSpec,
                mechanism: Mechanism, n: int, theta: float, outer: int,
                inner: int, rng: RngStream, *, threads: int = 1) -> FisherEstimate:
    """Information of any batch release, importance sampling whole datasets.

    Inner proposals are datasets drawn from the model itself, so the weights
    reduce to the release density of y given the proposed dataset.  This
    handles data-dependent noise (smooth sensitivity) exactly, at the price
    of weights that degenerate faster with n.
    """
    rng = _require_stream(rng)
    support = model.support
    if statistic.aggregator == "none":
        raise ValueError("sequential releases have a dedicated estimator")
    smooth = mechanism.kind == "laplace_smooth"

    def one(i):
        gen = rng.child(i).generator()
        x = model.clamp(model.sample(theta, n, gen))
        s = statistic.per_record_values(x)
        y = apply_statistic(statistic, x)
        scale = batch_noise_scale(statistic, mechanism, support, n,
                                  s_values=s if smooth else None)
        if scale > 0.0:
            if mechanism.kind == "gaussian":
                y += scale * gen.standard_normal()
            else:
                y += gen.laplace(0.0, scale)
        X = model.clamp(model.sample(theta, (inner, n), gen))
        S = statistic.per_record_values(X)
        if smooth:
            lw = release_log_density_batch(y, statistic, mechanism, support, n,
                                           s_values=S, min_scale=_MIN_NOISE_SCALE)
        else:
            lw = release_log_density_batch(y, statistic, mechanism, support, n,
                                           u=statistic.aggregate(S, axis=1),
                                           min_scale=_MIN_NOISE_SCALE)
        total = log_sum_exp(lw)
        if not math.isfinite(total):
            raise ValueError("importance proposal mismatch: all inner weights zero")
        w = np.exp(lw - total)
        _, sc = model.log_density_and_score(theta, X)
        gamma = float(w @ sc.sum(axis=1))
        return gamma, 1.0 / float(w @ w)

    results = _indexed_map(one, outer, threads)
    gammas, esses = zip(*results)
    return _finish(gammas, esses, "mc_exact", 1.0, inner,
                   dict(theta=theta, n=n, epsilon=mechanism.epsilon,
                        mechanism=mechanism.kind, statistic=statistic.label,
                        outer=outer, inner=inner))


def fi_mc_sequential(model: PopulationModel, statistic: StatisticSpec,
                     mechanism: Mechanism, n: int, theta: float, outer: int,
                     inner: int, rng: RngStream, *, threads: int = 1) -> FisherEstimate:
    """Information of per-record releases; one record at a time, scaled by n.

    Each outer iteration simulates a single noisy record release, estimates
    the score of its density by importance sampling records from the model,
    and the average squared score times n gives the full-sample information.
    """
    rng = _require_stream(rng)
    if statistic.aggregator != "none":
        raise ValueError("this estimator covers per-record (sequential) releases")
    support = model.support
    rr = mechanism.kind == "randomized_response"
    if rr and model.family != "bernoulli":
        raise ValueError("randomized response applies to bit-valued records")

    def one(i):
        gen = rng.child(i).generator()
        x0 = model.clamp(model.sample(theta, None, gen))
        s0 = statistic.per_record_values(x0)
        if rr:
            y = s0 if gen.random() < keep_probability(mechanism.epsilon) else 1.0 - s0
        else:
            s_lo, s_hi = statistic_range(statistic, support)
            scale = (0.0 if math.isinf(mechanism.epsilon)
                     else (s_hi - s_lo) / mechanism.epsilon)
            y = s0
            if scale > 0.0:
                if mechanism.kind == "gaussian":
                    y += scale * gen.standard_normal()
                else:
                    y += gen.laplace(0.0, scale)
        xj = model.clamp(model.sample(theta, inner, gen))
        sj = statistic.per_record_values(xj)
        lw = release_log_density_sequential(y, sj, statistic, mechanism, support,
                                            min_scale=_MIN_NOISE_SCALE)
        total = log_sum_exp(lw)
        if not math.isfinite(total):
            raise ValueError("importance proposal mismatch: all inner weights zero")
        w = np.exp(lw - total)
        _, sc = model.log_density_and_score(theta, xj)
        gamma = float(w @ sc)
        return gamma, 1.0 / float(w @ w)

    results = _indexed_map(one, outer, threads)
    gammas, esses = zip(*results)
    return _finish(gammas, esses, "mc_sequential", float(n), inner,
                   dict(theta=theta, n=n, epsilon=mechanism.epsilon,
                        mechanism=mechanism.kind, statistic=statistic.label,
                        outer=outer, inner=inner))
