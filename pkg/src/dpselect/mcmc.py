"""Posterior samplers for privatized releases.

Five Metropolis-Hastings kernels cover the release regimes:

* ``MeanModelMH`` -- mean statistic with Gaussian noise; plain MH on the
  closed normal likelihood of the release.
* ``PseudoMarginalMH`` -- mean statistic with non-Gaussian noise; the
  marginal likelihood is replaced by an importance-sampling estimate that is
  carried in the state.
* ``AveragedRatioMH`` -- same target, but both the numerator and denominator
  of the acceptance ratio are refreshed every step from a shared symmetric
  proposal, which removes the stickiness of the carried estimate.
* ``LatentAveragedRatioMH`` -- any batch release, including data-dependent
  noise; the chain runs on (theta, z) where z are the n latent uniforms that
  generate the dataset, refreshed wholesale or over a random subset.
* ``SequentialAveragedRatioMH`` -- per-record releases; the acceptance
  ratio is a product of per-record averaged ratios, and every record's
  latent draw is reselected whether or not the theta move is accepted.

All kernels are pure functions of (state, generator): no hidden state, so a
chain is reproducible from its RngStream and arbitrarily many chains can run
in parallel on disjoint streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from dpselect.core import (
    RngLike,
    RngStream,
    as_generator,
    log_sum_exp,
    sample_weighted,
)
from dpselect.models import PopulationModel, StatisticSpec, statistic_moments
from dpselect.privacy import (
    Mechanism,
    batch_noise_scale,
    release_log_density_batch,
    release_log_density_sequential,
)

__all__ = [
    "FlatPrior",
    "default_prior",
    "RandomWalkProposal",
    "ChainState",
    "ChainTrace",
    "MeanModelMH",
    "PseudoMarginalMH",
    "AveragedRatioMH",
    "LatentAveragedRatioMH",
    "SequentialAveragedRatioMH",
    "run_chain",
    "tune_step_scale",
]

# release densities keep this floor so that epsilon = inf stays evaluable
_MIN_NOISE_SCALE = 1e-8


@dataclass(frozen=True)
class FlatPrior:
    """Uniform prior on an open interval: log density 0 inside, -inf outside."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("prior interval must be non-empty")

    def contains(self, theta: float) -> bool:
        return self.lo < theta < self.hi

    def log_density(self, theta: float) -> float:
        return 0.0 if self.contains(theta) else -math.inf

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)


def default_prior(model: PopulationModel) -> FlatPrior:
    """Flat prior over a sensible interval for the family's parameter."""
    if model.family in ("normal_variance", "uniform_width"):
        return FlatPrior(0.01, 50.0)
    if model.family == "bernoulli":
        return FlatPrior(0.0, 1.0)
    lo, hi = model.theta_domain
    return FlatPrior(lo, hi)


@dataclass(frozen=True)
class RandomWalkProposal:
    """Gaussian random walk in natural or log space.

    The log-space walk keeps positivity-constrained parameters in range; its
    density in theta-space picks up a 1/theta' factor, so the proposal ratio
    contributes log(theta') - log(theta) to the log acceptance ratio.
    """

    step_scale: float
    space: str = "natural"

    def __post_init__(self):
        if self.step_scale < 0:
            raise ValueError("step_scale must be >= 0")
        if self.space not in ("natural", "log"):
            raise ValueError("space must be 'natural' or 'log'")

    def propose(self, theta: float, gen) -> tuple:
        """Return (theta', log q(theta|theta') - log q(theta'|theta))."""
        eps = self.step_scale * gen.standard_normal()
        if self.space == "natural":
            return theta + eps, 0.0
        if theta <= 0:
            raise ValueError("log-space walk needs theta > 0")
        new = theta * math.exp(eps)
        return new, math.log(new) - math.log(theta)


@dataclass(frozen=True)
class ChainState:
    """Current parameter plus the kernel's auxiliary variable.

    ``aux`` is kernel-specific: None for plain MH, the carried log marginal
    likelihood estimate for the pseudo-marginal kernel, the current statistic
    value for the averaged-ratio kernel, and the latent uniform vector for
    the two latent-variable kernels.
    """

    theta: float
    aux: object = None


@dataclass
class ChainTrace:
    samples: np.ndarray
    accept_flags: np.ndarray
    burn_in: int
    seed_info: str = ""

    def __post_init__(self):
        if not 0 <= self.burn_in < len(self.samples):
            raise ValueError("burn_in must be < chain length")

    @property
    def post_burn(self) -> np.ndarray:
        return self.samples[self.burn_in:]

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accept_flags))


def _accepted(log_ratio: float, gen) -> bool:
    # the uniform is always consumed so draw counts do not depend on the
    # ratio; NaN (both sides degenerate) counts as a rejection
    v = gen.random()
    if math.isnan(log_ratio):
        return False
    return math.log(v) < log_ratio


def _log_normal(y: float, mean: float, var: float) -> float:
    return -0.5 * (math.log(2 * math.pi * var) + (y - mean) ** 2 / var)


class MeanModelMH:
    """Plain MH when the statistic is a mean and the noise is Gaussian.

    The release is modeled as N(mu(theta), var(theta)/n + noise_sd^2), which
    is the same approximation the closed-form information uses, so this
    kernel samples that approximate posterior rather than the exact one.
    """

    def __init__(self, y: float, model: PopulationModel, statistic: StatisticSpec,
                 n: int, epsilon: float, prior: FlatPrior,
                 proposal: RandomWalkProposal):
        if statistic.aggregator != "mean":
            raise ValueError("this kernel covers mean-aggregated releases")
        self.y = float(y)
        self.model = model
        self.statistic = statistic
        self.n = n
        self.epsilon = epsilon
        self.prior = prior
        self.proposal = proposal
        self._noise_var = batch_noise_scale(
            statistic, Mechanism("gaussian", epsilon), model.support, n) ** 2

    def _valid(self, theta: float) -> bool:
        return self.prior.contains(theta) and self.model.contains_theta(theta)

    def log_target(self, theta: float) -> float:
        if not self._valid(theta):
            return -math.inf
        mom = statistic_moments(self.model, self.statistic, theta)
        return self.prior.log_density(theta) + _log_normal(
            self.y, mom.mean, mom.var / self.n + self._noise_var)

    def initial_state(self, gen) -> ChainState:
        return ChainState(self.prior.midpoint)

    def step(self, state: ChainState, gen) -> tuple:
        new, log_jac = self.proposal.propose(state.theta, gen)
        log_ratio = log_jac + self.log_target(new) - self.log_target(state.theta)
        if _accepted(log_ratio, gen):
            return ChainState(new), True
        return state, False


class PseudoMarginalMH:
    """Pseudo-marginal MH for a noisy mean with non-Gaussian noise.

    The statistic value u is integrated out by importance sampling with the
    statistic's own approximate law as proposal, so the weights reduce to
    the noise density at y - u.  The resulting marginal likelihood estimate
    rides along in the state and is only replaced on acceptance.
    """

    def __init__(self, y: float, model: PopulationModel, statistic: StatisticSpec,
                 mechanism: Mechanism, n: int, N: int, prior: FlatPrior,
                 proposal: RandomWalkProposal):
        if statistic.aggregator != "mean":
            raise ValueError("this kernel covers mean-aggregated releases")
        if mechanism.kind not in ("gaussian", "laplace"):
            raise ValueError("this kernel covers gaussian or laplace noise")
        if N < 1:
            raise ValueError("N must be >= 1")
        self.y = float(y)
        self.model = model
        self.statistic = statistic
        self.mechanism = mechanism
        self.n = n
        self.N = N
        self.prior = prior
        self.proposal = proposal

    def _valid(self, theta: float) -> bool:
        return self.prior.contains(theta) and self.model.contains_theta(theta)

    def _log_zhat(self, theta: float, gen) -> float:
        """Draw N statistic values from its law at theta and average the
        noise density: an unbiased estimate of the release likelihood."""
        mom = statistic_moments(self.model, self.statistic, theta)
        u = mom.mean + math.sqrt(mom.var / self.n) * gen.standard_normal(self.N)
        lw = release_log_density_batch(self.y, self.statistic, self.mechanism,
                                       self.model.support, self.n, u=u,
                                       min_scale=_MIN_NOISE_SCALE)
        return log_sum_exp(np.atleast_1d(lw)) - math.log(self.N)

    def initial_state(self, gen) -> ChainState:
        theta0 = self.prior.midpoint
        return ChainState(theta0, self._log_zhat(theta0, gen))

    def step(self, state: ChainState, gen) -> tuple:
        new, log_jac = self.proposal.propose(state.theta, gen)
        if not self._valid(new):
            _accepted(-math.inf, gen)
            return state, False
        log_zhat_new = self._log_zhat(new, gen)
        log_ratio = (log_jac + self.prior.log_density(new)
                     - self.prior.log_density(state.theta)
                     + log_zhat_new - state.aux)
        if _accepted(log_ratio, gen):
            return ChainState(new, log_zhat_new), True
        return state, False


class AveragedRatioMH:
    """Averaged-ratio MH for a noisy mean with non-Gaussian noise.

    Candidates u^(1..N) share one symmetric proposal (the statistic's law at
    the midpoint (theta + theta')/2), u^(1) being the carried value.  Both
    sides of the acceptance ratio are weight sums over the same candidates,
    refreshed every step.  The kept u is reselected from the winning side's
    weights whether the theta move is accepted or not.
    """

    def __init__(self, y: float, model: PopulationModel, statistic: StatisticSpec,
                 mechanism: Mechanism, n: int, N: int, prior: FlatPrior,
                 proposal: RandomWalkProposal):
        if statistic.aggregator != "mean":
            raise ValueError("this kernel covers mean-aggregated releases")
        if mechanism.kind not in ("gaussian", "laplace"):
            raise ValueError("this kernel covers gaussian or laplace noise")
        if N < 1:
            raise ValueError("N must be >= 1")
        self.y = float(y)
        self.model = model
        self.statistic = statistic
        self.mechanism = mechanism
        self.n = n
        self.N = N
        self.prior = prior
        self.proposal = proposal

    def _valid(self, theta: float) -> bool:
        return self.prior.contains(theta) and self.model.contains_theta(theta)

    def _log_f(self, theta: float, u) -> np.ndarray:
        mom = statistic_moments(self.model, self.statistic, theta)
        var = mom.var / self.n
        return -0.5 * (np.log(2 * math.pi * var) + (u - mom.mean) ** 2 / var)

    def initial_state(self, gen) -> ChainState:
        theta0 = self.prior.midpoint
        mom = statistic_moments(self.model, self.statistic, theta0)
        u0 = mom.mean + math.sqrt(mom.var / self.n) * gen.standard_normal()
        return ChainState(theta0, u0)

    def step(self, state: ChainState, gen) -> tuple:
        theta = state.theta
        new, log_jac = self.proposal.propose(theta, gen)
        if not self._valid(new):
            _accepted(-math.inf, gen)
            return state, False
        mid = 0.5 * (theta + new)
        mom_q = statistic_moments(self.model, self.statistic, mid)
        q_sd = math.sqrt(mom_q.var / self.n)
        u = np.empty(self.N)
        u[0] = state.aux
        if self.N > 1:
            u[1:] = mom_q.mean + q_sd * gen.standard_normal(self.N - 1)
        log_g = release_log_density_batch(self.y, self.statistic, self.mechanism,
                                          self.model.support, self.n, u=u,
                                          min_scale=_MIN_NOISE_SCALE)
        log_q = -0.5 * (np.log(2 * math.pi * q_sd * q_sd)
                        + ((u - mom_q.mean) / q_sd) ** 2)
        lw = self._log_f(theta, u) + log_g - log_q
        lw_new = self._log_f(new, u) + log_g - log_q
        total_cur = log_sum_exp(lw)
        log_ratio = (log_jac + self.prior.log_density(new)
                     - self.prior.log_density(theta)
                     + log_sum_exp(lw_new) - total_cur)
        if _accepted(log_ratio, gen):
            k = 0 if self.N == 1 else sample_weighted(lw_new, gen)
            return ChainState(new, float(u[k])), True
        # rejection still refreshes u from the current-theta weights
        if self.N == 1 or total_cur == -math.inf:
            return state, False
        k = sample_weighted(lw, gen)
        return ChainState(theta, float(u[k])), False


class LatentAveragedRatioMH:
    """Averaged-ratio MH on (theta, z) for an arbitrary batch release.

    z are the n latent uniforms that generate the dataset through the
    model's quantile transform, so the release density given (z, theta) is
    available even when the noise scale depends on the whole dataset.
    ``mode='full'`` refreshes whole candidate vectors; ``mode='subset'``
    redraws only a uniformly chosen subset of ``subset_size`` coordinates.
    The candidate index is selected before the accept test, from the
    proposed-theta weights; a rejection keeps (theta, z) unchanged.
    """

    def __init__(self, y: float, model: PopulationModel, statistic: StatisticSpec,
                 mechanism: Mechanism, n: int, N: int, prior: FlatPrior,
                 proposal: RandomWalkProposal, mode: str = "full",
                 subset_size: Optional[int] = None):
        if statistic.aggregator == "none":
            raise ValueError("sequential releases have a dedicated kernel")
        if mode not in ("full", "subset"):
            raise ValueError("mode must be 'full' or 'subset'")
        if mode == "subset":
            if subset_size is None:
                subset_size = max(1, n // 10)
            if not 1 <= subset_size < n:
                raise ValueError("subset_size must be in [1, n)")
        self.y = float(y)
        self.model = model
        self.statistic = statistic
        self.mechanism = mechanism
        self.n = n
        self.N = N
        self.prior = prior
        self.proposal = proposal
        self.mode = mode
        self.subset_size = subset_size
        self._smooth = mechanism.kind == "laplace_smooth"

    def _valid(self, theta: float) -> bool:
        return self.prior.contains(theta) and self.model.contains_theta(theta)

    def _log_h(self, theta: float, base: np.ndarray) -> np.ndarray:
        """Release log density for each candidate row of base draws."""
        x = self.model.clamp(self.model.from_base(theta, base))
        s = self.statistic.per_record_values(x)
        if self._smooth:
            return release_log_density_batch(
                self.y, self.statistic, self.mechanism, self.model.support,
                self.n, s_values=s, min_scale=_MIN_NOISE_SCALE)
        return release_log_density_batch(
            self.y, self.statistic, self.mechanism, self.model.support,
            self.n, u=self.statistic.aggregate(s, axis=-1),
            min_scale=_MIN_NOISE_SCALE)

    def initial_state(self, gen) -> ChainState:
        return ChainState(self.prior.midpoint, gen.random(self.n))

    def step(self, state: ChainState, gen) -> tuple:
        theta, z = state.theta, state.aux
        new, log_jac = self.proposal.propose(theta, gen)
        if not self._valid(new):
            _accepted(-math.inf, gen)
            return state, False
        Z = np.tile(z, (self.N, 1))
        if self.N > 1:
            if self.mode == "full":
                Z[1:] = gen.random((self.N - 1, self.n))
            else:
                b = gen.choice(self.n, size=self.subset_size, replace=False)
                Z[1:, b] = gen.random((self.N - 1, self.subset_size))
        base = self.model.base_draws(Z)
        log_h_new = np.atleast_1d(self._log_h(new, base))
        log_h_cur = np.atleast_1d(self._log_h(theta, base))
        total_new = log_sum_exp(log_h_new)
        if self.N == 1:
            k = 0
        elif total_new == -math.inf:
            k = None  # acceptance is impossible; no selection needed
        else:
            k = sample_weighted(log_h_new, gen)
        log_ratio = (log_jac + self.prior.log_density(new)
                     - self.prior.log_density(theta)
                     + total_new - log_sum_exp(log_h_cur))
        if _accepted(log_ratio, gen):
            return ChainState(new, Z[k].copy()), True
        return state, False


class SequentialAveragedRatioMH:
    """Averaged-ratio MH on (theta, z) for per-record releases.

    Each record gets its own candidate set (current z_t plus N-1 fresh
    uniforms); the acceptance ratio multiplies per-record averaged ratios,
    which keeps its variance from growing with n.  Every record's latent
    draw is reselected each step, from the proposed-theta weights on
    acceptance and from the current-theta weights on rejection.
    """

    def __init__(self, y, model: PopulationModel, statistic: StatisticSpec,
                 mechanism: Mechanism, N: int, prior: FlatPrior,
                 proposal: RandomWalkProposal):
        if statistic.aggregator != "none":
            raise ValueError("this kernel covers per-record releases")
        if mechanism.kind not in ("gaussian", "laplace", "randomized_response"):
            raise ValueError("sequential noise is gaussian, laplace, or "
                             "randomized_response")
        if N < 1:
            raise ValueError("N must be >= 1")
        self.y = np.asarray(y, dtype=float)
        if self.y.ndim != 1:
            raise ValueError("sequential releases form a 1-d sequence")
        self.model = model
        self.statistic = statistic
        self.mechanism = mechanism
        self.n = self.y.size
        self.N = N
        self.prior = prior
        self.proposal = proposal

    def _valid(self, theta: float) -> bool:
        return self.prior.contains(theta) and self.model.contains_theta(theta)

    def _log_h(self, theta: float, base: np.ndarray) -> np.ndarray:
        x = self.model.clamp(self.model.from_base(theta, base))
        s = self.statistic.per_record_values(x)
        return release_log_density_sequential(
            self.y[:, None], s, self.statistic, self.mechanism,
            self.model.support, min_scale=_MIN_NOISE_SCALE)

    def initial_state(self, gen) -> ChainState:
        return ChainState(self.prior.midpoint, gen.random(self.n))

    @staticmethod
    def _select_rows(log_w: np.ndarray, gen) -> np.ndarray:
        """One categorical draw per row, one uniform per row.

        Rows whose weights all vanish keep index 0 (the carried value)."""
        m = np.max(log_w, axis=1, keepdims=True)
        safe = np.isfinite(m)
        p = np.exp(np.where(safe, log_w - m, -np.inf))
        p[~safe[:, 0], 0] = 1.0
        c = np.cumsum(p, axis=1)
        u = gen.random((log_w.shape[0], 1)) * c[:, -1:]
        return np.minimum((c < u).sum(axis=1), log_w.shape[1] - 1)

    def step(self, state: ChainState, gen) -> tuple:
        theta, z = state.theta, state.aux
        new, log_jac = self.proposal.propose(theta, gen)
        Z = np.empty((self.n, self.N))
        Z[:, 0] = z
        if self.N > 1:
            Z[:, 1:] = gen.random((self.n, self.N - 1))
        base = self.model.base_draws(Z)
        log_h_cur = self._log_h(theta, base)
        if self._valid(new):
            log_h_new = self._log_h(new, base)
            log_ratio = (log_jac + self.prior.log_density(new)
                         - self.prior.log_density(theta)
                         + float(np.sum(log_sum_exp(log_h_new, axis=1)))
                         - float(np.sum(log_sum_exp(log_h_cur, axis=1))))
        else:
            log_h_new = None
            log_ratio = -math.inf
        if _accepted(log_ratio, gen):
            k = self._select_rows(log_h_new, gen)
            return ChainState(new, Z[np.arange(self.n), k]), True
        # the latent draws are refreshed even when the theta move fails
        k = self._select_rows(log_h_cur, gen)
        return ChainState(theta, Z[np.arange(self.n), k]), False


def run_chain(kernel, init: Optional[ChainState], K: int,
              burn_in_fraction: float, rng: RngLike) -> ChainTrace:
    """Apply the kernel K times and record the parameter trajectory.

    ``init=None`` asks the kernel for its own initial state.  Summaries
    should use ``trace.post_burn``, which drops the first
    ``floor(K * burn_in_fraction)`` samples.
    """
    if K < 4:
        raise ValueError("K must be >= 4")
    if not 0.0 <= burn_in_fraction < 1.0:
        raise ValueError("burn_in_fraction must be in [0, 1)")
    gen = as_generator(rng)
    state = kernel.initial_state(gen) if init is None else init
    samples = np.empty(K)
    flags = np.zeros(K, dtype=bool)
    for i in range(K):
        state, accepted = kernel.step(state, gen)
        samples[i] = state.theta
        flags[i] = accepted
    return ChainTrace(samples, flags, int(burn_in_fraction * K), repr(rng))


def tune_step_scale(make_kernel, rng: RngLike, *, initial_scale: float = 1.0,
                    target: tuple = (0.25, 0.40), probe_steps: int = 200,
                    max_rounds: int = 20) -> float:
    """Pick a random-walk step scale whose acceptance rate hits the target.

    ``make_kernel(step_scale)`` must build a fresh kernel.  Each round runs a
    short probe chain and scales the step up when acceptance is too high,
    down when too low.  Deterministic given the RngStream.
    """
    lo, hi = target
    scale = initial_scale
    shared = None if isinstance(rng, RngStream) else as_generator(rng)
    for round_idx in range(max_rounds):
        child = rng.child(round_idx) if shared is None else shared
        trace = run_chain(make_kernel(scale), None, probe_steps, 0.0, child)
        rate = trace.acceptance_rate
        if lo <= rate <= hi:
            return scale
        scale *= 1.5 if rate > hi else 1 / 1.5
    return scale
