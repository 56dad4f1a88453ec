"""Chain-quality metrics and the replicate mean-squared-error harness.

`acf` and `iac` quantify how correlated a chain is; `posterior_mean`
turns a trace into an estimate with a Monte Carlo standard error; and
`mse_experiment` measures how well a (statistic, mechanism, sampler)
pipeline recovers a known data-generating parameter over independent
replicates.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import RngStream
from .mcmc import (
    AveragedRatioMH,
    LatentAveragedRatioMH,
    MeanModelMH,
    PseudoMarginalMH,
    RandomWalkProposal,
    SequentialAveragedRatioMH,
    default_prior,
    run_chain,
    tune_step_scale,
)
from .models import PopulationModel, StatisticSpec
from .privacy import (
    Mechanism,
    randomized_response,
    release_batch,
    release_sequential,
)

# window growth constant of the adaptive truncation rule
_WINDOW_FACTOR = 5.0

SAMPLERS = ("mh", "pmmh", "mhaar", "latent", "sequential")

# which (aggregator, mechanism) pairs each sampler can target
_MATCH = {
    "mh": (("mean",), ("gaussian",)),
    "pmmh": (("mean",), ("gaussian", "laplace")),
    "mhaar": (("mean",), ("gaussian", "laplace")),
    "latent": (("mean", "median", "max"),
               ("gaussian", "laplace", "laplace_smooth")),
    "sequential": (("none",), ("gaussian", "laplace", "randomized_response")),
}


def acf(series, max_lag: int):
    """Sample autocorrelations rho(0..max_lag) with 1/T normalization."""
    x = np.asarray(series, dtype=float).ravel()
    if max_lag < 0:
        raise ValueError("max_lag must be non-negative")
    if x.size <= max_lag:
        raise ValueError("series length must exceed max_lag")
    xc = x - x.mean()
    # circular FFT products need padding to at least 2T-1 to stay linear
    nfft = 1 << max(1, int(math.ceil(math.log2(2 * x.size - 1))))
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[: max_lag + 1] / x.size
    if acov[0] <= 0.0:
        raise ValueError("zero variance series has no autocorrelation")
    rho = acov / acov[0]
    rho[0] = 1.0
    return rho


def iac(series) -> float:
    """Integrated autocorrelation time with an adaptive truncation window.

    Returns 1 + 2*sum(rho(1..W)) where W is the smallest lag with
    W >= 5 * tau(W); sums truncated this way stay positive, but the
    result is floored at 1 anyway so downstream error bars never shrink
    below the independent-samples case.
    """
    x = np.asarray(series, dtype=float).ravel()
    rho = acf(x, x.size - 1)
    tau = 1.0 + 2.0 * np.cumsum(rho[1:])
    lags = np.arange(1, x.size)
    hits = np.nonzero(lags >= _WINDOW_FACTOR * tau)[0]
    value = tau[hits[0]] if hits.size else tau[-1]
    return max(1.0, float(value))


def posterior_mean(trace):
    """(mean, MCSE) of a trace's post-burn-in samples.

    Accepts a ChainTrace or a plain 1-d array of retained samples; the
    MCSE inflates the i.i.d. standard error by sqrt(IAC).
    """
    x = trace.post_burn if hasattr(trace, "post_burn") else np.asarray(
        trace, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("trace has no post-burn-in samples")
    mean = float(x.mean())
    if np.all(x == x[0]):
        return mean, 0.0
    sd = float(x.std(ddof=1))
    return mean, sd * math.sqrt(iac(x) / x.size)


def check_sampler_match(sampler: str, statistic: StatisticSpec,
                        mechanism: Mechanism) -> None:
    """Reject (sampler, aggregator, mechanism) triples outside the matching."""
    if sampler not in _MATCH:
        raise ValueError(
            f"unknown sampler {sampler!r}; expected one of {SAMPLERS}")
    aggs, mechs = _MATCH[sampler]
    ok = statistic.aggregator in aggs and mechanism.kind in mechs
    if ok and sampler == "latent":
        # the release-side pairing narrows the latent grid further
        smooth = mechanism.kind == "laplace_smooth"
        ok = smooth == (statistic.aggregator in ("max", "median"))
    if not ok:
        raise ValueError(
            f"sampler {sampler!r} matches aggregator(s) {aggs} with "
            f"mechanism(s) {mechs}; got aggregator "
            f"{statistic.aggregator!r} with mechanism {mechanism.kind!r}")


def make_kernel(sampler: str, y, model: PopulationModel,
                statistic: StatisticSpec, mechanism: Mechanism, n: int, *,
                N: int = 10, prior=None, proposal=None, mode: str = "full",
                subset_size=None):
    """Construct the transition kernel named by `sampler` for a release y."""
    check_sampler_match(sampler, statistic, mechanism)
    if prior is None:
        prior = default_prior(model)
    if proposal is None:
        proposal = RandomWalkProposal(0.5, default_proposal_space(model))
    if sampler == "mh":
        return MeanModelMH(y, model, statistic, n, mechanism.epsilon, prior,
                           proposal)
    if sampler == "pmmh":
        return PseudoMarginalMH(y, model, statistic, mechanism, n, N, prior,
                                proposal)
    if sampler == "mhaar":
        return AveragedRatioMH(y, model, statistic, mechanism, n, N, prior,
                               proposal)
    if sampler == "latent":
        return LatentAveragedRatioMH(y, model, statistic, mechanism, n, N,
                                     prior, proposal, mode, subset_size)
    return SequentialAveragedRatioMH(y, model, statistic, mechanism, N, prior,
                                     proposal)


def default_proposal_space(model: PopulationModel) -> str:
    """Log-space walks suit strictly positive parameter domains."""
    return "log" if model.theta_domain[0] >= 0.0 else "natural"


def simulate_release(model: PopulationModel, theta_star: float,
                     statistic: StatisticSpec, mechanism: Mechanism, n: int,
                     data_rng: RngStream, noise_rng: RngStream):
    """Draw one dataset at theta_star and privatize it."""
    x = model.clamp(model.sample(theta_star, n, data_rng.generator()))
    if statistic.aggregator == "none":
        if mechanism.kind == "randomized_response":
            return randomized_response(x, mechanism.epsilon, noise_rng).value
        return release_sequential(x, statistic, mechanism, model.support,
                                  noise_rng).value
    return release_batch(x, statistic, mechanism, model.support,
                         noise_rng).value


@dataclass(frozen=True)
class MseReport:
    """Replicate-averaged squared error of posterior means, per statistic."""

    labels: tuple
    mse: tuple
    se: tuple
    M: int
    settings: dict = field(default_factory=dict)
    estimates: tuple = ()  # per-label tuple of the M posterior means

    def __post_init__(self):
        if not (len(self.labels) == len(self.mse) == len(self.se)):
            raise ValueError("labels, mse and se must align")
        if any(v < 0 for v in self.mse):
            raise ValueError("MSE cannot be negative")

    def mse_for(self, label: str) -> float:
        return self.mse[self.labels.index(label)]

    def se_for(self, label: str) -> float:
        return self.se[self.labels.index(label)]

    def to_csv(self) -> str:
        header = "label,mse,se,M,n,epsilon,mechanism,sampler,seed"
        s = self.settings
        tail = (f"{self.M},{s.get('n', '')},"
                f"{format(float(s.get('epsilon', math.nan)), '.17g')},"
                f"{s.get('mechanism', '')},{s.get('sampler', '')},"
                f"{s.get('seed', '')}")
        rows = sorted(
            f"{lab},{format(m, '.17g')},{format(e, '.17g')},{tail}"
            for lab, m, e in zip(self.labels, self.mse, self.se))
        return "\n".join([header, *rows]) + "\n"


def mse_experiment(model: PopulationModel, theta_star: float, statistics,
                   mechanism: Mechanism, sampler: str, n: int, M: int, K: int,
                   master_seed: int, *, N: int = 10, mode: str = "full",
                   subset_size=None, burn_in_fraction: float = 0.25,
                   threads: int = 1, tune: bool = True,
                   initial_step: float = 0.5) -> MseReport:
    """Estimate the MSE of the posterior mean for each candidate statistic.

    Every replicate i draws fresh data from the model at theta_star
    (stream (master_seed, i, 0)), releases it through every candidate
    statistic, runs the matched sampler for K steps, and scores the
    squared error of the posterior mean.  Step scales are tuned once per
    statistic on probe releases from streams (master_seed, M + j), so a
    report depends only on the configuration and master_seed.
    """
    stats_t = tuple(statistics)
    if M < 2:
        raise ValueError("M must be at least 2")
    if not stats_t:
        raise ValueError("at least one candidate statistic is required")
    for st in stats_t:
        check_sampler_match(sampler, st, mechanism)
    space = default_proposal_space(model)
    kern_opts = dict(N=N, mode=mode, subset_size=subset_size)

    scales = []
    for j, st in enumerate(stats_t):
        if not tune:
            scales.append(initial_step)
            continue
        probe = RngStream(master_seed, M + j)
        y = simulate_release(model, theta_star, st, mechanism, n,
                             probe.child(0), probe.child(1))

        def build(scale, _y=y, _st=st):
            return make_kernel(sampler, _y, model, _st, mechanism, n,
                               proposal=RandomWalkProposal(scale, space),
                               **kern_opts)

        scales.append(tune_step_scale(build, probe.child(2),
                                      initial_scale=initial_step))

    def one_replicate(i: int):
        rep = RngStream(master_seed, i)
        x = model.clamp(model.sample(theta_star, n, rep.child(0).generator()))
        out = np.empty(len(stats_t))
        for j, st in enumerate(stats_t):
            if st.aggregator == "none":
                if mechanism.kind == "randomized_response":
                    y = randomized_response(x, mechanism.epsilon,
                                            rep.child(1 + j, 0)).value
                else:
                    y = release_sequential(x, st, mechanism, model.support,
                                           rep.child(1 + j, 0)).value
            else:
                y = release_batch(x, st, mechanism, model.support,
                                  rep.child(1 + j, 0)).value
            kern = make_kernel(sampler, y, model, st, mechanism, n,
                               proposal=RandomWalkProposal(scales[j], space),
                               **kern_opts)
            trace = run_chain(kern, None, K, burn_in_fraction,
                              rep.child(1 + j, 1))
            out[j], _ = posterior_mean(trace)
        return out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            estimates = np.vstack(list(pool.map(one_replicate, range(M))))
    else:
        estimates = np.vstack([one_replicate(i) for i in range(M)])

    sq = (estimates - theta_star) ** 2
    return MseReport(
        labels=tuple(st.label for st in stats_t),
        mse=tuple(float(v) for v in sq.mean(axis=0)),
        se=tuple(float(v) for v in sq.std(axis=0, ddof=1) / math.sqrt(M)),
        M=M,
        settings={"theta_star": theta_star, "n": n,
                  "epsilon": mechanism.epsilon, "mechanism": mechanism.kind,
                  "sampler": sampler, "seed": master_seed},
        estimates=tuple(tuple(float(v) for v in col) for col in estimates.T),
    )
