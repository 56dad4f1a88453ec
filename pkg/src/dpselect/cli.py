"""Config-driven command line front end.

One TOML document describes one experiment; subcommands select the
experiment kind, flags override seed, output directory and thread
count.  Every run writes CSV files plus a provenance file so that a
result can be regenerated from its own output directory.  Outputs are
byte-identical for a fixed (config, seed) pair regardless of --threads.
"""

import argparse
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .core import RngStream
from .diagnostics import (
    SAMPLERS,
    check_sampler_match,
    default_proposal_space,
    iac,
    make_kernel,
    mse_experiment,
    posterior_mean,
    simulate_release,
)
from .fisher import (
    fi_bernoulli_closed,
    fi_gaussian_closed,
    fi_mc_additive,
    fi_mc_exact,
    fi_mc_sequential,
)
from .mcmc import RandomWalkProposal, run_chain, tune_step_scale
from .models import (
    StatisticSpec,
    bernoulli,
    normal_mean,
    normal_variance,
    uniform_width,
)
from .privacy import Mechanism


class ConfigError(ValueError):
    """A config document failed validation."""


KINDS = ("fisher_curve", "release", "mcmc", "mse", "iac")
COMMAND_KINDS = {"fisher": "fisher_curve", "release": "release",
                 "mcmc": "mcmc", "mse": "mse", "iac": "iac"}
ESTIMATORS = ("closed", "mc_additive", "mc_exact", "mc_sequential")

_FAMILIES = {"normal_mean": normal_mean, "normal_variance": normal_variance,
             "uniform_width": uniform_width, "bernoulli": bernoulli}

_MECHANISMS = ("gaussian", "laplace", "laplace_smooth", "randomized_response")

_COMMON_KEYS = {"kind", "model", "support_bound", "seed", "out_dir",
                "threads", "write_plot_script"}
_PER_KIND_KEYS = {
    "fisher_curve": {"statistics", "mechanism", "epsilon", "delta",
                     "theta_grid", "n", "estimator", "outer", "inner"},
    "release": {"statistics", "mechanism", "epsilon", "delta", "theta_star",
                "n", "replicates"},
    "mcmc": {"statistics", "mechanism", "epsilon", "delta", "theta_star", "n",
             "sampler", "N", "K", "mode", "subset_size", "step_scale",
             "burn_in_fraction"},
    "mse": {"statistics", "mechanism", "epsilon", "delta", "theta_star", "n",
            "sampler", "N", "M", "K", "mode", "subset_size", "step_scale",
            "burn_in_fraction"},
    "iac": {"statistics", "mechanism", "epsilon", "delta", "theta_star", "n",
            "samplers", "N_values", "K", "step_scale", "burn_in_fraction"},
}

_COMMON_DEFAULTS = {"model": "normal_variance", "support_bound": 10.0,
                    "seed": 0, "out_dir": ".", "threads": 1,
                    "write_plot_script": False}
_PER_KIND_DEFAULTS = {
    "fisher_curve": {"statistics": ["abs1-mean", "abs2-mean"],
                     "mechanism": "gaussian", "epsilon": [1.0, math.inf],
                     "delta": None, "theta_grid": [0.5, 1.0, 2.0, 3.0, 5.0],
                     "n": 100, "estimator": "closed", "outer": 200,
                     "inner": 200},
    "release": {"statistics": ["abs1-mean"], "mechanism": "gaussian",
                "epsilon": 1.0, "delta": None, "theta_star": 2.0, "n": 100,
                "replicates": 1},
    "mcmc": {"statistics": ["abs1-mean"], "mechanism": "gaussian",
             "epsilon": 1.0, "delta": None, "theta_star": 2.0, "n": 100,
             "sampler": "mh", "N": 10, "K": 10_000, "mode": "full",
             "subset_size": None, "step_scale": None,
             "burn_in_fraction": 0.25},
    "mse": {"statistics": ["abs1-mean"], "mechanism": "gaussian",
            "epsilon": 1.0, "delta": None, "theta_star": 2.0, "n": 100,
            "sampler": "mh", "N": 10, "M": 50, "K": 10_000, "mode": "full",
            "subset_size": None, "step_scale": None,
            "burn_in_fraction": 0.25},
    "iac": {"statistics": ["abs1-mean"], "mechanism": "laplace",
            "epsilon": 1.0, "delta": None, "theta_star": 2.0, "n": 100,
            "samplers": ["mhaar", "pmmh"], "N_values": [2, 5, 10],
            "K": 30_000, "step_scale": None, "burn_in_fraction": 0.25},
}

CONFIG_SCHEMA = """\
dpselect config schema (TOML, flat keys; unknown keys are rejected)

common keys
  kind              required  one of fisher_curve | release | mcmc | mse | iac;
                              must match the subcommand
  model             default "normal_variance"; one of normal_mean |
                              normal_variance | uniform_width | bernoulli
  support_bound     default 10.0; record support half-width (ignored for
                              bernoulli, whose records live on {0,1})
  seed              default 0; master seed (overridden by --seed)
  out_dir           default "."; output directory (overridden by --out-dir)
  threads           default 1; worker threads for independent replicates or
                              grid points; never changes the output bytes
  write_plot_script default false; also emit a gnuplot script per CSV

shared experiment keys
  statistics  list of labels "<map><power>-<aggregator>", e.g. "abs1-mean",
              "abs2-mean", "abs1-median", "abs1-max", "id-seq", "pow2-seq";
              mcmc and iac take exactly one label
  mechanism   gaussian | laplace | laplace_smooth | randomized_response;
              gaussian/laplace pair with the mean aggregator,
              laplace_smooth with median or max, sequential ("-seq")
              statistics with gaussian, laplace or randomized_response
              (randomized_response needs the bernoulli model)
  epsilon     privacy level, positive float or inf; fisher_curve accepts a
              list (default [1.0, inf]); other kinds take a single value
  delta       optional failure probability for smooth-sensitivity noise;
              default 1/n^2
  n           default 100; records per dataset
  theta_star  default 2.0; data-generating parameter (non-fisher kinds)

kind fisher_curve
  theta_grid  default [0.5, 1.0, 2.0, 3.0, 5.0]; evaluation points
  estimator   closed | mc_additive | mc_exact | mc_sequential (default
              closed); closed covers mean+gaussian and the
              bernoulli+randomized_response pair
  outer       default 200; Monte Carlo score replicates (mc_* only)
  inner       default 200; importance draws per replicate (mc_* only)
  output      fisher_curve.csv with header theta,statistic,epsilon,F,se

kind release
  replicates  default 1; independent datasets to release
  output      releases.csv with header replicate,statistic,record,value
              (record is 0 for batch releases, the record index for
              sequential ones)

kind mcmc
  sampler     mh | pmmh | mhaar | latent | sequential (default mh); must
              match the statistic/mechanism pairing above ("mh" also
              requires gaussian noise)
  N           default 10; importance or candidate draws per step
  K           default 10000; chain length (at least 4)
  mode        full | subset (latent sampler only; default full)
  subset_size latent subset mode only; default n/10
  step_scale  optional proposal scale; tuned on a probe chain when absent
  burn_in_fraction  default 0.25
  output      chain.csv (step,theta,accepted) and chain_summary.json

kind mse
  M           default 50; replicate datasets (at least 2)
  plus the mcmc keys above
  output      mse.csv with header label,mse,se,M,n,epsilon,mechanism,sampler,seed

kind iac
  samplers    default ["mhaar", "pmmh"]; chains to compare
  N_values    default [2, 5, 10]; per-step draw counts to sweep
  K           default 30000
  output      iac.csv with header N,algorithm,iac

flags: --config PATH (required), --seed INT, --out-dir PATH, --threads INT,
and a global --print-schema that prints this text.  Exit codes: 0 success,
2 config error, 1 runtime/i-o error.
"""


# ---------------------------------------------------------------------------
# validation helpers
# ---------------------------------------------------------------------------

def _as_int(key, value, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"key {key!r} must be an integer")
    if minimum is not None and value < minimum:
        raise ConfigError(f"key {key!r} must be at least {minimum}")
    return value


def _as_float(key, value, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"key {key!r} must be a number")
    v = float(value)
    if positive and not v > 0:
        raise ConfigError(f"key {key!r} must be positive")
    return v


def _as_epsilon(value):
    if (isinstance(value, bool) or not isinstance(value, (int, float))
            or math.isnan(float(value)) or not float(value) > 0):
        raise ConfigError("epsilon must be positive or inf")
    return float(value)


def _as_choice(key, value, choices):
    if value not in choices:
        raise ConfigError(
            f"key {key!r} must be one of {', '.join(map(str, choices))}; "
            f"got {value!r}")
    return value


def _as_list(key, value):
    if not isinstance(value, list) or not value:
        raise ConfigError(f"key {key!r} must be a non-empty list")
    return value


def _build_model(resolved):
    family = resolved["model"]
    if family == "bernoulli":
        return bernoulli()
    return _FAMILIES[family](resolved["support_bound"])


def _parse_statistics(labels):
    try:
        return tuple(StatisticSpec.from_label(lab) for lab in labels)
    except ValueError as exc:
        raise ConfigError(f"key 'statistics': {exc}") from None


def _check_release_pairing(statistic, mechanism_kind, family):
    """Reject statistic/mechanism/model triples no release supports."""
    agg = statistic.aggregator
    if mechanism_kind == "randomized_response":
        if family != "bernoulli" or agg != "none" \
                or statistic.per_record != "identity":
            raise ConfigError(
                "randomized_response releases the raw bits of a bernoulli "
                f"model (statistic 'id-seq'); got model {family!r} with "
                f"statistic {statistic.label!r}")
    elif mechanism_kind == "laplace_smooth":
        if agg not in ("max", "median"):
            raise ConfigError(
                "laplace_smooth pairs with the max or median aggregator; "
                f"got {statistic.label!r}")
    elif agg not in ("mean", "none"):
        raise ConfigError(
            f"{mechanism_kind} noise pairs with the mean aggregator or a "
            f"sequential statistic; got {statistic.label!r}")


def _check_estimator_pairing(estimator, statistic, mechanism_kind, family):
    agg = statistic.aggregator
    if estimator == "closed":
        ok = (mechanism_kind == "gaussian" and agg == "mean") or (
            mechanism_kind == "randomized_response" and family == "bernoulli")
        detail = ("closed-form values cover mean aggregates under gaussian "
                  "noise and bernoulli randomized response")
    elif estimator == "mc_additive":
        ok = agg == "mean" and mechanism_kind in ("gaussian", "laplace")
        detail = ("mc_additive targets mean aggregates with gaussian or "
                  "laplace noise")
    elif estimator == "mc_exact":
        ok = agg != "none" and mechanism_kind in ("gaussian", "laplace",
                                                  "laplace_smooth")
        detail = "mc_exact targets batch releases"
    else:
        ok = agg == "none"
        detail = "mc_sequential targets per-record releases"
    if not ok:
        raise ConfigError(
            f"estimator {estimator!r} cannot evaluate statistic "
            f"{statistic.label!r} under mechanism {mechanism_kind!r}: "
            f"{detail}")


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment description with every default resolved."""

    kind: str
    resolved: dict

    def model(self):
        return _build_model(self.resolved)

    def statistics(self):
        return _parse_statistics(self.resolved["statistics"])

    def epsilons(self):
        eps = self.resolved["epsilon"]
        return tuple(eps) if isinstance(eps, list) else (eps,)

    def mechanism(self, epsilon=None) -> Mechanism:
        eps = self.epsilons()[0] if epsilon is None else epsilon
        return Mechanism(self.resolved["mechanism"], eps,
                         self.resolved["delta"])


def parse_config(text: str, *, overrides=None) -> ExperimentConfig:
    """Validate a TOML experiment description and resolve all defaults."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from None
    if "kind" not in raw:
        raise ConfigError("missing required key 'kind'")
    kind = _as_choice("kind", raw["kind"], KINDS)
    allowed = _COMMON_KEYS | _PER_KIND_KEYS[kind]
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} for kind {kind!r}")
    resolved = {**_COMMON_DEFAULTS, **_PER_KIND_DEFAULTS[kind], **raw,
                **(overrides or {})}
    resolved["kind"] = kind

    _as_choice("model", resolved["model"], tuple(_FAMILIES))
    resolved["support_bound"] = _as_float(
        "support_bound", resolved["support_bound"], positive=True)
    resolved["seed"] = _as_int("seed", resolved["seed"], minimum=0)
    resolved["threads"] = _as_int("threads", resolved["threads"], minimum=1)
    if not isinstance(resolved["out_dir"], (str, Path)):
        raise ConfigError("key 'out_dir' must be a path string")
    resolved["out_dir"] = str(resolved["out_dir"])
    if not isinstance(resolved["write_plot_script"], bool):
        raise ConfigError("key 'write_plot_script' must be a boolean")
    resolved["n"] = _as_int("n", resolved["n"], minimum=1)

    model = _build_model(resolved)
    stats = _parse_statistics(_as_list("statistics", resolved["statistics"]))
    if kind in ("mcmc", "iac") and len(stats) != 1:
        raise ConfigError(f"kind {kind!r} takes exactly one statistic label")
    mech_kind = _as_choice("mechanism", resolved["mechanism"], _MECHANISMS)
    if isinstance(resolved["epsilon"], list):
        if kind != "fisher_curve":
            raise ConfigError(
                f"kind {kind!r} takes a single epsilon, not a list")
        resolved["epsilon"] = [_as_epsilon(e)
                               for e in _as_list("epsilon",
                                                 resolved["epsilon"])]
    else:
        resolved["epsilon"] = _as_epsilon(resolved["epsilon"])
    if resolved["delta"] is not None:
        d = _as_float("delta", resolved["delta"], positive=True)
        if d >= 1:
            raise ConfigError("key 'delta' must be below 1")
        resolved["delta"] = d
    for st in stats:
        _check_release_pairing(st, mech_kind, resolved["model"])

    if kind == "fisher_curve":
        grid = _as_list("theta_grid", resolved["theta_grid"])
        resolved["theta_grid"] = [_as_float("theta_grid", t) for t in grid]
        for t in resolved["theta_grid"]:
            if not model.contains_theta(t):
                raise ConfigError(
                    f"theta_grid value {t} outside the model domain "
                    f"{model.theta_domain}")
        est = _as_choice("estimator", resolved["estimator"], ESTIMATORS)
        resolved["outer"] = _as_int("outer", resolved["outer"], minimum=2)
        resolved["inner"] = _as_int("inner", resolved["inner"], minimum=1)
        for st in stats:
            _check_estimator_pairing(est, st, mech_kind, resolved["model"])
    else:
        t = _as_float("theta_star", resolved["theta_star"])
        if not model.contains_theta(t):
            raise ConfigError(
                f"theta_star value {t} outside the model domain "
                f"{model.theta_domain}")
        resolved["theta_star"] = t

    if kind == "release":
        resolved["replicates"] = _as_int("replicates",
                                         resolved["replicates"], minimum=1)

    if kind in ("mcmc", "mse"):
        sampler = _as_choice("sampler", resolved["sampler"], SAMPLERS)
        resolved["N"] = _as_int("N", resolved["N"], minimum=1)
        resolved["K"] = _as_int("K", resolved["K"], minimum=4)
        _as_choice("mode", resolved["mode"], ("full", "subset"))
        if resolved["subset_size"] is not None:
            if resolved["mode"] != "subset":
                raise ConfigError(
                    "key 'subset_size' applies only when mode = 'subset'")
            m = _as_int("subset_size", resolved["subset_size"], minimum=1)
            if m >= resolved["n"]:
                raise ConfigError("key 'subset_size' must be below n")
            resolved["subset_size"] = m
        probe = Mechanism(mech_kind, resolved["epsilon"], resolved["delta"])
        for st in stats:
            try:
                check_sampler_match(sampler, st, probe)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if kind == "mse":
            resolved["M"] = _as_int("M", resolved["M"], minimum=2)

    if kind == "iac":
        resolved["N_values"] = [
            _as_int("N_values", v, minimum=1)
            for v in _as_list("N_values", resolved["N_values"])]
        if len(set(resolved["N_values"])) != len(resolved["N_values"]):
            raise ConfigError("key 'N_values' has duplicate entries")
        resolved["K"] = _as_int("K", resolved["K"], minimum=4)
        samplers = _as_list("samplers", resolved["samplers"])
        probe = Mechanism(mech_kind, resolved["epsilon"], resolved["delta"])
        for s in samplers:
            _as_choice("samplers", s, SAMPLERS)
            try:
                check_sampler_match(s, stats[0], probe)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None

    if kind in ("mcmc", "mse", "iac"):
        if resolved["step_scale"] is not None:
            resolved["step_scale"] = _as_float(
                "step_scale", resolved["step_scale"], positive=True)
        b = _as_float("burn_in_fraction", resolved["burn_in_fraction"])
        if not 0.0 <= b < 1.0:
            raise ConfigError("key 'burn_in_fraction' must be in [0, 1)")
        resolved["burn_in_fraction"] = b

    return ExperimentConfig(kind, resolved)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    return format(float(x), ".17g")


def _write_lines(path: Path, lines) -> Path:
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _write_json(path: Path, payload: dict) -> Path:
    with open(path, "w", newline="\n") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _map_jobs(fn, count: int, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, range(count)))
    return [fn(i) for i in range(count)]


# ---------------------------------------------------------------------------
# experiment runners
# ---------------------------------------------------------------------------

def _run_fisher(config: ExperimentConfig, out_dir: Path):
    r = config.resolved
    model, stats = config.model(), config.statistics()
    # jobs are enumerated in output order so each row owns stream (seed, i)
    jobs = sorted(
        (theta, st.label, eps)
        for theta in r["theta_grid"] for st in stats
        for eps in config.epsilons())
    by_label = {st.label: st for st in stats}

    def one(i: int):
        theta, label, eps = jobs[i]
        st = by_label[label]
        mech = config.mechanism(eps)
        if r["estimator"] == "closed":
            if mech.kind == "randomized_response":
                est = fi_bernoulli_closed(theta, r["n"], eps,
                                          "randomized_response")
            else:
                est = fi_gaussian_closed(model, st, r["n"], eps, theta)
        else:
            fn = {"mc_additive": fi_mc_additive, "mc_exact": fi_mc_exact,
                  "mc_sequential": fi_mc_sequential}[r["estimator"]]
            est = fn(model, st, mech, r["n"], theta, r["outer"], r["inner"],
                     RngStream(r["seed"], i))
        return est.value, est.standard_error

    results = _map_jobs(one, len(jobs), r["threads"])
    lines = ["theta,statistic,epsilon,F,se"]
    for (theta, label, eps), (value, se) in zip(jobs, results):
        lines.append(
            f"{_fmt(theta)},{label},{_fmt(eps)},{_fmt(value)},{_fmt(se)}")
    return [_write_lines(out_dir / "fisher_curve.csv", lines)]


def _run_release(config: ExperimentConfig, out_dir: Path):
    r = config.resolved
    model, stats = config.model(), config.statistics()
    mech = config.mechanism()

    def one(i: int):
        rep = RngStream(r["seed"], i)
        rows = []
        for j, st in enumerate(stats):
            y = simulate_release(model, r["theta_star"], st, mech, r["n"],
                                 rep.child(0), rep.child(1 + j))
            if st.aggregator == "none":
                rows.extend((i, st.label, k, v) for k, v in enumerate(y))
            else:
                rows.append((i, st.label, 0, y))
        return rows

    rows = [row for chunk in _map_jobs(one, r["replicates"], r["threads"])
            for row in chunk]
    rows.sort(key=lambda t: (t[0], t[1], t[2]))
    lines = ["replicate,statistic,record,value"]
    lines += [f"{i},{label},{k},{_fmt(v)}" for i, label, k, v in rows]
    return [_write_lines(out_dir / "releases.csv", lines)]


def _tuned_scale(config, build, tune_rng):
    if config.resolved["step_scale"] is not None:
        return config.resolved["step_scale"]
    return tune_step_scale(build, tune_rng)


def _run_mcmc(config: ExperimentConfig, out_dir: Path):
    r = config.resolved
    model, (st,) = config.model(), config.statistics()
    mech = config.mechanism()
    y = simulate_release(model, r["theta_star"], st, mech, r["n"],
                         RngStream(r["seed"], 0), RngStream(r["seed"], 1))
    space = default_proposal_space(model)

    def build(scale):
        return make_kernel(r["sampler"], y, model, st, mech, r["n"],
                           N=r["N"], proposal=RandomWalkProposal(scale, space),
                           mode=r["mode"], subset_size=r["subset_size"])

    scale = _tuned_scale(config, build, RngStream(r["seed"], 2))
    trace = run_chain(build(scale), None, r["K"], r["burn_in_fraction"],
                      RngStream(r["seed"], 3))
    lines = ["step,theta,accepted"]
    lines += [f"{i},{_fmt(t)},{int(a)}"
              for i, (t, a) in enumerate(zip(trace.samples,
                                             trace.accept_flags))]
    chain_path = _write_lines(out_dir / "chain.csv", lines)

    mean, mcse = posterior_mean(trace)
    post = trace.post_burn
    constant = bool(np.all(post == post[0])) if post.size else True
    summary = {
        "posterior_mean": mean,
        "posterior_mcse": mcse,
        "posterior_sd": float(post.std(ddof=1)) if post.size > 1 else 0.0,
        "acceptance_rate": trace.acceptance_rate,
        "iac": None if constant else iac(post),
        "burn_in": trace.burn_in,
        "steps": r["K"],
        "step_scale": scale,
        "sampler": r["sampler"],
        "statistic": st.label,
        "mechanism": mech.kind,
        "epsilon": mech.epsilon,
        "n": r["n"],
        "seed": r["seed"],
    }
    summary_path = _write_json(out_dir / "chain_summary.json", summary)
    return [chain_path, summary_path]


def _run_mse(config: ExperimentConfig, out_dir: Path):
    r = config.resolved
    report = mse_experiment(
        config.model(), r["theta_star"], config.statistics(),
        config.mechanism(), r["sampler"], r["n"], r["M"], r["K"], r["seed"],
        N=r["N"], mode=r["mode"], subset_size=r["subset_size"],
        burn_in_fraction=r["burn_in_fraction"], threads=r["threads"],
        tune=r["step_scale"] is None,
        initial_step=r["step_scale"] if r["step_scale"] is not None else 0.5)
    path = out_dir / "mse.csv"
    with open(path, "w", newline="\n") as fh:
        fh.write(report.to_csv())
    return [path]


def _run_iac(config: ExperimentConfig, out_dir: Path):
    r = config.resolved
    model, (st,) = config.model(), config.statistics()
    mech = config.mechanism()
    y = simulate_release(model, r["theta_star"], st, mech, r["n"],
                         RngStream(r["seed"], 0), RngStream(r["seed"], 1))
    space = default_proposal_space(model)
    samplers = sorted(set(r["samplers"]))
    jobs = sorted((N, s) for N in r["N_values"] for s in samplers)

    # one shared step scale keeps the comparison about the acceptance
    # mechanism rather than the proposal; tune on the first sampler at the
    # largest N, where mixing is best
    def build(scale):
        return make_kernel(samplers[0], y, model, st, mech, r["n"],
                           N=max(r["N_values"]),
                           proposal=RandomWalkProposal(scale, space))

    scale = _tuned_scale(config, build, RngStream(r["seed"], 2))
    proposal = RandomWalkProposal(scale, space)

    def one(i: int):
        N, sampler = jobs[i]
        kern = make_kernel(sampler, y, model, st, mech, r["n"], N=N,
                           proposal=proposal)
        trace = run_chain(kern, None, r["K"], r["burn_in_fraction"],
                          RngStream(r["seed"], 3 + i))
        return iac(trace.post_burn)

    taus = _map_jobs(one, len(jobs), r["threads"])
    lines = ["N,algorithm,iac"]
    lines += [f"{N},{s},{_fmt(tau)}" for (N, s), tau in zip(jobs, taus)]
    return [_write_lines(out_dir / "iac.csv", lines)]


_PLOT_COLUMNS = {"fisher_curve.csv": "1:4", "releases.csv": "1:4",
                 "chain.csv": "1:2", "mse.csv": "0:2", "iac.csv": "1:3"}


def _write_plot_script(csv_path: Path) -> Path:
    cols = _PLOT_COLUMNS.get(csv_path.name, "1:2")
    lines = [
        f"# companion plot for {csv_path.name}",
        "set datafile separator ','",
        "set key autotitle columnhead",
        f"plot '{csv_path.name}' using {cols} with points",
    ]
    return _write_lines(csv_path.with_suffix(".gnuplot"), lines)


_RUNNERS = {"fisher_curve": _run_fisher, "release": _run_release,
            "mcmc": _run_mcmc, "mse": _run_mse, "iac": _run_iac}


def run(config: ExperimentConfig):
    """Execute one experiment; returns the list of files written."""
    out_dir = Path(config.resolved["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    files = _RUNNERS[config.kind](config, out_dir)
    if config.resolved["write_plot_script"]:
        files += [_write_plot_script(p) for p in list(files)
                  if p.suffix == ".csv"]
    files.append(_write_json(out_dir / "provenance.json", {
        "config": config.resolved,
        "seed": config.resolved["seed"],
        "version": __version__,
    }))
    return files


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpselect",
        description="Run private-release experiments from a TOML config.")
    parser.add_argument("--print-schema", action="store_true",
                        help="print the config schema and exit")
    sub = parser.add_subparsers(dest="command",
                                metavar="{fisher,release,mcmc,mse,iac}")
    for name in COMMAND_KINDS:
        p = sub.add_parser(name, help=f"run a {COMMAND_KINDS[name]} config")
        p.add_argument("--config", required=True, help="TOML config path")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out-dir", help="override the output directory")
        p.add_argument("--threads", type=int,
                       help="override the worker thread count")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.print_schema:
        print(CONFIG_SCHEMA, end="")
        return 0
    if args.command is None:
        print("error: a subcommand is required (or --print-schema)",
              file=sys.stderr)
        return 2
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    overrides = {key: value for key, value in
                 (("seed", args.seed), ("out_dir", args.out_dir),
                  ("threads", args.threads)) if value is not None}
    try:
        config = parse_config(text, overrides=overrides)
        expected = COMMAND_KINDS[args.command]
        if config.kind != expected:
            raise ConfigError(
                f"config kind {config.kind!r} does not match subcommand "
                f"{args.command!r} (expected {expected!r})")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        files = run(config)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in files:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
