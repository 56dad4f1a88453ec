"""Reproducible random streams and shared numerics.

Everything stochastic in this package draws from an :class:`RngStream`, a
counter-based (Philox) stream keyed by ``(master_seed, stream_id)`` plus an
optional child path.  Two streams with the same key always produce the same
variates, independent of scheduling, which is what makes multi-threaded
experiments byte-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

__all__ = [
    "RngStream",
    "as_generator",
    "log_sum_exp",
    "sample_weighted",
    "finite_diff_gradient",
]


@dataclass(frozen=True)
class RngStream:
    """A named, splittable random stream.

    Parameters
    ----------
    master_seed : int
        Seed shared by every stream of one experiment.
    stream_id : int
        Index of this stream (replicate index, chain index, ...).
    path : tuple of int
        Optional child path for nested derivation; see :meth:`child`.
    """

    master_seed: int
    stream_id: int = 0
    path: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.master_seed < 0 or self.stream_id < 0:
            raise ValueError("master_seed and stream_id must be non-negative")

    def generator(self) -> np.random.Generator:
        """Return a fresh generator positioned at the start of the stream."""
        seq = np.random.SeedSequence(
            self.master_seed, spawn_key=(self.stream_id, *self.path)
        )
        return np.random.Generator(np.random.Philox(seq))

    def child(self, *indices: int) -> "RngStream":
        """Derive an independent sub-stream for a nested unit of work."""
        return RngStream(self.master_seed, self.stream_id, self.path + indices)


RngLike = Union[RngStream, np.random.Generator]


def as_generator(rng: RngLike) -> np.random.Generator:
    """Accept either an RngStream (reset to its start) or a live Generator."""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng)!r}")


def log_sum_exp(log_values, axis=None):
    """log(sum(exp(v))) computed stably; -inf entries contribute zero mass."""
    arr = np.asarray(log_values, dtype=float)
    if arr.size == 0:
        raise ValueError("log_sum_exp of an empty collection")
    m = np.max(arr, axis=axis, keepdims=True)
    # an all--inf slice must come out as -inf, not NaN from inf - inf
    shift = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(arr - shift), axis=axis, keepdims=True)) + shift
    if axis is None:
        return float(out.ravel()[0])
    out = np.squeeze(out, axis=axis)
    return float(out) if np.ndim(out) == 0 else out


def sample_weighted(log_weights, rng: RngLike) -> int:
    """Draw one index with probability proportional to exp(log_weights).

    Weights are normalized in the log domain, so any common offset (for
    example unnormalized log densities) is irrelevant.  Consumes exactly one
    uniform from ``rng``.
    """
    lw = np.asarray(log_weights, dtype=float)
    if lw.ndim != 1 or lw.size == 0:
        raise ValueError("log_weights must be a non-empty 1-d array")
    if np.any(np.isnan(lw)):
        raise ValueError("log_weights contain NaN")
    total = log_sum_exp(lw)
    if not np.isfinite(total):
        raise ValueError("all weights are zero; cannot sample an index")
    cdf = np.cumsum(np.exp(lw - total))
    cdf[-1] = 1.0  # guard the tail against rounding
    u = as_generator(rng).random()
    return int(np.searchsorted(cdf, u, side="right"))


def finite_diff_gradient(f: Callable, theta):
    """Central-difference gradient of ``f`` at ``theta``.

    The step per coordinate is ``max(1e-5, 1e-5 * |theta_i|)``.  ``theta``
    may be a scalar or a 1-d array; the return value matches its shape.
    """
    th = np.asarray(theta, dtype=float)
    scalar = th.ndim == 0
    th = np.atleast_1d(th).copy()
    grad = np.empty_like(th)
    for i in range(th.size):
        h = max(1e-5, 1e-5 * abs(th[i]))
        up = th.copy()
        dn = th.copy()
        up[i] += h
        dn[i] -= h
        if scalar:
            grad[i] = (f(float(up[i])) - f(float(dn[i]))) / (2.0 * h)
        else:
            grad[i] = (f(up) - f(dn)) / (2.0 * h)
    return float(grad[0]) if scalar else grad
