"""Statistic selection for differentially private releases, and samplers for
the posteriors those releases induce."""

from dpselect.core import RngStream, log_sum_exp, sample_weighted, finite_diff_gradient

__version__ = "0.1.0"

__all__ = [
    "RngStream",
    "log_sum_exp",
    "sample_weighted",
    "finite_diff_gradient",
    "__version__",
]
