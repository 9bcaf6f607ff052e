"""Scalar statistics over per-domain and pooled risks.

The central quantity is the biased (1/n-normalized) sample variance of a
risk vector,

    s2(r) = (1/n) * || r - mean(r) * 1 ||^2,

never the Bessel-corrected 1/(n-1) form: every downstream bound and
objective in this package is stated with the 1/n normalizer.  Sums are
accumulated with exact compensated summation (``math.fsum``) so that the
between/within decomposition identity holds to ~1e-15 relative even for
a million pooled losses.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .errors import DegenerateInputError, InvalidInputError

__all__ = [
    "as_risk_vector",
    "mean",
    "sample_variance",
    "sample_std",
    "variance_decomposition",
    "VarianceDecomposition",
]


def as_risk_vector(values, min_len: int = 1, bound: float | None = None) -> np.ndarray:
    """Validate and return a 1-D float64 risk vector.

    ``bound`` optionally enforces values in [0, bound].
    """
    r = np.asarray(values, dtype=np.float64)
    if r.ndim != 1:
        raise InvalidInputError(f"risk vector must be 1-D, got shape {r.shape}")
    if r.size < min_len:
        raise InvalidInputError(f"risk vector needs at least {min_len} entries, got {r.size}")
    if not np.all(np.isfinite(r)):
        raise InvalidInputError("risk vector contains non-finite entries")
    if bound is not None and (r.min(initial=0.0) < 0.0 or r.max(initial=0.0) > bound):
        raise InvalidInputError(f"risk values must lie in [0, {bound}]")
    return r


def mean(values) -> float:
    """Arithmetic mean of a risk vector (compensated summation)."""
    r = as_risk_vector(values, min_len=1)
    return math.fsum(r) / r.size


def sample_variance(values) -> float:
    """1/n-normalized sample variance of per-domain risks.

    Requires at least two domains; a spread over fewer is meaningless for
    every objective built on it.
    """
    r = as_risk_vector(values, min_len=1)
    if r.size < 2:
        raise DegenerateInputError("sample variance needs at least 2 domains")
    dev = r - math.fsum(r) / r.size
    return math.fsum(dev * dev) / r.size


def sample_std(values) -> float:
    """Square root of :func:`sample_variance`."""
    return math.sqrt(sample_variance(values))


class VarianceDecomposition(NamedTuple):
    total: float
    within_mean: float
    between: float


def variance_decomposition(per_domain_losses) -> VarianceDecomposition:
    """Split the pooled loss variance into within- and between-domain parts.

    For n domains of m losses each:

      total       = 1/(nm)-normalized variance over all nm losses,
      within_mean = (1/n) * sum_e [ 1/m-normalized variance inside domain e ],
      between     = 1/n-normalized variance of the n domain means,

    and ``between == total - within_mean`` holds as an exact identity (to
    accumulation precision).  Domains must have equal size; ragged inputs
    are rejected rather than silently reweighted, because the identity is
    only valid for equal m.
    """
    rows = list(per_domain_losses)
    if len(rows) < 2:
        raise DegenerateInputError("decomposition needs at least 2 domains")
    arrays = [np.asarray(row, dtype=np.float64) for row in rows]
    m = arrays[0].size
    for a in arrays:
        if a.ndim != 1 or a.size != m:
            raise InvalidInputError("all domains must hold the same number of losses")
        if not np.all(np.isfinite(a)):
            raise InvalidInputError("losses contain non-finite entries")
    if m < 2:
        raise DegenerateInputError("decomposition needs at least 2 losses per domain")

    n = len(arrays)
    pooled = np.concatenate(arrays)
    pooled_mean = math.fsum(pooled) / (n * m)
    dev = pooled - pooled_mean
    total = math.fsum(dev * dev) / (n * m)

    domain_means = []
    within = []
    for a in arrays:
        mu = math.fsum(a) / m
        domain_means.append(mu)
        d = a - mu
        within.append(math.fsum(d * d) / m)
    within_mean = math.fsum(within) / n
    between = sample_variance(domain_means)
    return VarianceDecomposition(total, within_mean, between)
