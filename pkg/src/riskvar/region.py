"""Extended uncertainty sets over domain weightings and exact inner maximization.

The region

    Q(alpha, rho) = { q : sum(q) = 1,  q_i >= -alpha,  ||n q - 1||^2 <= rho }

relaxes the probability simplex two ways: entries may go negative down to
-alpha, and a chi-square-style ball caps the distance from the uniform
weighting.  A single radius convention is used everywhere in this module:
feasibility is ``||n q - 1||^2 <= rho``, equivalently
``||q - 1/n||^2 <= rho / n^2``.  Mixing this with the divergence scale
(which differs by a factor n, see :func:`phi_divergence`) is the classic
off-by-n^2 bug; all thresholds below are stated on the norm scale.

Special cases: alpha = -1/n collapses the region to the uniform point
(plain risk averaging); alpha = 0, rho = inf is the worst-domain
(group-DRO) polytope; alpha > 0, rho = inf is the negatively-extrapolated
polytope used by minimax risk extrapolation.

The inner maximization of a linear functional q . r over Q(alpha, rho) is
solved exactly: a Cauchy-Schwarz closed form when the box constraints are
slack, an exhaustive active-set enumeration otherwise.  The enumeration is
exact for the small domain counts this library targets, so it doubles as
the test oracle for the closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import NamedTuple

import numpy as np

from .errors import CapExceededError, DegenerateInputError, InvalidInputError
from .stats import as_risk_vector, mean, sample_std, sample_variance

__all__ = [
    "RobustRegion",
    "InnerMaxResult",
    "SandwichBounds",
    "phi_divergence",
    "covering_radius",
    "exact_alpha_threshold",
    "exact_radius_bound",
    "quasi_dro_max",
    "mmrex_max",
    "sandwich_bounds",
    "active_set_maximum",
]

#: Tolerance for equality constraints (weights summing to one).
EQUALITY_TOL = 1e-10
#: Slack allowed when validating inequality feasibility of a returned argmax.
FEASIBILITY_TOL = 1e-8
#: Default cap on the domain count for the exhaustive active-set solve (2^n sets).
ENUMERATION_CAP = 16


@dataclass(frozen=True)
class RobustRegion:
    """Parameters (alpha, rho, n) of the weighting region Q(alpha, rho).

    ``rho`` is on the norm scale (``||n q - 1||^2 <= rho``) and may be
    ``math.inf``.  The region always contains the uniform weighting.
    """

    alpha: float
    rho: float
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise InvalidInputError("region needs at least 2 domains")
        if not math.isfinite(self.alpha):
            raise InvalidInputError("alpha must be finite")
        if self.alpha < -1.0 / self.n:
            raise InvalidInputError(f"alpha must be >= -1/n = {-1.0 / self.n}")
        if math.isnan(self.rho) or self.rho < 0:
            raise InvalidInputError("rho must be >= 0 (may be inf)")

    def contains(self, q, tol: float = FEASIBILITY_TOL) -> bool:
        """Feasibility check for a weighting under this region."""
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.n,):
            return False
        if abs(math.fsum(q) - 1.0) > max(tol, EQUALITY_TOL):
            return False
        if q.min() < -self.alpha - tol:
            return False
        if math.isfinite(self.rho):
            d = self.n * q - 1.0
            if math.fsum(d * d) > self.rho + tol * max(1.0, self.rho):
                return False
        return True


@dataclass(eq=False)
class InnerMaxResult:
    """Exact maximum of q . r over a region, with its maximizing weighting.

    ``closed_form_valid`` records whether the Cauchy-Schwarz equality
    branch applied (the box constraints were slack at the optimum).
    """

    value: float
    argmax: np.ndarray
    closed_form_valid: bool


class SandwichBounds(NamedTuple):
    lower: float
    mm: float
    upper: float
    rho_star: float


def phi_divergence(q) -> float:
    """Divergence (1/n) * sum_i (n q_i - 1)^2 of a weighting from uniform.

    This is the phi-divergence with generator (x-1)^2 against the uniform
    weighting.  It sits on the divergence scale: a weighting is feasible
    for radius rho exactly when ``n * phi_divergence(q) <= rho``.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1 or q.size < 1:
        raise InvalidInputError("weights must be a nonempty 1-D vector")
    if not np.all(np.isfinite(q)):
        raise InvalidInputError("weights contain non-finite entries")
    if abs(math.fsum(q) - 1.0) > EQUALITY_TOL:
        raise InvalidInputError("weights must sum to 1")
    n = q.size
    d = n * q - 1.0
    return math.fsum(d * d) / n


def covering_radius(n: int, alpha: float) -> float:
    """Smallest rho whose ball contains all of Q(alpha, inf).

    The farthest point of the polytope from uniform is the vertex with one
    coordinate at 1 + (n-1) alpha and the rest clamped at -alpha, giving
    ``n (n-1) (1 + n alpha)^2`` on the norm scale.
    """
    if n < 2:
        raise InvalidInputError("need at least 2 domains")
    if alpha < -1.0 / n:
        raise InvalidInputError(f"alpha must be >= -1/n = {-1.0 / n}")
    return n * (n - 1) * (1.0 + n * alpha) ** 2


def exact_alpha_threshold(risks, rho: float) -> float:
    """Smallest lower-bound offset at which the closed-form maximum is feasible.

    Returns C such that for alpha >= C the unconstrained Cauchy-Schwarz
    maximizer of q . r over the radius-rho ball satisfies every box
    constraint, so the maximum equals mean + sqrt(rho/n) * std exactly:

        C = -1/n + sqrt(rho) * (mean(r) - min(r)) / (n^{3/2} * std(r)).

    Undefined for a constant risk vector (the equality holds trivially
    there; callers must branch before calling).
    """
    r = as_risk_vector(risks, min_len=2)
    if not math.isfinite(rho) or rho < 0:
        raise InvalidInputError("rho must be finite and >= 0")
    n = r.size
    s = sample_std(r)
    if s == 0.0:
        raise DegenerateInputError("threshold undefined for constant risks")
    gap = mean(r) - float(r.min())
    return -1.0 / n + math.sqrt(rho) * gap / (n**1.5 * s)


def exact_radius_bound(risks, alpha: float) -> float:
    """Largest ball radius guaranteed exact for a given lower-bound offset.

    For rho up to

        n (n alpha + 1)^2 * var(r) / (2 * (min(r) - mean(r))^2)

    the closed-form maximum over Q(alpha, rho) is attained.  Undefined
    when the minimum risk equals the mean (constant vector).
    """
    r = as_risk_vector(risks, min_len=2)
    n = r.size
    if alpha < -1.0 / n:
        raise InvalidInputError(f"alpha must be >= -1/n = {-1.0 / n}")
    gap = float(r.min()) - mean(r)
    if gap == 0.0:
        raise DegenerateInputError("radius bound undefined when min equals mean")
    return n * (n * alpha + 1.0) ** 2 * sample_variance(r) / (2.0 * gap * gap)


def _closed_form_argmax(r: np.ndarray, rho: float) -> np.ndarray:
    """Cauchy-Schwarz maximizer 1/n + sqrt(rho/n^2) * (r - mean) / sqrt(n * var)."""
    n = r.size
    dev = r - mean(r)
    scale = math.sqrt(rho / n**2) / math.sqrt(n * sample_variance(r))
    return 1.0 / n + scale * dev


def active_set_maximum(risks, region: RobustRegion, cap: int = ENUMERATION_CAP) -> InnerMaxResult:
    """Exact maximum of q . r by exhaustive active-set enumeration.

    Every subset S of coordinates clamped at -alpha is tried; on the free
    complement the remaining budget of the ball is spent along the
    centered risks (the unique maximizing direction on the slice).  Exact
    for any region, exponential in n; intended for small domain counts
    and as the oracle for the closed-form branch.
    """
    r = as_risk_vector(risks, min_len=2)
    n = r.size
    if region.n != n:
        raise InvalidInputError("region/risks domain count mismatch")
    if not math.isfinite(region.rho):
        raise InvalidInputError("enumeration needs a finite radius; use mmrex_max for rho = inf")
    if n > cap:
        raise CapExceededError(
            f"active-set enumeration over 2^{n} clamp sets exceeds cap {cap}; "
            "raise alpha so the closed form applies, or raise the cap"
        )
    alpha, rho = region.alpha, region.rho
    ball = rho / n**2  # ||q - 1/n||^2 budget
    clamp_cost = (alpha + 1.0 / n) ** 2

    best_val = -math.inf
    best_q: np.ndarray | None = None
    indices = list(range(n))
    for k in range(n):  # |S| = k, leaving at least one free coordinate
        for S in combinations(indices, k):
            free = [i for i in indices if i not in S]
            budget = ball - k * clamp_cost
            if budget < -1e-15:
                continue
            f = len(free)
            t = 1.0 + k * alpha  # mass left for the free coordinates
            center = t / f
            slack = budget - f * (center - 1.0 / n) ** 2
            if slack < -1e-15:
                continue
            radius = math.sqrt(max(slack, 0.0))
            rf = r[free]
            dev = rf - rf.mean()
            norm = math.sqrt(float(dev @ dev))
            q = np.full(n, -alpha)
            if norm > 0.0 and radius > 0.0:
                q[free] = center + radius * dev / norm
            else:
                q[free] = center
            if q[free].min() < -alpha - 1e-12:
                continue  # violates an inactive bound; a larger clamp set covers it
            val = float(q @ r)
            if val > best_val:
                best_val = val
                best_q = q
    assert best_q is not None  # uniform weighting is always feasible
    return InnerMaxResult(best_val, best_q, closed_form_valid=False)


def quasi_dro_max(risks, region: RobustRegion, cap: int = ENUMERATION_CAP) -> InnerMaxResult:
    """Exact maximum of q . r over Q(alpha, rho) with finite rho.

    Three branches:

    * constant risks: the maximum is their common value at the uniform
      weighting, and the closed form holds trivially;
    * alpha at or above :func:`exact_alpha_threshold`: the Cauchy-Schwarz
      maximizer is feasible and the value is mean + sqrt(rho/n) * std;
    * otherwise: exact active-set enumeration.

    The returned argmax is feasibility-checked before returning.
    """
    r = as_risk_vector(risks, min_len=2)
    n = r.size
    if region.n != n:
        raise InvalidInputError("region/risks domain count mismatch")
    if not math.isfinite(region.rho):
        raise InvalidInputError("rho must be finite; use mmrex_max for rho = inf")

    if np.all(r == r[0]):
        result = InnerMaxResult(mean(r), np.full(n, 1.0 / n), closed_form_valid=True)
    else:
        threshold = exact_alpha_threshold(r, region.rho)
        if region.alpha >= threshold:
            q = _closed_form_argmax(r, region.rho)
            value = mean(r) + math.sqrt(region.rho / n) * sample_std(r)
            result = InnerMaxResult(value, q, closed_form_valid=True)
        else:
            result = active_set_maximum(r, region, cap=cap)

    if not region.contains(result.argmax):
        raise AssertionError("internal error: maximizer failed feasibility validation")
    return result


def mmrex_max(risks, alpha: float) -> InnerMaxResult:
    """Exact maximum of q . r over the unbounded-radius region Q(alpha, inf).

    The optimum sits at the vertex concentrating all extrapolated mass on
    the worst domain:

        value = (1 + n alpha) * max(r) - alpha * sum(r),

    with ties broken toward the smallest index so the argmax is
    deterministic.  alpha = 0 recovers the worst-domain risk; alpha = -1/n
    recovers the plain mean.
    """
    r = as_risk_vector(risks, min_len=2)
    n = r.size
    if alpha < -1.0 / n:
        raise InvalidInputError(f"alpha must be >= -1/n = {-1.0 / n}")
    i_star = int(np.argmax(r))  # argmax returns the first maximal index
    value = (1.0 + n * alpha) * float(r[i_star]) - alpha * math.fsum(r)
    q = np.full(n, -alpha)
    q[i_star] = 1.0 + n * alpha - alpha
    return InnerMaxResult(value, q, closed_form_valid=True)


def sandwich_bounds(risks, alpha: float) -> SandwichBounds:
    """Bracket the unbounded-radius maximum between two closed forms.

    Returns (lower, mm, upper, rho_star) where

        lower = mean + sqrt(rho_minus / n) * std   (rho_minus from
                :func:`exact_radius_bound`),
        mm    = the exact maximum over Q(alpha, inf),
        upper = mean + sqrt(rho_plus / n) * std    (rho_plus from
                :func:`covering_radius`),

    and rho_star = n * ((mm - mean) / std)^2 is the unique radius whose
    closed form reproduces mm exactly.  Always lower <= mm <= upper and
    rho_minus <= rho_star <= rho_plus.
    """
    r = as_risk_vector(risks, min_len=2)
    n = r.size
    if alpha <= -1.0 / n:
        raise InvalidInputError("sandwich needs alpha > -1/n")
    s = sample_std(r)
    if s == 0.0:
        raise DegenerateInputError("sandwich undefined for constant risks")
    mu = mean(r)
    rho_minus = exact_radius_bound(r, alpha)
    rho_plus = covering_radius(n, alpha)
    mm = mmrex_max(r, alpha).value
    lower = mu + math.sqrt(rho_minus / n) * s
    upper = mu + math.sqrt(rho_plus / n) * s
    rho_star = n * ((mm - mu) / s) ** 2
    return SandwichBounds(lower, mm, upper, rho_star)
