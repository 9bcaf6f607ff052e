"""The catalogue of multi-domain training objectives.

Each objective maps the vector of per-domain empirical risks to a scalar;
the companion gradient function returns d(objective)/d(risks), the vector
chained against per-domain parameter gradients by the trainer.

  erm        weighted (default uniform) average of the risks
  gdro       worst single-domain risk
  vrex       mean + beta * variance of the risks
  mmrex      exact maximum over the negatively-extrapolated polytope
  quasi_dro  exact maximum over a (lower-bound, radius) region
  rvp        mean + lam * standard deviation of the risks
  elastic    sum of squared risks minus a scheduled multiple of their sum

The standard-deviation penalty of ``rvp`` is nondifferentiable where all
risks coincide -- exactly the invariance optimum -- so its gradient takes
subgradient zero there, with an optional smoothed penalty
sqrt(var + eps^2) for trainers that want a C^1 objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, InvalidInputError
from .region import RobustRegion, mmrex_max, quasi_dro_max, sandwich_bounds
from .stats import as_risk_vector, mean, sample_std, sample_variance

__all__ = [
    "LambdaSchedule",
    "Objective",
    "objective_value",
    "objective_risk_gradient",
    "rvp_equals_mmrex_witness",
    "KINDS",
]

KINDS = ("erm", "gdro", "vrex", "mmrex", "quasi_dro", "rvp", "elastic")

#: Below this spread the rvp penalty gradient is taken as zero (subgradient
#: at the kink).
SPREAD_FLOOR = 1e-12


@dataclass(frozen=True)
class LambdaSchedule:
    """Step schedule for the elastic coefficient: ((epoch_start, value), ...).

    Epoch starts must be strictly increasing and begin at 0.
    """

    steps: tuple[tuple[int, float], ...]

    def __post_init__(self):
        if not self.steps:
            raise InvalidInputError("schedule needs at least one step")
        starts = [int(e) for e, _ in self.steps]
        if starts[0] != 0:
            raise InvalidInputError("first schedule step must start at epoch 0")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise InvalidInputError("schedule epoch starts must be strictly increasing")

    def value_at(self, epoch: int) -> float:
        lam = self.steps[0][1]
        for start, value in self.steps:
            if epoch >= start:
                lam = value
        return float(lam)


@dataclass(frozen=True)
class Objective:
    """Tagged choice of training objective with its hyperparameters."""

    kind: str
    beta: float | None = None
    alpha: float | None = None
    rho: float | None = None
    lam: float | None = None
    schedule: LambdaSchedule | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown objective kind {self.kind!r}")

    @classmethod
    def erm(cls) -> "Objective":
        return cls("erm")

    @classmethod
    def gdro(cls) -> "Objective":
        return cls("gdro")

    @classmethod
    def vrex(cls, beta: float) -> "Objective":
        if beta < 0:
            raise InvalidInputError("vrex beta must be >= 0")
        return cls("vrex", beta=float(beta))

    @classmethod
    def mmrex(cls, alpha: float) -> "Objective":
        return cls("mmrex", alpha=float(alpha))

    @classmethod
    def quasi_dro(cls, alpha: float, rho: float) -> "Objective":
        if rho < 0:
            raise InvalidInputError("quasi_dro rho must be >= 0")
        return cls("quasi_dro", alpha=float(alpha), rho=float(rho))

    @classmethod
    def rvp(cls, lam: float) -> "Objective":
        if lam < 0:
            raise InvalidInputError("rvp lambda must be >= 0")
        return cls("rvp", lam=float(lam))

    @classmethod
    def elastic(cls, schedule: LambdaSchedule) -> "Objective":
        return cls("elastic", schedule=schedule)

    def label(self) -> str:
        """Short human-readable tag, e.g. ``rvp(lam=100)``."""
        if self.kind == "vrex":
            return f"vrex(beta={self.beta:g})"
        if self.kind == "mmrex":
            return f"mmrex(alpha={self.alpha:g})"
        if self.kind == "quasi_dro":
            return f"quasi_dro(alpha={self.alpha:g},rho={self.rho:g})"
        if self.kind == "rvp":
            return f"rvp(lam={self.lam:g})"
        if self.kind == "elastic":
            inner = ",".join(f"{e}:{v:g}" for e, v in self.schedule.steps)
            return f"elastic({inner})"
        return self.kind


def _erm_weights(n: int, weights) -> np.ndarray:
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,) or not np.all(np.isfinite(w)) or w.min() < 0:
        raise InvalidInputError("erm weights must be n nonnegative reals")
    if abs(math.fsum(w) - 1.0) > 1e-10:
        raise InvalidInputError("erm weights must sum to 1")
    return w


def _penalized_spread(r: np.ndarray, smooth_eps: float) -> float:
    s2 = sample_variance(r)
    if smooth_eps > 0.0:
        return math.sqrt(s2 + smooth_eps * smooth_eps)
    return math.sqrt(s2)


def objective_value(
    obj: Objective,
    risks,
    epoch: int = 0,
    *,
    erm_weights=None,
    smooth_eps: float = 0.0,
) -> float:
    """Scalar objective at the given per-domain risks.

    ``epoch`` matters only for the elastic schedule; ``erm_weights``
    supplies unequal domain sizes (m_e / sum m_e) for erm; ``smooth_eps``
    selects the smoothed rvp penalty.
    """
    r = as_risk_vector(risks, min_len=1)
    if obj.kind == "erm":
        return float(_erm_weights(r.size, erm_weights) @ r)
    if obj.kind == "gdro":
        return float(r.max())
    if obj.kind == "vrex":
        return mean(r) + obj.beta * sample_variance(r)
    if obj.kind == "rvp":
        return mean(r) + obj.lam * _penalized_spread(r, smooth_eps)
    if obj.kind == "mmrex":
        return mmrex_max(r, obj.alpha).value
    if obj.kind == "quasi_dro":
        return quasi_dro_max(r, RobustRegion(obj.alpha, obj.rho, r.size)).value
    if obj.kind == "elastic":
        lam = obj.schedule.value_at(epoch)
        return float(r @ r) - lam * math.fsum(r)
    raise InvalidInputError(f"unknown objective kind {obj.kind!r}")


def objective_risk_gradient(
    obj: Objective,
    risks,
    epoch: int = 0,
    *,
    erm_weights=None,
    smooth_eps: float = 0.0,
) -> np.ndarray:
    """d(objective)/d(risks) as a length-n vector.

    The max-type objectives (gdro, mmrex, quasi_dro) return the
    maximizing weighting, the standard envelope subgradient; ties break
    toward the smallest index.
    """
    r = as_risk_vector(risks, min_len=1)
    n = r.size
    if obj.kind == "erm":
        return _erm_weights(n, erm_weights)
    if obj.kind == "gdro":
        g = np.zeros(n)
        g[int(np.argmax(r))] = 1.0
        return g
    if obj.kind == "vrex":
        dev = r - mean(r)
        return 1.0 / n + obj.beta * 2.0 * dev / n
    if obj.kind == "rvp":
        dev = r - mean(r)
        if smooth_eps > 0.0:
            s = _penalized_spread(r, smooth_eps)
            return 1.0 / n + obj.lam * dev / (n * s)
        s = sample_std(r)
        if s < SPREAD_FLOOR:
            return np.full(n, 1.0 / n)
        return 1.0 / n + obj.lam * dev / (n * s)
    if obj.kind == "mmrex":
        return mmrex_max(r, obj.alpha).argmax
    if obj.kind == "quasi_dro":
        return quasi_dro_max(r, RobustRegion(obj.alpha, obj.rho, n)).argmax
    if obj.kind == "elastic":
        lam = obj.schedule.value_at(epoch)
        return 2.0 * r - lam
    raise InvalidInputError(f"unknown objective kind {obj.kind!r}")


def rvp_equals_mmrex_witness(risks, alpha: float) -> tuple[float, float]:
    """Exhibit the deviation-penalty coefficient matching the polytope maximum.

    Returns (lambda_star, residual): lambda_star = sqrt(rho_star / n) from
    the sandwich radius, and residual the absolute difference between the
    rvp objective at lambda_star and the exact maximum over
    Q(alpha, inf).  The residual is zero up to rounding for every
    non-constant risk vector.
    """
    r = as_risk_vector(risks, min_len=2)
    if alpha <= -1.0 / r.size:
        raise InvalidInputError("witness needs alpha > -1/n")
    if sample_std(r) == 0.0:
        raise DegenerateInputError("witness undefined for constant risks")
    bounds = sandwich_bounds(r, alpha)
    lambda_star = math.sqrt(bounds.rho_star / r.size)
    value = objective_value(Objective.rvp(lambda_star), r)
    return lambda_star, abs(value - bounds.mm)
