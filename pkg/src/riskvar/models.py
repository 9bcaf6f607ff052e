"""Small differentiable predictors with hand-derived gradients.

Two layouts: a bias-free linear scorer, and a one-hidden-layer
perceptron (dense -> tanh/relu -> dense, with biases).  The logistic
loss is computed in its numerically stable form; a clipped variant caps
the per-example loss at a bound M with zero gradient past the cap, for
settings that require bounded losses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

from .data import DomainDataset
from .errors import InvalidInputError

__all__ = [
    "Linear",
    "MLP",
    "Layout",
    "ModelParams",
    "LogisticLoss",
    "DomainRiskGrad",
    "param_count",
    "init_params",
    "forward",
    "domain_risk_grad",
    "accuracy",
    "save_params",
    "load_params",
]


@dataclass(frozen=True)
class Linear:
    """Bias-free linear scorer: logit = theta . x."""

    d: int

    def __post_init__(self):
        if self.d < 1:
            raise InvalidInputError("need at least one input feature")


@dataclass(frozen=True)
class MLP:
    """One hidden layer: logit = w2 . act(W1 x + b1) + b2."""

    d: int
    hidden: int = 16
    activation: str = "tanh"

    def __post_init__(self):
        if self.d < 1 or self.hidden < 1:
            raise InvalidInputError("need at least one input and one hidden unit")
        if self.activation not in ("tanh", "relu"):
            raise InvalidInputError(f"unknown activation {self.activation!r}")


Layout = Union[Linear, MLP]


def param_count(layout: Layout) -> int:
    if isinstance(layout, Linear):
        return layout.d
    return layout.hidden * layout.d + layout.hidden + layout.hidden + 1


@dataclass
class ModelParams:
    """A layout plus its flat parameter vector."""

    layout: Layout
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.shape != (param_count(self.layout),):
            raise InvalidInputError(
                f"theta length {self.theta.size} does not match layout "
                f"(expected {param_count(self.layout)})"
            )
        if not np.all(np.isfinite(self.theta)):
            raise InvalidInputError("theta contains non-finite entries")

    def copy(self) -> "ModelParams":
        return ModelParams(self.layout, self.theta.copy())


def init_params(layout: Layout, seed: int) -> ModelParams:
    """Symmetric uniform initialization in [-0.1, 0.1] from a seeded stream."""
    rng = np.random.default_rng(seed)
    return ModelParams(layout, rng.uniform(-0.1, 0.1, size=param_count(layout)))


def _unpack_mlp(layout: MLP, theta: np.ndarray):
    h, d = layout.hidden, layout.d
    w1 = theta[: h * d].reshape(h, d)
    b1 = theta[h * d : h * d + h]
    w2 = theta[h * d + h : h * d + 2 * h]
    b2 = theta[-1]
    return w1, b1, w2, b2


def _activate(u: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(u)
    return np.maximum(u, 0.0)


def _activate_grad(u: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        t = np.tanh(u)
        return 1.0 - t * t
    return (u > 0.0).astype(np.float64)


def _sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def forward(params: ModelParams, x) -> float | np.ndarray:
    """Logit for one example (1-D input) or a batch (2-D input)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != params.layout.d:
        raise InvalidInputError(f"input must have {params.layout.d} features")
    if isinstance(params.layout, Linear):
        logits = X @ params.theta
    else:
        w1, b1, w2, b2 = _unpack_mlp(params.layout, params.theta)
        logits = _activate(X @ w1.T + b1, params.layout.activation) @ w2 + b2
    return float(logits[0]) if single else logits


@dataclass(frozen=True)
class LogisticLoss:
    """log(1 + exp(-y~ * logit)) with y~ = 2y - 1; optionally capped at clip."""

    clip: float | None = None

    def __post_init__(self):
        if self.clip is not None and self.clip <= 0:
            raise InvalidInputError("clip bound must be > 0")


class DomainRiskGrad(NamedTuple):
    risk: float
    grad: np.ndarray


def domain_risk_grad(
    params: ModelParams, data: DomainDataset, loss: LogisticLoss = LogisticLoss()
) -> DomainRiskGrad:
    """Mean loss over one domain and its exact gradient in theta."""
    if data.m == 0:
        raise InvalidInputError("empty dataset")
    X = data.features
    y_signed = 2.0 * data.labels - 1.0
    layout = params.layout

    if isinstance(layout, Linear):
        logits = X @ params.theta
    else:
        w1, b1, w2, b2 = _unpack_mlp(layout, params.theta)
        pre = X @ w1.T + b1
        act = _activate(pre, layout.activation)
        logits = act @ w2 + b2

    margins = y_signed * logits
    losses = np.logaddexp(0.0, -margins)
    # d(loss)/d(logit) = -y~ * sigmoid(-margin), stable for both tails
    dlogit = -y_signed * _sigmoid(-margins)
    if loss.clip is not None:
        capped = losses >= loss.clip
        losses = np.minimum(losses, loss.clip)
        dlogit = np.where(capped, 0.0, dlogit)
    m = data.m
    risk = math.fsum(losses) / m

    if isinstance(layout, Linear):
        grad = (dlogit @ X) / m
    else:
        dw2 = (dlogit @ act) / m
        db2 = float(dlogit.sum()) / m
        dpre = (dlogit[:, None] * w2[None, :]) * _activate_grad(pre, layout.activation)
        dw1 = (dpre.T @ X) / m
        db1 = dpre.sum(axis=0) / m
        grad = np.concatenate([dw1.ravel(), db1, dw2, [db2]])
    return DomainRiskGrad(risk, grad)


def accuracy(params: ModelParams, data: DomainDataset) -> float:
    """Fraction of examples whose logit sign matches the label.

    A logit of exactly zero predicts class 0, deterministically.
    """
    if data.m == 0:
        raise InvalidInputError("empty dataset")
    logits = forward(params, data.features)
    pred = (logits > 0.0).astype(np.int64)
    return float((pred == data.labels).mean())


def save_params(params: ModelParams, path) -> None:
    """Write a checkpoint: one layout header line, then one float per line."""
    with open(path, "w", encoding="ascii") as fh:
        if isinstance(params.layout, Linear):
            fh.write(f"linear d={params.layout.d}\n")
        else:
            lay = params.layout
            fh.write(f"mlp d={lay.d} hidden={lay.hidden} activation={lay.activation}\n")
        for v in params.theta:
            fh.write(f"{v:.17g}\n")


def load_params(path) -> ModelParams:
    """Read a checkpoint written by :func:`save_params`."""
    with open(path, encoding="ascii") as fh:
        header = fh.readline().split()
        fields = dict(item.split("=", 1) for item in header[1:])
        if header[0] == "linear":
            layout: Layout = Linear(int(fields["d"]))
        elif header[0] == "mlp":
            layout = MLP(int(fields["d"]), int(fields["hidden"]), fields["activation"])
        else:
            raise InvalidInputError(f"unknown layout {header[0]!r} in {path}")
        theta = np.array([float(line) for line in fh], dtype=np.float64)
    return ModelParams(layout, theta)
