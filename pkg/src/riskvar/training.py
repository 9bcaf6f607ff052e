"""Gradient training of any objective over multiple domains, with grid
evaluation and out-of-distribution metrics.

The parameter gradient chains the objective's risk-gradient through each
domain's analytic risk gradient:

    d(objective)/d(theta) = sum_e  g_e * d(risk_e)/d(theta),

so max-type objectives train on their envelope subgradient and the
variance/deviation penalties on their exact gradients.  Training is
plain (full-batch by default) gradient descent; every run is
deterministic given its seed.

The headline OOD metric is the best worst-domain test accuracy observed
at the evaluation cadence during the run.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .data import DomainDataset
from .errors import InvalidInputError
from .models import (
    Layout,
    Linear,
    LogisticLoss,
    MLP,
    ModelParams,
    accuracy,
    domain_risk_grad,
    init_params,
)
from .objectives import LambdaSchedule, Objective, objective_risk_gradient, objective_value
from .stats import sample_std

__all__ = [
    "TrainConfig",
    "EpochRecord",
    "EvalRecord",
    "TrainReport",
    "train",
    "evaluate_grid",
    "elastic_probe",
    "save_report",
    "load_report",
]

_NEEDS_TWO_DOMAINS = ("vrex", "rvp", "mmrex", "quasi_dro")


@dataclass(frozen=True)
class TrainConfig:
    objective: Objective
    epochs: int
    learning_rate: float
    seed: int
    batch_size: int | None = None  # None = full batch
    smoothing: float = 0.0  # smoothed-penalty epsilon; 0 = subgradient
    report_every: int = 5
    layout: Layout | None = None  # None = bias-free linear on the data's features
    loss: LogisticLoss = field(default_factory=LogisticLoss)
    checkpoint_epochs: tuple[int, ...] = ()

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidInputError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise InvalidInputError("learning rate must be > 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise InvalidInputError("batch size must be >= 1")
        if self.report_every < 1:
            raise InvalidInputError("report_every must be >= 1")
        if self.smoothing < 0:
            raise InvalidInputError("smoothing epsilon must be >= 0")


class EpochRecord(NamedTuple):
    epoch: int
    risks: tuple[float, ...]
    spread: float
    objective: float


class EvalRecord(NamedTuple):
    epoch: int
    per_domain_acc: tuple[float, ...]
    worst: float


@dataclass
class TrainReport:
    per_epoch: list[EpochRecord]
    evals: list[EvalRecord]
    checkpoints: dict[int, ModelParams]
    best_epoch: int
    best_worst_acc: float
    per_domain_acc_at_best: tuple[float, ...]
    final_params: ModelParams

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrainReport):
            return NotImplemented
        return (
            self.per_epoch == other.per_epoch
            and self.evals == other.evals
            and self.best_epoch == other.best_epoch
            and self.best_worst_acc == other.best_worst_acc
            and self.per_domain_acc_at_best == other.per_domain_acc_at_best
            and sorted(self.checkpoints) == sorted(other.checkpoints)
            and all(
                self.checkpoints[e].layout == other.checkpoints[e].layout
                and np.array_equal(self.checkpoints[e].theta, other.checkpoints[e].theta)
                for e in self.checkpoints
            )
            and self.final_params.layout == other.final_params.layout
            and np.array_equal(self.final_params.theta, other.final_params.theta)
        )


def evaluate_grid(params: ModelParams, grid: Sequence[DomainDataset]) -> tuple[tuple[float, ...], float]:
    """Per-domain accuracies over the grid and their minimum."""
    if not grid:
        raise InvalidInputError("evaluation grid is empty")
    accs = tuple(accuracy(params, d) for d in grid)
    return accs, min(accs)


def _erm_weights(domains: Sequence[DomainDataset]) -> np.ndarray:
    sizes = np.array([d.m for d in domains], dtype=np.float64)
    return sizes / sizes.sum()


def train(
    config: TrainConfig,
    train_domains: Sequence[DomainDataset],
    eval_grid: Sequence[DomainDataset],
) -> TrainReport:
    """Gradient-descend the configured objective; track risks and OOD accuracy.

    Risks, spread, and objective are recorded at the reporting cadence
    (and at epoch 0 and the final epoch); the grid is evaluated at the
    same cadence, excluding the untrained epoch-0 model.  Checkpoints are
    snapshots after the named number of epochs.
    """
    if not train_domains:
        raise InvalidInputError("need at least one training domain")
    if not eval_grid:
        raise InvalidInputError("evaluation grid is empty")
    n = len(train_domains)
    if n < 2 and config.objective.kind in _NEEDS_TWO_DOMAINS:
        raise InvalidInputError(
            f"objective {config.objective.kind!r} needs at least 2 training domains"
        )
    d = train_domains[0].d
    layout = config.layout if config.layout is not None else Linear(d)
    params = init_params(layout, config.seed)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    weights = _erm_weights(train_domains)

    def risk_grads(model: ModelParams, datasets: Sequence[DomainDataset]):
        pairs = [domain_risk_grad(model, ds, config.loss) for ds in datasets]
        risks = np.array([p.risk for p in pairs])
        grads = np.stack([p.grad for p in pairs])
        return risks, grads

    def objective_at(risks: np.ndarray, epoch: int) -> float:
        return objective_value(
            config.objective, risks, epoch, erm_weights=weights, smooth_eps=config.smoothing
        )

    def step(model: ModelParams, datasets: Sequence[DomainDataset], epoch: int) -> None:
        risks, grads = risk_grads(model, datasets)
        g = objective_risk_gradient(
            config.objective, risks, epoch, erm_weights=weights, smooth_eps=config.smoothing
        )
        model.theta -= config.learning_rate * (g @ grads)

    per_epoch: list[EpochRecord] = []
    evals: list[EvalRecord] = []
    checkpoints: dict[int, ModelParams] = {}
    best: EvalRecord | None = None

    def record_state(epoch: int) -> None:
        risks, _ = risk_grads(params, train_domains)
        spread = sample_std(risks) if n >= 2 else 0.0
        per_epoch.append(EpochRecord(epoch, tuple(risks), spread, objective_at(risks, epoch)))

    def evaluate(epoch: int) -> None:
        nonlocal best
        accs, worst = evaluate_grid(params, eval_grid)
        rec = EvalRecord(epoch, accs, worst)
        evals.append(rec)
        if best is None or rec.worst > best.worst:
            best = rec

    record_state(0)
    if 0 in config.checkpoint_epochs:
        checkpoints[0] = params.copy()
    for epoch in range(config.epochs):
        if config.batch_size is None:
            step(params, train_domains, epoch)
        else:
            for batch in _minibatches(train_domains, config.batch_size, rng):
                step(params, batch, epoch)
        done = epoch + 1  # completed epochs
        if done in config.checkpoint_epochs:
            checkpoints[done] = params.copy()
        if done % config.report_every == 0 or done == config.epochs:
            record_state(done)
            evaluate(done)

    assert best is not None
    return TrainReport(
        per_epoch=per_epoch,
        evals=evals,
        checkpoints=checkpoints,
        best_epoch=best.epoch,
        best_worst_acc=best.worst,
        per_domain_acc_at_best=best.per_domain_acc,
        final_params=params,
    )


def _minibatches(domains: Sequence[DomainDataset], size: int, rng: np.random.Generator):
    """Aligned minibatch views across domains, reshuffled each epoch."""
    orders = [rng.permutation(d.m) for d in domains]
    n_batches = max(math.ceil(d.m / size) for d in domains)
    for b in range(n_batches):
        batch = []
        for ds, order in zip(domains, orders):
            idx = order[b * size : (b + 1) * size]
            if idx.size == 0:  # smaller domain exhausted: wrap around
                idx = order[: min(size, ds.m)]
            batch.append(DomainDataset(ds.features[idx], ds.labels[idx], ds.spec))
        yield batch


def elastic_probe(
    config: TrainConfig,
    train_domains: Sequence[DomainDataset],
    eval_grid: Sequence[DomainDataset],
) -> TrainReport:
    """Train the elastic objective, checkpointing at its phase boundaries.

    Per-domain training risks drift toward half the active coefficient
    within each phase; the per-epoch records track that (it is reported,
    not asserted).  Default checkpoints: each later phase start and one
    equal phase-length past it.
    """
    if config.objective.kind != "elastic":
        raise InvalidInputError("elastic_probe needs an elastic objective")
    if not config.checkpoint_epochs:
        schedule: LambdaSchedule = config.objective.schedule
        marks: list[int] = []
        for start, _ in schedule.steps[1:]:
            marks.append(start)
            marks.append(min(2 * start, config.epochs))
        config = TrainConfig(
            objective=config.objective,
            epochs=config.epochs,
            learning_rate=config.learning_rate,
            seed=config.seed,
            batch_size=config.batch_size,
            smoothing=config.smoothing,
            report_every=config.report_every,
            layout=config.layout,
            loss=config.loss,
            checkpoint_epochs=tuple(dict.fromkeys(marks)),
        )
    return train(config, train_domains, eval_grid)


# ---------------------------------------------------------------------------
# Report serialization (line-delimited records)
# ---------------------------------------------------------------------------


def _params_to_obj(params: ModelParams) -> dict:
    if isinstance(params.layout, Linear):
        layout = {"kind": "linear", "d": params.layout.d}
    else:
        lay = params.layout
        layout = {"kind": "mlp", "d": lay.d, "hidden": lay.hidden, "activation": lay.activation}
    return {"layout": layout, "theta": [float(v) for v in params.theta]}


def _params_from_obj(obj: dict) -> ModelParams:
    lay = obj["layout"]
    layout: Layout = (
        Linear(lay["d"])
        if lay["kind"] == "linear"
        else MLP(lay["d"], lay["hidden"], lay["activation"])
    )
    return ModelParams(layout, np.array(obj["theta"], dtype=np.float64))


def save_report(report: TrainReport, path) -> None:
    """Write one JSON record per line: epochs, evals, checkpoints, summary."""
    with open(path, "w", encoding="ascii") as fh:
        for rec in report.per_epoch:
            fh.write(json.dumps({
                "record": "epoch", "epoch": rec.epoch, "risks": list(rec.risks),
                "spread": rec.spread, "objective": rec.objective,
            }) + "\n")
        for ev in report.evals:
            fh.write(json.dumps({
                "record": "eval", "epoch": ev.epoch,
                "per_domain_acc": list(ev.per_domain_acc), "worst": ev.worst,
            }) + "\n")
        for epoch in sorted(report.checkpoints):
            fh.write(json.dumps({
                "record": "checkpoint", "epoch": epoch,
                **_params_to_obj(report.checkpoints[epoch]),
            }) + "\n")
        fh.write(json.dumps({
            "record": "summary", "best_epoch": report.best_epoch,
            "best_worst_acc": report.best_worst_acc,
            "per_domain_acc_at_best": list(report.per_domain_acc_at_best),
            "final": _params_to_obj(report.final_params),
        }) + "\n")


def load_report(path) -> TrainReport:
    """Read a report written by :func:`save_report`."""
    per_epoch: list[EpochRecord] = []
    evals: list[EvalRecord] = []
    checkpoints: dict[int, ModelParams] = {}
    summary: dict | None = None
    with open(path, encoding="ascii") as fh:
        for line in fh:
            obj = json.loads(line)
            kind = obj["record"]
            if kind == "epoch":
                per_epoch.append(EpochRecord(
                    obj["epoch"], tuple(obj["risks"]), obj["spread"], obj["objective"]
                ))
            elif kind == "eval":
                evals.append(EvalRecord(obj["epoch"], tuple(obj["per_domain_acc"]), obj["worst"]))
            elif kind == "checkpoint":
                checkpoints[obj["epoch"]] = _params_from_obj(obj)
            elif kind == "summary":
                summary = obj
            else:
                raise InvalidInputError(f"unknown record type {kind!r} in {path}")
    if summary is None:
        raise InvalidInputError(f"report {path} has no summary record")
    return TrainReport(
        per_epoch=per_epoch,
        evals=evals,
        checkpoints=checkpoints,
        best_epoch=summary["best_epoch"],
        best_worst_acc=summary["best_worst_acc"],
        per_domain_acc_at_best=tuple(summary["per_domain_acc_at_best"]),
        final_params=_params_from_obj(summary["final"]),
    )
